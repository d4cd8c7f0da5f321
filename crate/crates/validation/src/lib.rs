//! Holds no code; the acceptance criteria live in `tests/acceptance.rs`.
