#![no_main]

use libfuzzer_sys::fuzz_target;
use ntklab::network::{decode_weights, encode_weights};

fuzz_target!(|data: &[u8]| {
    if let Ok(w) = decode_weights(data) {
        assert!(w.is_finite());
        assert_eq!(decode_weights(&encode_weights(&w)).unwrap(), w);
    }
});
