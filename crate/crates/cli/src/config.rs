//! Per-subcommand JSON configs. Values resolve as flags > file > defaults.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenignConfig {
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub depth: usize,
    pub width: usize,
    pub eta: f64,
    pub mu_norm: f64,
    pub c_norm: f64,
    pub alpha: f64,
    pub epochs: usize,
    pub n_test: usize,
    pub n_margin: usize,
    pub trace_every: usize,
    /// Training stops once the training 0-1 error reaches this value.
    pub train_target: f64,
    /// The run passes when the noisy-label test error is within `eta + noisy_slack`.
    pub noisy_slack: f64,
    pub lipschitz_probes: usize,
}

impl Default for BenignConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n: 512,
            d: 64,
            depth: 3,
            width: 1024,
            eta: 0.1,
            mu_norm: 3.0,
            c_norm: 1.0,
            alpha: 0.002,
            epochs: 200,
            n_test: 4000,
            n_margin: 2048,
            trace_every: 128,
            train_target: 0.01,
            noisy_slack: 0.08,
            lipschitz_probes: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinEigConfig {
    pub seed: u64,
    /// `(n, d)` cells.
    pub cells: Vec<(usize, usize)>,
    pub depths: Vec<usize>,
    pub seeds: usize,
    pub trend_d: f64,
    pub trend_points: usize,
    pub trend_n_min: f64,
    /// The trend grid ends at `trend_n_max_factor · trend_d`.
    pub trend_n_max_factor: f64,
}

impl Default for MinEigConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            cells: vec![(256, 32), (64, 64), (32, 256)],
            depths: vec![2, 3],
            seeds: 10,
            trend_d: 100.0,
            trend_points: 50,
            trend_n_min: 1.0,
            trend_n_max_factor: 64.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergeConfig {
    pub seed: u64,
    pub widths: Vec<usize>,
    pub n_points: usize,
    pub d: usize,
    pub depth: usize,
    pub seeds: usize,
    /// Largest accepted median relative deviation at the last width.
    pub max_rel_dev: f64,
}

impl Default for ConvergeConfig {
    fn default() -> Self {
        Self { seed: 0, widths: vec![512, 2048, 8192], n_points: 32, d: 16, depth: 2, seeds: 10, max_rel_dev: 0.05 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Idx,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssumptionConfig {
    pub seed: u64,
    pub source: DataSource,
    pub images: PathBuf,
    pub labels: PathBuf,
    pub per_class: usize,
    pub depth: usize,
    pub synthetic_n: usize,
    pub synthetic_d: usize,
    pub seeds: usize,
    /// Permute labels before computing class statistics (null control).
    pub shuffle_labels: bool,
    pub min_dominant: usize,
}

impl Default for AssumptionConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            source: DataSource::Synthetic,
            images: PathBuf::from("data/mnist-subset/images-idx3-ubyte"),
            labels: PathBuf::from("data/mnist-subset/labels-idx1-ubyte"),
            per_class: 100,
            depth: 2,
            synthetic_n: 4000,
            synthetic_d: 8,
            seeds: 10,
            shuffle_labels: false,
            min_dominant: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskConfig {
    pub seed: u64,
    pub d: usize,
    pub n_grid: Vec<usize>,
    pub sigma_eps: f64,
    pub seeds: usize,
    pub n_test: usize,
    pub target_centers: usize,
    pub depth: usize,
    pub jitter: f64,
    /// The sweep passes when the peak of the seed-median risk lies in `[lo, hi]`.
    pub peak_window: (usize, usize),
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            d: 64,
            n_grid: vec![16, 32, 64, 128, 256],
            sigma_eps: 0.5,
            seeds: 10,
            n_test: 2000,
            target_centers: 16,
            depth: 2,
            jitter: 0.0,
            peak_window: (32, 128),
        }
    }
}

/// `k=v` with `v` parsed as JSON, or taken as a string when that fails.
fn parse_override(kv: &str) -> Result<(String, Value)> {
    let (k, v) = kv.split_once('=').ok_or_else(|| anyhow!("override `{kv}` is not of the form key=value"))?;
    let key = k.trim();
    if key.is_empty() {
        bail!("override `{kv}` has an empty key");
    }
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((key.to_string(), value))
}

/// Parses a config file body into a JSON object.
pub fn parse_config_text(text: &str) -> Result<Map<String, Value>> {
    match serde_json::from_str::<Value>(text).context("config is not valid JSON")? {
        Value::Object(map) => Ok(map),
        _ => bail!("config must be a JSON object"),
    }
}

/// Merges defaults, then the file, then `--seed` and `--override` flags, and
/// returns the typed config with its canonical JSON form.
pub fn resolve<T>(file: Option<&Path>, seed: Option<u64>, overrides: &[String]) -> Result<(T, Value)>
where
    T: Default + Serialize + DeserializeOwned,
{
    let mut merged = match serde_json::to_value(T::default())? {
        Value::Object(m) => m,
        _ => unreachable!("configs serialize to objects"),
    };
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        merged.extend(parse_config_text(&text).with_context(|| format!("in {}", path.display()))?);
    }
    if let Some(s) = seed {
        merged.insert("seed".into(), Value::from(s));
    }
    for kv in overrides {
        let (k, v) = parse_override(kv)?;
        merged.insert(k, v);
    }
    let typed: T = serde_json::from_value(Value::Object(merged)).context("invalid configuration")?;
    let canonical = serde_json::to_value(&typed)?;
    Ok((typed, canonical))
}

/// SHA-256 of the compact JSON encoding (object keys sorted).
pub fn config_hash(config: &Value) -> String {
    let bytes = serde_json::to_vec(config).expect("JSON values always serialize");
    hex::encode(Sha256::digest(&bytes))
}
