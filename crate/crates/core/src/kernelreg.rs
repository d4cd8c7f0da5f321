//! Kernel (ridge or ridgeless) regression, Monte Carlo excess risk on the
//! sphere, and comparison of a trained wide network with its kernel
//! interpolant.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::datagen::{eval_rkhs_target, sample_regression, sample_sphere, RkhsTarget};
use crate::error::{invalid, Result};
use crate::network::{init_weights, predict_batch, NetConfig, WeightSet};
use crate::ntk::{cross_kernel, kernel_row, limiting_ntk, Kernel, LimitingNtk};
use crate::numerics::{median, psd_solve, sym_eigvals, RngStream, SymmetricMatrix};
use crate::training::gd_squared_centered;

#[derive(Clone, Debug)]
pub struct KernelRegressor<K> {
    pub x_train: DMatrix<f64>,
    pub coeffs: DVector<f64>,
    pub kernel: K,
    pub jitter_used: f64,
}

impl<K: Kernel> KernelRegressor<K> {
    /// Solves `(K + jitter I) c = y`.
    pub fn fit(x: &DMatrix<f64>, y: &DVector<f64>, kernel: K, jitter: f64) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(invalid("kernel regression needs at least one sample"));
        }
        if y.len() != x.nrows() {
            return Err(invalid(format!("{} targets for {} samples", y.len(), x.nrows())));
        }
        let rows: Vec<Vec<f64>> = (0..x.nrows()).map(|i| x.row(i).iter().copied().collect()).collect();
        let gram = SymmetricMatrix::from_lower_fn(rows.len(), |i, j| kernel.eval(&rows[i], &rows[j]));
        let coeffs = psd_solve(&gram, y, jitter)?;
        Ok(Self { x_train: x.clone(), coeffs, kernel, jitter_used: jitter })
    }

    pub fn dim(&self) -> usize {
        self.x_train.ncols()
    }

    /// `Σ_i c_i k(x, x_i)`.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(invalid(format!("input has dimension {}, model expects {}", x.len(), self.dim())));
        }
        Ok(kernel_row(x, &self.x_train, &self.kernel).dot(&self.coeffs))
    }

    pub fn predict_batch(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        if x.ncols() != self.dim() {
            return Err(invalid(format!("inputs have dimension {}, model expects {}", x.ncols(), self.dim())));
        }
        Ok(cross_kernel(x, &self.x_train, &self.kernel) * &self.coeffs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub excess_risk: f64,
    pub std_err: f64,
    pub n_test: usize,
    pub seed: u64,
    #[serde(rename = "config-hash")]
    pub config_hash: Option<String>,
}

/// Monte Carlo estimate of `E_x (f̂(x) - f(x))²` for `x` uniform on the sphere.
pub fn excess_risk(
    predict: impl Fn(&DMatrix<f64>) -> Result<DVector<f64>>,
    target: &RkhsTarget,
    kernel: &dyn Kernel,
    n_test: usize,
    rng: &mut RngStream,
) -> Result<RiskReport> {
    if n_test < 100 {
        return Err(invalid(format!("excess risk needs at least 100 test points, got {n_test}")));
    }
    let x = sample_sphere(n_test, target.dim(), rng)?;
    let pred = predict(&x)?;
    if pred.len() != n_test {
        return Err(invalid("predictor returned the wrong number of values"));
    }
    let mut sq = Vec::with_capacity(n_test);
    for i in 0..n_test {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        let e = pred[i] - eval_rkhs_target(target, &row, kernel)?;
        sq.push(e * e);
    }
    let n = n_test as f64;
    let mean = sq.iter().sum::<f64>() / n;
    let var = sq.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok(RiskReport { excess_risk: mean, std_err: (var / n).sqrt(), n_test, seed: rng.seed(), config_hash: None })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionGap {
    pub max_gap: f64,
    pub mean_gap: f64,
}

/// Max and mean absolute difference between two prediction vectors.
pub fn prediction_gap(a: &DVector<f64>, b: &DVector<f64>) -> Result<PredictionGap> {
    if a.len() != b.len() || a.is_empty() {
        return Err(invalid("prediction vectors must be non-empty and of equal length"));
    }
    let diffs: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).collect();
    Ok(PredictionGap {
        max_gap: diffs.iter().copied().fold(0.0, f64::max),
        mean_gap: diffs.iter().sum::<f64>() / diffs.len() as f64,
    })
}

/// Gap between a network and a kernel regressor on `test_x`. With `w0` the
/// network output is centered at its initialization, `f(x; W) - f(x; W⁰)`.
pub fn nn_vs_ntk_gap<K: Kernel>(
    w: &WeightSet,
    w0: Option<&WeightSet>,
    model: &KernelRegressor<K>,
    test_x: &DMatrix<f64>,
) -> Result<PredictionGap> {
    let mut nn = predict_batch(w, test_x)?;
    if let Some(w0) = w0 {
        nn -= predict_batch(w0, test_x)?;
    }
    prediction_gap(&nn, &model.predict_batch(test_x)?)
}

/// Setup for comparing a squared-loss-trained network with its NTK interpolant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceConfig {
    pub depth: usize,
    pub d: usize,
    pub n: usize,
    pub n_test: usize,
    pub iters: usize,
}

impl Default for EquivalenceConfig {
    fn default() -> Self {
        Self { depth: 2, d: 16, n: 64, n_test: 200, iters: 1000 }
    }
}

/// Trains a width-`m` network by centered full-batch gradient descent on
/// sphere data labelled `sgn(x_0)` and measures its distance to the ridgeless
/// limiting-NTK interpolant. Steps are `1/λ_max(K)` in standardized
/// coordinates.
pub fn nn_equivalence_trial(cfg: &EquivalenceConfig, width: usize, seed: u64) -> Result<PredictionGap> {
    let x = sample_sphere(cfg.n, cfg.d, &mut RngStream::named(seed, "data"))?;
    let y = DVector::from_fn(cfg.n, |i, _| if x[(i, 0)] >= 0.0 { 1.0 } else { -1.0 });
    let test_x = sample_sphere(cfg.n_test, cfg.d, &mut RngStream::named(seed, "test"))?;
    let kernel = LimitingNtk::new(cfg.depth)?;
    let model = KernelRegressor::fit(&x, &y, kernel, 0.0)?;
    let k = limiting_ntk(&x, cfg.depth)?;
    let eigs = sym_eigvals(&k.gram)?;
    let lr = 1.0 / eigs[eigs.len() - 1];
    let net_cfg = NetConfig::new(cfg.depth, width, cfg.d)?;
    let w0 = init_weights(&net_cfg, &mut RngStream::named(seed, "init"))?;
    let w = gd_squared_centered(&w0, &x, &y, lr, &net_cfg.init_variances(), cfg.iters)?;
    nn_vs_ntk_gap(&w, Some(&w0), &model, &test_x)
}

/// Setup of the ridgeless-risk sweep over `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskSweepConfig {
    pub d: usize,
    pub n_grid: Vec<usize>,
    pub sigma_eps: f64,
    pub seeds: usize,
    pub base_seed: u64,
    pub n_test: usize,
    /// Number of anchors of the ground-truth function.
    pub target_centers: usize,
    pub depth: usize,
    pub jitter: f64,
}

impl Default for RiskSweepConfig {
    fn default() -> Self {
        Self {
            d: 64,
            n_grid: vec![16, 32, 64, 128, 256],
            sigma_eps: 0.5,
            seeds: 10,
            base_seed: 0,
            n_test: 2000,
            target_centers: 16,
            depth: 2,
            jitter: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskSweep {
    pub n_grid: Vec<usize>,
    /// `reports[g][s]` for grid point `g` and seed `s`.
    pub reports: Vec<Vec<RiskReport>>,
    pub medians: Vec<f64>,
    /// Grid value with the largest seed-median risk.
    pub peak_n: usize,
}

impl RiskSweep {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,seed,excess_risk,std_err\n");
        for (n, row) in self.n_grid.iter().zip(&self.reports) {
            for r in row {
                out.push_str(&format!("{n},{},{:e},{:e}\n", r.seed, r.excess_risk, r.std_err));
            }
        }
        out
    }
}

/// Ridgeless limiting-NTK regression risk over an `n` grid. Each seed fixes
/// one ground-truth function shared across the grid.
pub fn excess_risk_sweep(cfg: &RiskSweepConfig) -> Result<RiskSweep> {
    if cfg.n_grid.is_empty() || cfg.seeds == 0 {
        return Err(invalid("risk sweep needs a non-empty grid and at least one seed"));
    }
    let kernel = LimitingNtk::new(cfg.depth)?;
    let mut reports = vec![Vec::with_capacity(cfg.seeds); cfg.n_grid.len()];
    for s in 0..cfg.seeds as u64 {
        let seed = cfg.base_seed + s;
        let target = RkhsTarget::synthesize(
            cfg.d,
            cfg.target_centers,
            cfg.sigma_eps,
            &kernel,
            &mut RngStream::named(seed, "target"),
        )?;
        for (g, &n) in cfg.n_grid.iter().enumerate() {
            let (x, y) = sample_regression(&target, n, &kernel, &mut RngStream::named(seed, "data").substream(n as u64))?;
            let model = KernelRegressor::fit(&x, &y, kernel, cfg.jitter)?;
            let mut test_rng = RngStream::named(seed, "test").substream(n as u64);
            reports[g].push(excess_risk(|t| model.predict_batch(t), &target, &kernel, cfg.n_test, &mut test_rng)?);
        }
    }
    let medians: Vec<f64> =
        reports.iter().map(|row| median(&row.iter().map(|r| r.excess_risk).collect::<Vec<_>>())).collect();
    let peak = medians.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(i, _)| i);
    Ok(RiskSweep { n_grid: cfg.n_grid.clone(), reports, medians, peak_n: cfg.n_grid[peak] })
}
