//! Minimum-eigenvalue lower bounds for the limiting NTK and for sample
//! covariance matrices, their trend over `n` at fixed `d`, the ReLU Hermite
//! coefficient, and effective dimensions of decaying spectra.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::datagen::sample_sphere;
use crate::error::{invalid, Result};
use crate::network::NetConfig;
use crate::ntk::limiting_ntk;
use crate::numerics::{adaptive_simpson, normal_pdf, sym_eig_min, sym_eigvals, RngStream, SymmetricMatrix};

/// `2^3.5 sqrt(ln 9)`.
pub fn default_c() -> f64 {
    2f64.powf(3.5) * 9f64.ln().sqrt()
}

/// `E[relu(g) g]` for standard normal `g`.
pub fn hermite_mu1() -> f64 {
    adaptive_simpson(|g| g * g * normal_pdf(g), 0.0, 40.0, 1e-13)
}

/// `E[relu(g)]` for standard normal `g`.
pub fn hermite_mu0() -> f64 {
    adaptive_simpson(|g| g * normal_pdf(g), 0.0, 40.0, 1e-13)
}

/// Inputs of the NTK eigenvalue bound. `n` is real so trend grids can sweep it
/// continuously.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub n: f64,
    pub d: f64,
    pub mu1: f64,
    pub c_abs: f64,
}

impl BoundInputs {
    pub fn new(n: f64, d: f64) -> Result<Self> {
        let b = Self { n, d, mu1: 0.5, c_abs: default_c() };
        b.validate()?;
        Ok(b)
    }

    pub fn with_mu1(mut self, mu1: f64) -> Result<Self> {
        self.mu1 = mu1;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.n > 0.0 && self.d >= 1.0) {
            return Err(invalid(format!("bound needs n > 0 and d >= 1, got n={} d={}", self.n, self.d)));
        }
        if !(self.mu1 > 0.0) {
            return Err(invalid("mu1 must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    NGeD,
    NLtD,
}

impl Regime {
    pub fn of(n: f64, d: f64) -> Self {
        if n >= d {
            Regime::NGeD
        } else {
            Regime::NLtD
        }
    }
}

/// Covariance-bound factor `(3/4 - (c/4) sqrt(d/n))²` for `n >= d`,
/// `(sqrt(d/n) - (c+6)/4)²` otherwise.
fn cov_factor(n: f64, d: f64, c: f64, regime: Regime) -> f64 {
    let r = (d / n).sqrt();
    match regime {
        Regime::NGeD => (0.75 - 0.25 * c * r).powi(2),
        Regime::NLtD => (r - 0.25 * (c + 6.0)).powi(2),
    }
}

/// `2 μ₁² (n/d) · factor`, branch chosen by `n` vs `d` (`n = d` uses `n >= d`).
pub fn ntk_lower_bound(b: &BoundInputs) -> f64 {
    branch_bound(b, Regime::of(b.n, b.d))
}

/// The bound formula of one branch, regardless of where `n` lies.
pub fn branch_bound(b: &BoundInputs, regime: Regime) -> f64 {
    2.0 * b.mu1 * b.mu1 * (b.n / b.d) * cov_factor(b.n, b.d, b.c_abs, regime)
}

/// Same expression with the bracket clamped at zero before squaring.
pub fn clamped_ntk_lower_bound(b: &BoundInputs) -> f64 {
    let r = (b.d / b.n).sqrt();
    let inner = match Regime::of(b.n, b.d) {
        Regime::NGeD => 0.75 - 0.25 * b.c_abs * r,
        Regime::NLtD => r - 0.25 * (b.c_abs + 6.0),
    };
    2.0 * b.mu1 * b.mu1 * (b.n / b.d) * inner.max(0.0).powi(2)
}

/// Lower bound on `λ_min` of a sample covariance matrix.
pub fn cov_min_eig_bound(n: f64, d: f64, lambda_min_sigma: f64) -> Result<f64> {
    if !(lambda_min_sigma >= 0.0) {
        return Err(invalid("population eigenvalue must be non-negative"));
    }
    if !(n > 0.0 && d >= 1.0) {
        return Err(invalid("n and d must be positive"));
    }
    Ok(lambda_min_sigma * cov_factor(n, d, default_c(), Regime::of(n, d)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayInfo {
    pub kind: DecayKind,
    pub r_star: usize,
    pub a: f64,
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub depth: usize,
    pub lambda_min_observed: f64,
    pub lower_bound: f64,
    /// Bound with the bracket clamped at zero.
    pub clamped_bound: f64,
    pub regime: Regime,
    pub holds: bool,
    /// `λ_min(X Xᵀ)`.
    pub gram_min_eig: f64,
    /// `λ_min(K) >= 2 μ₁² λ_min(X Xᵀ)`.
    pub intermediate_holds: bool,
    pub effective_dimension: f64,
    pub decay: Option<DecayInfo>,
}

pub fn spectrum_csv(reports: &[SpectrumReport]) -> String {
    let mut out = String::from("seed,n,d,L,lambda_min,bound,holds,intermediate_holds\n");
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{:e},{:e},{},{}",
            r.seed, r.n, r.d, r.depth, r.lambda_min_observed, r.lower_bound, r.holds, r.intermediate_holds
        )
        .expect("writing to a String cannot fail");
    }
    out
}

/// `β X Xᵀ / d + α 1 1ᵀ`.
pub fn linearized_gram(x: &DMatrix<f64>, alpha: f64, beta: f64) -> SymmetricMatrix {
    let d = x.ncols() as f64;
    let g = x * x.transpose();
    SymmetricMatrix::from_lower_fn(x.nrows(), |i, j| beta * g[(i, j)] / d + alpha)
}

/// Ridge `γ` used for the effective dimension recorded in spectrum reports.
pub const REPORT_GAMMA: f64 = 1.0;

/// Per seed: sample `n` sphere points in `R^d`, build the depth-`L` limiting
/// NTK and compare its smallest eigenvalue with the bound. Seeds are
/// `base_seed..base_seed + seeds`.
pub fn verify_ntk_bound(n: usize, d: usize, depth: usize, seeds: usize, base_seed: u64) -> Result<Vec<SpectrumReport>> {
    if n == 0 || seeds == 0 {
        return Err(invalid("n and seeds must be positive"));
    }
    NetConfig::new(depth, 1, d)?;
    let inputs = BoundInputs::new(n as f64, d as f64)?.with_mu1(hermite_mu1())?;
    let lower_bound = ntk_lower_bound(&inputs);
    let clamped_bound = clamped_ntk_lower_bound(&inputs);
    (0..seeds as u64)
        .map(|k| {
            let seed = base_seed + k;
            let x = sample_sphere(n, d, &mut RngStream::named(seed, "data"))?;
            let k = limiting_ntk(&x, depth)?;
            let lambda_min = sym_eig_min(&k.gram)?;
            let gram_min_eig = sym_eig_min(&linearized_gram(&x, 0.0, d as f64))?;
            let eigs: Vec<f64> =
                sym_eigvals(&linearized_gram(&x, 0.0, 1.0))?.iter().map(|v| v.max(0.0)).collect();
            Ok(SpectrumReport {
                seed,
                n,
                d,
                depth,
                lambda_min_observed: lambda_min,
                lower_bound,
                clamped_bound,
                regime: Regime::of(n as f64, d as f64),
                holds: lambda_min >= lower_bound,
                gram_min_eig,
                intermediate_holds: lambda_min >= 2.0 * inputs.mu1 * inputs.mu1 * gram_min_eig,
                effective_dimension: effective_dimension(&eigs, REPORT_GAMMA)?,
                decay: None,
            })
        })
        .collect()
}

/// `Σ_i λ_i / (λ_i + γ)²`.
pub fn effective_dimension(eigs: &[f64], gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(invalid(format!("gamma must be positive, got {gamma}")));
    }
    if eigs.iter().any(|&l| !(l >= 0.0)) {
        return Err(invalid("eigenvalues must be non-negative"));
    }
    Ok(eigs.iter().map(|&l| l / ((l + gamma) * (l + gamma))).sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayKind {
    Harmonic,
    Polynomial,
    Exponential,
}

/// `λ_i` for `i = 1..n` with proportionality constant one, zero past `r_star`.
pub fn decay_spectrum(kind: DecayKind, n: usize, r_star: usize, a: f64) -> Result<Vec<f64>> {
    if r_star < 1 || r_star > n {
        return Err(invalid(format!("r_star must lie in [1, {n}], got {r_star}")));
    }
    match kind {
        DecayKind::Polynomial if !(a > 0.5) => return Err(invalid(format!("polynomial decay needs a > 1/2, got {a}"))),
        DecayKind::Exponential if !(a > 0.0) => return Err(invalid(format!("exponential decay needs a > 0, got {a}"))),
        _ => {}
    }
    let nf = n as f64;
    Ok((1..=n)
        .map(|i| {
            if i > r_star {
                return 0.0;
            }
            let i = i as f64;
            match kind {
                DecayKind::Harmonic => nf / i,
                DecayKind::Polynomial => nf * i.powf(-2.0 * a),
                DecayKind::Exponential => nf * (-a * i).exp(),
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    /// `n <= (4/(c+6))² d`
    VerySmall,
    /// `(4/(c+6))² d < n < d`
    Small,
    /// `d <= n <= (c²/9) d`
    Moderate,
    /// `n > (c²/9) d`
    Large,
}

impl Segment {
    /// Expected sign of consecutive bound differences: `-1` or `+1`.
    pub fn expected_trend(self) -> i8 {
        match self {
            Segment::VerySmall | Segment::Moderate => -1,
            Segment::Small | Segment::Large => 1,
        }
    }
}

/// `((4/(c+6))² d, d, (c²/9) d)`.
pub fn breakpoints(d: f64, c: f64) -> (f64, f64, f64) {
    ((4.0 / (c + 6.0)).powi(2) * d, d, c * c / 9.0 * d)
}

pub fn segment_of(n: f64, d: f64, c: f64) -> Segment {
    let (b1, b2, b3) = breakpoints(d, c);
    if n <= b1 {
        Segment::VerySmall
    } else if n < b2 {
        Segment::Small
    } else if n <= b3 {
        Segment::Moderate
    } else {
        Segment::Large
    }
}

fn geomspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let ratio = (hi / lo).ln();
    let mut v: Vec<f64> = (0..points).map(|k| lo * (ratio * k as f64 / (points - 1) as f64).exp()).collect();
    v[points - 1] = hi;
    v[0] = lo;
    v
}

/// Union of geometric grids with `points` nodes over `[lo, b1]`, `[b1, d]`,
/// `[d, b3]` and `[b3, hi]`, sorted and de-duplicated.
pub fn segment_grid(d: f64, lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    let (b1, b2, b3) = breakpoints(d, default_c());
    if points < 2 || !(lo > 0.0 && lo < b1 && hi > b3) {
        return Err(invalid("grid must start below the first breakpoint and end above the last"));
    }
    let mut grid = Vec::with_capacity(4 * points);
    for (a, b) in [(lo, b1), (b1, b2), (b2, b3), (b3, hi)] {
        grid.extend(geomspace(a, b, points));
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    Ok(grid)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub n: f64,
    pub bound: f64,
    pub segment: Segment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentTrend {
    pub segment: Segment,
    pub points: usize,
    pub increasing_steps: usize,
    pub decreasing_steps: usize,
    /// Every consecutive difference has the expected sign.
    pub matches_expected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendTable {
    pub d: f64,
    pub rows: Vec<TrendRow>,
    pub segments: Vec<SegmentTrend>,
    /// `(n < d branch, n >= d branch)` evaluated at `n = d`.
    pub branch_values_at_d: (f64, f64),
    /// `bound / 2μ₁²` at `n = d / s` for `s` in `LIMIT_SCALES`.
    pub small_n_limit_ratios: Vec<f64>,
    /// `bound / ((9/8) μ₁² n/d)` at `n = s d` for `s` in `LIMIT_SCALES`.
    pub large_n_limit_ratios: Vec<f64>,
}

pub const LIMIT_SCALES: [f64; 3] = [1024.0, 1048576.0, 1073741824.0];

impl TrendTable {
    pub fn all_match(&self) -> bool {
        self.segments.iter().all(|s| s.matches_expected)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,bound,segment\n");
        for r in &self.rows {
            let label = serde_json::to_value(r.segment).expect("segment serializes");
            writeln!(out, "{:e},{:e},{}", r.n, r.bound, label.as_str().unwrap_or_default())
                .expect("writing to a String cannot fail");
        }
        out
    }
}

/// Bound along an ascending `n` grid, with per-segment monotonicity.
pub fn trend_table(d: f64, n_grid: &[f64], mu1: f64) -> Result<TrendTable> {
    if n_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(invalid("n grid must be strictly ascending"));
    }
    let c = default_c();
    let rows = n_grid
        .iter()
        .map(|&n| {
            let b = BoundInputs::new(n, d)?.with_mu1(mu1)?;
            Ok(TrendRow { n, bound: ntk_lower_bound(&b), segment: segment_of(n, d, c) })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut segments = Vec::new();
    for seg in [Segment::VerySmall, Segment::Small, Segment::Moderate, Segment::Large] {
        let vals: Vec<f64> = rows.iter().filter(|r| r.segment == seg).map(|r| r.bound).collect();
        if vals.is_empty() {
            continue;
        }
        let inc = vals.windows(2).filter(|w| w[1] > w[0]).count();
        let dec = vals.windows(2).filter(|w| w[1] < w[0]).count();
        let steps = vals.len() - 1;
        let matches_expected = if seg.expected_trend() > 0 { inc == steps } else { dec == steps };
        segments.push(SegmentTrend { segment: seg, points: vals.len(), increasing_steps: inc, decreasing_steps: dec, matches_expected });
    }
    let at_d = BoundInputs::new(d, d)?.with_mu1(mu1)?;
    let small_n_limit_ratios = LIMIT_SCALES
        .iter()
        .map(|s| Ok(ntk_lower_bound(&BoundInputs::new(d / s, d)?.with_mu1(mu1)?) / (2.0 * mu1 * mu1)))
        .collect::<Result<Vec<_>>>()?;
    let large_n_limit_ratios = LIMIT_SCALES
        .iter()
        .map(|s| Ok(ntk_lower_bound(&BoundInputs::new(d * s, d)?.with_mu1(mu1)?) / (1.125 * mu1 * mu1 * s)))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrendTable {
        d,
        rows,
        segments,
        branch_values_at_d: (branch_bound(&at_d, Regime::NLtD), branch_bound(&at_d, Regime::NGeD)),
        small_n_limit_ratios,
        large_n_limit_ratios,
    })
}
