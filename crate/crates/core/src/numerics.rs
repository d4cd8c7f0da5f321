//! Numerical substrate: seeded sampling, dense symmetric eigenproblems,
//! positive-definite solves and the handful of quadrature rules the rest of
//! the crate leans on.
//!
//! Everything here is a pure function of its inputs. Random streams are
//! ChaCha8 generators keyed by `(seed, stream_id)`, so sub-streams for data,
//! initialization and SGD ordering never share state.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};

/// A reproducible random stream identified by `(seed, stream_id)`.
///
/// Cloning copies the generator state, so a clone replays the same samples.
/// Use [`RngStream::substream`] to obtain an independent stream instead.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    /// Stream labelled by a name such as `"data"` or `"init"`.
    pub fn named(seed: u64, name: &str) -> Self {
        Self::new(seed, fnv1a(name.as_bytes()))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Independent stream derived from this one's identity (not its state).
    pub fn substream(&self, label: u64) -> Self {
        let mut bytes = [0u8; 16];
        bytes[..8].copy_from_slice(&self.stream_id.to_le_bytes());
        bytes[8..].copy_from_slice(&label.to_le_bytes());
        Self::new(self.seed, fnv1a(&bytes))
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn sign(&mut self) -> f64 {
        if self.rng.random::<bool>() {
            1.0
        } else {
            -1.0
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// `rows × cols` matrix of i.i.d. `N(0, variance)` entries, filled row by row.
pub fn sample_gaussian(
    rng: &mut RngStream,
    rows: usize,
    cols: usize,
    variance: f64,
) -> Result<DMatrix<f64>> {
    if rows == 0 || cols == 0 {
        return Err(invalid(format!("gaussian sample needs positive shape, got {rows}x{cols}")));
    }
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(invalid(format!("variance must be positive and finite, got {variance}")));
    }
    let sd = variance.sqrt();
    let mut out = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            out[(i, j)] = sd * rng.standard_normal();
        }
    }
    Ok(out)
}

/// Dense real symmetric matrix. Entries are stored in full and kept exactly
/// symmetric.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetricMatrix(DMatrix<f64>);

impl SymmetricMatrix {
    /// Builds the matrix from its lower triangle (`j <= i`).
    pub fn from_lower_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Self(m)
    }

    /// Accepts a square matrix whose asymmetry is at rounding level and
    /// symmetrizes it by averaging.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(invalid(format!("matrix is {}x{}, not square", m.nrows(), m.ncols())));
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        let n = m.nrows();
        let mut out = m;
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (out[(i, j)], out[(j, i)]);
                if (a - b).abs() > 1e-10 * scale {
                    return Err(invalid(format!("matrix not symmetric at ({i},{j}): {a} vs {b}")));
                }
                let avg = 0.5 * (a + b);
                out[(i, j)] = avg;
                out[(j, i)] = avg;
            }
        }
        Ok(Self(out))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_row_slice(diag)))
    }

    pub fn order(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    /// `A + shift * I`.
    pub fn shifted(&self, shift: f64) -> Self {
        let mut m = self.0.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += shift;
        }
        Self(m)
    }
}

/// Eigendecomposition with eigenvalues in ascending order; `vectors` holds the
/// matching unit eigenvectors as columns.
#[derive(Clone, Debug)]
pub struct SymEig {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn sym_eig(a: &SymmetricMatrix) -> Result<SymEig> {
    if !a.is_finite() {
        return Err(invalid("matrix has non-finite entries"));
    }
    let n = a.order();
    if n == 0 {
        return Ok(SymEig { values: DVector::zeros(0), vectors: DMatrix::zeros(0, 0) });
    }
    let eig = SymmetricEigen::try_new(a.matrix().clone(), 1e-14, 0)
        .ok_or_else(|| invalid("symmetric eigensolver failed to converge"))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SymEig { values, vectors })
}

/// Eigenvalues only, ascending.
pub fn sym_eigvals(a: &SymmetricMatrix) -> Result<DVector<f64>> {
    if !a.is_finite() {
        return Err(invalid("matrix has non-finite entries"));
    }
    if a.order() == 0 {
        return Ok(DVector::zeros(0));
    }
    let mut vals: Vec<f64> = SymmetricEigen::try_new(a.matrix().clone(), 1e-14, 0)
        .ok_or_else(|| invalid("symmetric eigensolver failed to converge"))?
        .eigenvalues
        .iter()
        .copied()
        .collect();
    vals.sort_by(f64::total_cmp);
    Ok(DVector::from_vec(vals))
}

pub fn sym_eig_min(a: &SymmetricMatrix) -> Result<f64> {
    if a.order() == 0 {
        return Err(invalid("empty matrix has no eigenvalues"));
    }
    Ok(sym_eigvals(a)?[0])
}

/// Default ridge added before kernel solves: `1e-10 * trace(A) / n`.
pub fn default_jitter(a: &SymmetricMatrix) -> f64 {
    let n = a.order().max(1) as f64;
    (1e-10 * a.trace() / n).max(0.0)
}

/// Solves `(A + jitter I) x = b`.
///
/// Tries a Cholesky factorization first. When that fails, or its residual is
/// not within `1e-8 (‖A‖_F ‖x‖ + ‖b‖)`, falls back to an eigendecomposition
/// pseudo-solve. A fallback that still misses the residual bound yields
/// [`Error::SingularMatrix`] carrying the smallest absolute eigenvalue.
pub fn psd_solve(a: &SymmetricMatrix, b: &DVector<f64>, jitter: f64) -> Result<DVector<f64>> {
    let n = a.order();
    if b.len() != n {
        return Err(invalid(format!("rhs has length {}, matrix has order {n}", b.len())));
    }
    if !(jitter >= 0.0) || !jitter.is_finite() {
        return Err(invalid(format!("jitter must be non-negative, got {jitter}")));
    }
    if !a.is_finite() || b.iter().any(|v| !v.is_finite()) {
        return Err(invalid("non-finite entries in linear system"));
    }
    if n == 0 {
        return Ok(DVector::zeros(0));
    }
    let m = a.shifted(jitter);
    let norm_a = m.frobenius_norm();
    let within = |x: &DVector<f64>| {
        let r = m.matrix() * x - b;
        r.norm() <= 1e-8 * (norm_a * x.norm() + b.norm())
    };

    if let Some(ch) = Cholesky::new(m.matrix().clone()) {
        let x = ch.solve(b);
        if x.iter().all(|v| v.is_finite()) && within(&x) {
            return Ok(x);
        }
    }

    let eig = sym_eig(&m)?;
    let lam_max = eig.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let cutoff = lam_max * n as f64 * f64::EPSILON;
    let smallest = eig.values.iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
    let mut x = DVector::zeros(n);
    for (k, &lam) in eig.values.iter().enumerate() {
        if lam.abs() > cutoff {
            let v = eig.vectors.column(k);
            let coef = v.dot(b) / lam;
            x.axpy(coef, &v, 1.0);
        }
    }
    if within(&x) {
        Ok(x)
    } else {
        Err(Error::SingularMatrix { smallest_pivot: smallest })
    }
}

/// Symmetric tridiagonal Jacobi matrix to Gauss rule (Golub-Welsch).
fn golub_welsch(diag: &[f64], off: &[f64], mu0: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = diag.len();
    let jac = SymmetricMatrix::from_lower_fn(n, |i, j| {
        if i == j {
            diag[i]
        } else if i == j + 1 {
            off[j]
        } else {
            0.0
        }
    });
    let eig = sym_eig(&jac)?;
    let nodes = eig.values.iter().copied().collect();
    let weights = (0..n).map(|k| mu0 * eig.vectors[(0, k)].powi(2)).collect();
    Ok((nodes, weights))
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(invalid("quadrature order must be positive"));
    }
    let off: Vec<f64> = (1..n)
        .map(|k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        })
        .collect();
    golub_welsch(&vec![0.0; n], &off, 2.0)
}

/// Gauss-Laguerre nodes and weights for the weight `e^{-x}` on `[0, ∞)`.
pub fn gauss_laguerre(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(invalid("quadrature order must be positive"));
    }
    let diag: Vec<f64> = (0..n).map(|k| 2.0 * k as f64 + 1.0).collect();
    let off: Vec<f64> = (1..n).map(|k| k as f64).collect();
    golub_welsch(&diag, &off, 1.0)
}

/// Gauss-Hermite nodes and weights for the weight `e^{-x²}` on the real line.
pub fn gauss_hermite(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(invalid("quadrature order must be positive"));
    }
    let off: Vec<f64> = (1..n).map(|k| (k as f64 / 2.0).sqrt()).collect();
    golub_welsch(&vec![0.0; n], &off, std::f64::consts::PI.sqrt())
}

/// `E[f(u, v)]` for a standard bivariate normal pair with correlation `rho`.
///
/// Integrates in polar coordinates of the whitened pair `(g1, g2)` with
/// `u = g1`, `v = rho g1 + sqrt(1 - rho²) g2`: Gauss-Laguerre in `r²/2`
/// and composite Gauss-Legendre in the angle. `kink_angles` (radians) split
/// the angular range so that integrands with kinks along rays through the
/// origin (ReLU and its derivative) are integrated piecewise-smoothly.
pub fn bivariate_normal_expectation(
    f: impl Fn(f64, f64) -> f64,
    rho: f64,
    kink_angles: &[f64],
    order: usize,
) -> Result<f64> {
    if !(-1.0..=1.0).contains(&rho) {
        return Err(invalid(format!("correlation {rho} outside [-1, 1]")));
    }
    use std::f64::consts::PI;
    let s = (1.0 - rho * rho).max(0.0).sqrt();
    let (lag_x, lag_w) = gauss_laguerre(order)?;
    let (leg_x, leg_w) = gauss_legendre(order)?;

    let mut cuts: Vec<f64> = kink_angles.iter().map(|a| a.rem_euclid(2.0 * PI)).collect();
    cuts.push(0.0);
    cuts.push(2.0 * PI);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-15);

    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        for (&t, &wt) in leg_x.iter().zip(&leg_w) {
            let theta = mid + half * t;
            let (sn, cs) = theta.sin_cos();
            let mut radial = 0.0;
            for (&x, &wx) in lag_x.iter().zip(&lag_w) {
                let r = (2.0 * x).sqrt();
                let (g1, g2) = (r * cs, r * sn);
                radial += wx * f(g1, rho * g1 + s * g2);
            }
            total += wt * half * radial;
        }
    }
    Ok(total / (2.0 * PI))
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
///
/// The first `MIN_LEVELS` bisections are always taken so that mass concentrated
/// between the initial nodes is not missed.
pub fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn step(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || (depth <= MAX_LEVELS - MIN_LEVELS && delta.abs() <= 15.0 * tol) {
            left + right + delta / 15.0
        } else {
            step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    let (fa, fb) = (f(a), f(b));
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(&f, a, b, fa, fm, fb, whole, tol, MAX_LEVELS)
}

const MAX_LEVELS: u32 = 50;
const MIN_LEVELS: u32 = 6;

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Least-squares slope of `ys` against `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return 0.0;
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for i in 0..n {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx).powi(2);
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
