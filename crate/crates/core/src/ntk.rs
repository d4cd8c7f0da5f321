//! Kernels: arc-cosine closed forms, the limiting NTK of the bias-free ReLU
//! network, the empirical NTK of a finite network, Laplace and dot-product
//! kernels, and the class-gap statistic.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::network::{backward_vectors, forward, WeightSet};
use crate::numerics::{sym_eigvals, SymmetricMatrix};

/// Symmetric kernel function on vectors.
pub trait Kernel {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64;
}

fn clip_cosine(u: f64) -> Result<f64> {
    if !(u.abs() <= 1.0 + 1e-12) {
        return Err(invalid(format!("cosine {u} outside [-1, 1]")));
    }
    Ok(u.clamp(-1.0, 1.0))
}

/// `(π - arccos u) / π`.
pub fn kappa0(u: f64) -> Result<f64> {
    let u = clip_cosine(u)?;
    Ok((PI - u.acos()) / PI)
}

/// `(u (π - arccos u) + sqrt(1 - u²)) / π`.
pub fn kappa1(u: f64) -> Result<f64> {
    let u = clip_cosine(u)?;
    Ok((u * (PI - u.acos()) + (1.0 - u * u).max(0.0).sqrt()) / PI)
}

/// `u κ₀(u) + κ₁(u)`.
pub fn kappa(u: f64) -> Result<f64> {
    Ok(u * kappa0(u)? + kappa1(u)?)
}

// Inputs here are clipped already, so the arc-cosine forms cannot fail.
fn k0(u: f64) -> f64 {
    (PI - u.acos()) / PI
}

fn k1(u: f64) -> f64 {
    (u * (PI - u.acos()) + (1.0 - u * u).max(0.0).sqrt()) / PI
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Two-layer NTK `‖x₁‖ ‖x₂‖ κ(u)` with `u` the clipped cosine.
pub fn ntk_2layer_closed(x1: &[f64], x2: &[f64]) -> Result<f64> {
    if x1.len() != x2.len() {
        return Err(invalid("kernel arguments have different dimensions"));
    }
    let (n1, n2) = (norm(x1), norm(x2));
    if n1 == 0.0 || n2 == 0.0 {
        return Err(invalid("two-layer NTK is undefined at the zero vector"));
    }
    let u = (dot(x1, x2) / (n1 * n2)).clamp(-1.0, 1.0);
    Ok(n1 * n2 * (u * k0(u) + k1(u)))
}

/// Limiting NTK entry from `G¹ = [[a, c], [c, b]]`.
///
/// The diagonal of every `G^(l)` is preserved because `κ₁(1) = 1`, so the
/// pair recursion only tracks the correlation.
fn limiting_pair(a: f64, b: f64, c: f64, depth: usize) -> f64 {
    let scale = (a * b).sqrt();
    if scale == 0.0 {
        return c;
    }
    let mut g = c;
    let mut k = c;
    for _ in 1..depth {
        let rho = (g / scale).clamp(-1.0, 1.0);
        g = scale * k1(rho);
        k = k * k0(rho) + g;
    }
    k
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LinearKernel;

impl Kernel for LinearKernel {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, y)
    }
}

/// Two-layer closed form; zero at the zero vector.
#[derive(Clone, Copy, Debug, Default)]
pub struct ArcCosineNtk2;

impl Kernel for ArcCosineNtk2 {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        ntk_2layer_closed(x, y).unwrap_or(0.0)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LimitingNtk {
    depth: usize,
}

impl LimitingNtk {
    pub fn new(depth: usize) -> Result<Self> {
        if depth < 2 {
            return Err(invalid(format!("NTK depth must be at least 2, got {depth}")));
        }
        Ok(Self { depth })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }
}

impl Kernel for LimitingNtk {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        limiting_pair(dot(x, x), dot(y, y), dot(x, y), self.depth)
    }
}

/// `exp(-c ‖x1 - x2‖)`.
pub fn laplace_kernel(x1: &[f64], x2: &[f64], c: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(invalid(format!("Laplace scale must be positive, got {c}")));
    }
    if x1.len() != x2.len() {
        return Err(invalid("kernel arguments have different dimensions"));
    }
    let dist = x1.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok((-c * dist).exp())
}

#[derive(Clone, Copy, Debug)]
pub struct LaplaceKernel {
    c: f64,
}

impl LaplaceKernel {
    pub fn new(c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(invalid(format!("Laplace scale must be positive, got {c}")));
        }
        Ok(Self { c })
    }

    pub fn c(&self) -> f64 {
        self.c
    }
}

impl Kernel for LaplaceKernel {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let dist = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        (-self.c * dist).exp()
    }
}

/// `k(u)` of the clipped cosine between the arguments.
#[derive(Clone, Copy, Debug)]
pub struct DotProductKernel<F>(pub F);

impl<F: Fn(f64) -> f64> Kernel for DotProductKernel<F> {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let s = norm(x) * norm(y);
        let u = if s == 0.0 { 0.0 } else { (dot(x, y) / s).clamp(-1.0, 1.0) };
        (self.0)(u)
    }
}

/// Laplace kernel restricted to the sphere, `exp(-c̃ sqrt(1 - u))`.
pub fn laplace_on_sphere(c_tilde: f64) -> Result<DotProductKernel<impl Fn(f64) -> f64 + Copy>> {
    if !(c_tilde > 0.0) {
        return Err(invalid(format!("Laplace scale must be positive, got {c_tilde}")));
    }
    Ok(DotProductKernel(move |u: f64| (-c_tilde * (1.0 - u).max(0.0).sqrt()).exp()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Empirical,
    Limiting,
    Laplace,
    DotProduct,
}

#[derive(Clone, Debug)]
pub struct KernelMatrix {
    pub gram: SymmetricMatrix,
    pub provenance: Provenance,
    pub meta: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSummary {
    pub provenance: Provenance,
    pub n: usize,
    pub trace: f64,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub meta: BTreeMap<String, f64>,
}

impl KernelMatrix {
    pub fn order(&self) -> usize {
        self.gram.order()
    }

    pub fn summary(&self) -> Result<KernelSummary> {
        let eig = sym_eigvals(&self.gram)?;
        let n = self.order();
        Ok(KernelSummary {
            provenance: self.provenance,
            n,
            trace: self.gram.trace(),
            min_eigenvalue: if n == 0 { 0.0 } else { eig[0] },
            max_eigenvalue: if n == 0 { 0.0 } else { eig[n - 1] },
            meta: self.meta.clone(),
        })
    }

    /// Dense CSV, one row per line, no header.
    pub fn to_csv(&self) -> String {
        let n = self.order();
        let mut out = String::with_capacity(n * n * 24);
        for i in 0..n {
            for j in 0..n {
                if j > 0 {
                    out.push(',');
                }
                write!(out, "{:e}", self.gram.get(i, j)).expect("writing to a String cannot fail");
            }
            out.push('\n');
        }
        out
    }
}

fn rows_of(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..x.nrows()).map(|i| x.row(i).iter().copied().collect()).collect()
}

/// Gram matrix of an arbitrary kernel on the rows of `x`.
pub fn kernel_matrix(
    x: &DMatrix<f64>,
    kernel: &dyn Kernel,
    provenance: Provenance,
    meta: BTreeMap<String, f64>,
) -> KernelMatrix {
    let rows = rows_of(x);
    let gram = SymmetricMatrix::from_lower_fn(rows.len(), |i, j| kernel.eval(&rows[i], &rows[j]));
    KernelMatrix { gram, provenance, meta }
}

/// Cross-kernel `K(a_i, b_j)`.
pub fn cross_kernel(a: &DMatrix<f64>, b: &DMatrix<f64>, kernel: &dyn Kernel) -> DMatrix<f64> {
    let ra = rows_of(a);
    let rb = rows_of(b);
    DMatrix::from_fn(ra.len(), rb.len(), |i, j| kernel.eval(&ra[i], &rb[j]))
}

/// Limiting NTK of the depth-`L` network on the rows of `x`.
pub fn limiting_ntk(x: &DMatrix<f64>, depth: usize) -> Result<KernelMatrix> {
    if depth < 2 {
        return Err(invalid(format!("NTK depth must be at least 2, got {depth}")));
    }
    let n = x.nrows();
    for i in 0..n {
        let r = x.row(i);
        if r.iter().any(|v| !v.is_finite()) {
            return Err(invalid(format!("row {i} has non-finite entries")));
        }
        if r.norm() == 0.0 {
            return Err(invalid(format!("row {i} has zero norm")));
        }
    }
    let g1 = x * x.transpose();
    let gram = SymmetricMatrix::from_lower_fn(n, |i, j| limiting_pair(g1[(i, i)], g1[(j, j)], g1[(i, j)], depth));
    let meta = BTreeMap::from([("L".to_string(), depth as f64)]);
    Ok(KernelMatrix { gram, provenance: Provenance::Limiting, meta })
}

/// How gradient blocks of different layers are weighted in the empirical NTK.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmpiricalNtkScaling {
    /// Plain inner product of the flattened gradients.
    Raw,
    /// Layer `l` block weighted by its initialization variance (`2/m` hidden,
    /// `1` output), i.e. gradients taken with respect to standardized weights.
    /// This is the normalization whose infinite-width limit is [`limiting_ntk`].
    #[default]
    NtkParameterization,
}

/// Single-draw gradient kernel at `w` on the rows of `x`.
///
/// Uses `⟨∂f/∂W_l(x), ∂f/∂W_l(x')⟩ = ⟨b_l, b'_l⟩ ⟨h_{l-1}, h'_{l-1}⟩`.
pub fn empirical_ntk(w: &WeightSet, x: &DMatrix<f64>, scaling: EmpiricalNtkScaling) -> Result<KernelMatrix> {
    let cfg = w.config();
    if x.ncols() != cfg.input_dim {
        return Err(invalid(format!("inputs have dimension {}, network expects {}", x.ncols(), cfg.input_dim)));
    }
    let n = x.nrows();
    let depth = cfg.depth;
    let weights: Vec<f64> = match scaling {
        EmpiricalNtkScaling::Raw => vec![1.0; depth],
        EmpiricalNtkScaling::NtkParameterization => cfg.init_variances(),
    };
    let mut bs: Vec<DMatrix<f64>> = (0..depth).map(|l| DMatrix::zeros(n, w.layer(l).nrows())).collect();
    let mut hs: Vec<DMatrix<f64>> = (0..depth).map(|l| DMatrix::zeros(n, w.layer(l).ncols())).collect();
    for i in 0..n {
        let xi: Vec<f64> = x.row(i).iter().copied().collect();
        let rec = forward(w, &xi)?;
        let b = backward_vectors(w, &rec);
        for l in 0..depth {
            bs[l].set_row(i, &b[l].transpose());
            hs[l].set_row(i, &rec.layer_input(l + 1).transpose());
        }
    }
    let mut k = DMatrix::zeros(n, n);
    for l in 0..depth {
        let bb = &bs[l] * bs[l].transpose();
        let hh = &hs[l] * hs[l].transpose();
        k += bb.component_mul(&hh) * weights[l];
    }
    let gram = SymmetricMatrix::from_lower_fn(n, |i, j| k[(i, j)]);
    let meta = BTreeMap::from([
        ("L".to_string(), depth as f64),
        ("m".to_string(), cfg.width as f64),
        ("ntk_parameterization".to_string(), (scaling == EmpiricalNtkScaling::NtkParameterization) as u8 as f64),
    ]);
    Ok(KernelMatrix { gram, provenance: Provenance::Empirical, meta })
}

/// Mean kernel values between classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassGap {
    /// Sorted distinct labels; row/column order of `confusion`.
    pub classes: Vec<i64>,
    pub confusion: Vec<Vec<f64>>,
    pub same_class_mean: f64,
    pub cross_class_mean: f64,
    /// `same_class_mean - cross_class_mean`.
    pub gap: f64,
}

impl ClassGap {
    /// Classes whose diagonal entry exceeds every other entry of its row.
    pub fn diagonal_dominance(&self) -> usize {
        self.confusion
            .iter()
            .enumerate()
            .filter(|(a, row)| row.iter().enumerate().all(|(b, &v)| b == *a || row[*a] > v))
            .count()
    }

    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("class");
        for c in &self.classes {
            write!(out, ",{c}").expect("writing to a String cannot fail");
        }
        out.push('\n');
        for (c, row) in self.classes.iter().zip(&self.confusion) {
            write!(out, "{c}").expect("writing to a String cannot fail");
            for v in row {
                write!(out, ",{v:e}").expect("writing to a String cannot fail");
            }
            out.push('\n');
        }
        out
    }
}

/// Pairwise (`i != j`) kernel means per class pair, plus same-minus-cross gap.
pub fn assumption_gap(x: &DMatrix<f64>, labels: &[i64], kernel: &dyn Kernel) -> Result<ClassGap> {
    let n = x.nrows();
    if labels.len() != n {
        return Err(invalid(format!("{} labels for {n} samples", labels.len())));
    }
    let mut classes: Vec<i64> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let index: BTreeMap<i64, usize> = classes.iter().enumerate().map(|(k, &c)| (c, k)).collect();
    let mut counts = vec![0usize; classes.len()];
    for l in labels {
        counts[index[l]] += 1;
    }
    if let Some(k) = counts.iter().position(|&c| c < 2) {
        return Err(Error::InsufficientData { class: classes[k] });
    }
    let rows = rows_of(x);
    let c = classes.len();
    let mut sums = vec![vec![0.0; c]; c];
    let (mut same, mut cross) = (0.0, 0.0);
    let (mut n_same, mut n_cross) = (0usize, 0usize);
    for i in 0..n {
        let a = index[&labels[i]];
        for j in 0..i {
            let b = index[&labels[j]];
            let v = kernel.eval(&rows[i], &rows[j]);
            sums[a][b] += v;
            if a != b {
                sums[b][a] += v;
                cross += v;
                n_cross += 1;
            } else {
                same += v;
                n_same += 1;
            }
        }
    }
    let confusion: Vec<Vec<f64>> = (0..c)
        .map(|a| {
            (0..c)
                .map(|b| {
                    let pairs = if a == b { counts[a] * (counts[a] - 1) / 2 } else { counts[a] * counts[b] };
                    sums[a][b] / pairs as f64
                })
                .collect()
        })
        .collect();
    let same_class_mean = same / n_same as f64;
    let cross_class_mean = if n_cross == 0 { f64::NAN } else { cross / n_cross as f64 };
    Ok(ClassGap { classes, confusion, same_class_mean, cross_class_mean, gap: same_class_mean - cross_class_mean })
}

/// Reference value `2 C² Γ(d/2) / (Γ((d+1)/2) sqrt(π))` for the class gap of
/// orthant-labelled sphere data; decays like `1/sqrt(d)`.
pub fn reference_gap(d: usize, c_norm: f64) -> f64 {
    use crate::numerics::ln_gamma;
    let d = d as f64;
    2.0 * c_norm * c_norm * (ln_gamma(d / 2.0) - ln_gamma((d + 1.0) / 2.0)).exp() / PI.sqrt()
}

/// Mean absolute entrywise difference between two Gram matrices.
pub fn mean_abs_deviation(a: &KernelMatrix, b: &KernelMatrix) -> Result<f64> {
    if a.order() != b.order() {
        return Err(invalid("kernel matrices have different orders"));
    }
    let diff: DMatrix<f64> = a.gram.matrix() - b.gram.matrix();
    Ok(diff.abs().mean())
}

/// Kernel evaluations `K(x, X)` at one point against every row of `train`.
pub fn kernel_row(x: &[f64], train: &DMatrix<f64>, kernel: &dyn Kernel) -> DVector<f64> {
    let mut row = vec![0.0; train.ncols()];
    DVector::from_fn(train.nrows(), |i, _| {
        for (c, v) in row.iter_mut().enumerate() {
            *v = train[(i, c)];
        }
        kernel.eval(x, &row)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::sample_sphere;
    use crate::network::{init_weights, NetConfig};
    use crate::numerics::{bivariate_normal_expectation, sym_eig_min, RngStream};

    #[test]
    fn kappa_examples() {
        assert_eq!(kappa0(1.0).unwrap(), 1.0);
        assert_eq!(kappa0(-1.0).unwrap(), 0.0);
        assert!((kappa0(0.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((kappa1(1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(kappa1(-1.0).unwrap().abs() < 1e-15);
        assert!((kappa1(0.0).unwrap() - 1.0 / PI).abs() < 1e-15);
        assert!(kappa0(1.0 + 5e-13).is_ok());
        assert!(matches!(kappa0(1.0 + 1e-9), Err(Error::InvalidArgument(_))));
        assert!(kappa1(f64::NAN).is_err());
    }

    #[test]
    fn two_layer_closed_examples() {
        let e1 = [1.0, 0.0, 0.0];
        let e2 = [0.0, 1.0, 0.0];
        assert!((ntk_2layer_closed(&e1, &e1).unwrap() - 2.0).abs() < 1e-15);
        assert!((ntk_2layer_closed(&e1, &e2).unwrap() - 1.0 / PI).abs() < 1e-15);
        assert!(ntk_2layer_closed(&e1, &[-1.0, 0.0, 0.0]).unwrap().abs() < 1e-15);
        assert!(ntk_2layer_closed(&e1, &[0.0; 3]).is_err());
    }

    #[test]
    fn arc_cosine_matches_gaussian_expectations() {
        let relu = |v: f64| v.max(0.0);
        let step = |v: f64| if v >= 0.0 { 1.0 } else { 0.0 };
        for rho in [-0.9, 0.0, 0.5, 0.99] {
            let s = (1.0f64 - rho * rho).sqrt();
            let kinks = [PI / 2.0, -PI / 2.0, (-rho).atan2(s), (-rho).atan2(s) + PI];
            let e1 = bivariate_normal_expectation(|u, v| relu(u) * relu(v), rho, &kinks, 64).unwrap();
            let e0 = bivariate_normal_expectation(|u, v| step(u) * step(v), rho, &kinks, 64).unwrap();
            assert!((2.0 * e0 - kappa0(rho).unwrap()).abs() < 1e-6, "rho {rho}");
            assert!((2.0 * e1 - kappa1(rho).unwrap()).abs() < 1e-6, "rho {rho}");
        }
    }

    #[test]
    fn limiting_depth_two_equals_closed_form() {
        let x = sample_sphere(20, 7, &mut RngStream::new(1, 0)).unwrap();
        let k = limiting_ntk(&x, 2).unwrap();
        let rows = rows_of(&x);
        for i in 0..20 {
            for j in 0..20 {
                let closed = ntk_2layer_closed(&rows[i], &rows[j]).unwrap();
                assert!((k.gram.get(i, j) - closed).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn limiting_diagonal_equals_depth() {
        let x = sample_sphere(5, 4, &mut RngStream::new(2, 0)).unwrap();
        for depth in 2..6 {
            let k = limiting_ntk(&x, depth).unwrap();
            for i in 0..5 {
                assert!((k.gram.get(i, i) - depth as f64).abs() < 1e-12);
            }
        }
        let single = limiting_ntk(&x.rows(0, 1).into_owned(), 3).unwrap();
        assert_eq!(single.order(), 1);
        assert!(single.gram.get(0, 0) > 0.0);
    }

    #[test]
    fn limiting_rejects_zero_rows() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(limiting_ntk(&x, 2).is_err());
        assert!(limiting_ntk(&DMatrix::identity(2, 2), 1).is_err());
    }

    #[test]
    fn limiting_pair_matches_matrix_builder() {
        let x = sample_sphere(6, 5, &mut RngStream::new(3, 0)).unwrap();
        let k = limiting_ntk(&x, 4).unwrap();
        let kern = LimitingNtk::new(4).unwrap();
        let rows = rows_of(&x);
        assert!((kern.eval(&rows[1], &rows[4]) - k.gram.get(1, 4)).abs() < 1e-14);
    }

    #[test]
    fn laplace_examples() {
        let e1 = [1.0, 0.0];
        assert_eq!(laplace_kernel(&e1, &e1, 1.0).unwrap(), 1.0);
        assert!((laplace_kernel(&e1, &[-1.0, 0.0], 1.0).unwrap() - (-2.0f64).exp()).abs() < 1e-15);
        assert!((laplace_kernel(&e1, &[0.0, 1.0], 1.0).unwrap() - 0.24312).abs() < 1e-5);
        assert!(laplace_kernel(&e1, &e1, 0.0).is_err());
        let sphere = laplace_on_sphere(2f64.sqrt()).unwrap();
        let a = [0.6, 0.8];
        let b = [0.8, -0.6];
        assert!((sphere.eval(&a, &b) - laplace_kernel(&a, &b, 1.0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn empirical_diagonal_is_gradient_norm() {
        let w = init_weights(&NetConfig::new(3, 12, 4).unwrap(), &mut RngStream::new(4, 0)).unwrap();
        let x = sample_sphere(5, 4, &mut RngStream::new(4, 1)).unwrap();
        let k = empirical_ntk(&w, &x, EmpiricalNtkScaling::Raw).unwrap();
        for i in 0..5 {
            let xi: Vec<f64> = x.row(i).iter().copied().collect();
            let g = crate::network::gradient(&w, &xi).unwrap();
            let sq: f64 = g.iter().map(|m| m.norm_squared()).sum();
            assert!((k.gram.get(i, i) - sq).abs() <= 1e-12 * sq);
        }
        let k2 = empirical_ntk(&w, &x, EmpiricalNtkScaling::NtkParameterization).unwrap();
        assert!(k2.gram.matrix() == &k2.gram.matrix().transpose());
    }

    #[test]
    fn empirical_pair_converges_to_closed_form() {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.6, 0.8, 0.0]);
        let target = ntk_2layer_closed(&[1.0, 0.0, 0.0], &[0.6, 0.8, 0.0]).unwrap();
        let mut errs = Vec::new();
        for m in [256, 16384] {
            let mut e = 0.0;
            for seed in 0..5 {
                let w = init_weights(&NetConfig::new(2, m, 3).unwrap(), &mut RngStream::new(seed, 9)).unwrap();
                let k = empirical_ntk(&w, &x, EmpiricalNtkScaling::NtkParameterization).unwrap();
                e += (k.gram.get(0, 1) - target).abs() / target;
            }
            errs.push(e / 5.0);
        }
        assert!(errs[1] < 0.05, "relative error {}", errs[1]);
        assert!(errs[1] < errs[0]);
    }

    #[test]
    fn builders_are_psd_up_to_rounding() {
        let x = sample_sphere(30, 6, &mut RngStream::new(5, 0)).unwrap();
        let w = init_weights(&NetConfig::new(2, 64, 6).unwrap(), &mut RngStream::new(5, 1)).unwrap();
        let mats = [
            limiting_ntk(&x, 3).unwrap(),
            empirical_ntk(&w, &x, EmpiricalNtkScaling::default()).unwrap(),
            kernel_matrix(&x, &LaplaceKernel::new(1.0).unwrap(), Provenance::Laplace, BTreeMap::new()),
        ];
        for k in &mats {
            let n = k.order() as f64;
            assert!(sym_eig_min(&k.gram).unwrap() >= -1e-8 * k.gram.trace() / n);
            let s = k.summary().unwrap();
            assert!(s.min_eigenvalue <= s.max_eigenvalue);
        }
    }

    #[test]
    fn gap_on_constant_blocks() {
        let x = DMatrix::from_row_slice(4, 1, &[1.0, 1.0, -1.0, -1.0]);
        let labels = [0, 0, 1, 1];
        let block = DotProductKernel(|u: f64| if u > 0.0 { 3.0 } else { 0.5 });
        let gap = assumption_gap(&x, &labels, &block).unwrap();
        assert_eq!(gap.gap, 2.5);
        assert_eq!(gap.confusion, vec![vec![3.0, 0.5], vec![0.5, 3.0]]);
        assert_eq!(gap.diagonal_dominance(), 2);
        assert!(matches!(assumption_gap(&x, &[0, 0, 1, 2], &block), Err(Error::InsufficientData { class: 1 })));
    }

    #[test]
    fn gap_positive_for_halfspace_labels() {
        let x = sample_sphere(600, 8, &mut RngStream::new(6, 0)).unwrap();
        let labels: Vec<i64> = (0..600).map(|i| if x[(i, 0)] >= 0.0 { 1 } else { -1 }).collect();
        let gap = assumption_gap(&x, &labels, &ArcCosineNtk2).unwrap();
        assert!(gap.gap > 0.0);
    }

    #[test]
    fn shuffled_labels_have_no_gap() {
        let x = sample_sphere(300, 8, &mut RngStream::new(7, 0)).unwrap();
        let mut rng = RngStream::new(7, 1);
        let null: Vec<f64> = (0..30)
            .map(|_| {
                let labels: Vec<i64> = (0..300).map(|_| if rng.uniform() < 0.5 { 1 } else { -1 }).collect();
                assumption_gap(&x, &labels, &ArcCosineNtk2).unwrap().gap
            })
            .collect();
        let mean = null.iter().sum::<f64>() / 30.0;
        let sd = (null.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / 29.0).sqrt();
        let mut labels: Vec<i64> = (0..300).map(|i| if x[(i, 0)] >= 0.0 { 1 } else { -1 }).collect();
        let real = assumption_gap(&x, &labels, &ArcCosineNtk2).unwrap().gap;
        rng.shuffle(&mut labels);
        let shuffled = assumption_gap(&x, &labels, &ArcCosineNtk2).unwrap().gap;
        assert!(shuffled.abs() <= 3.0 * sd, "shuffled {shuffled}, null sd {sd}");
        assert!(real > 10.0 * sd, "real {real}, null sd {sd}");
    }

    #[test]
    fn reference_gap_is_twice_mean_abs_coordinate() {
        let x = sample_sphere(200_000, 8, &mut RngStream::new(8, 0)).unwrap();
        let mc = 2.0 * x.column(0).iter().map(|v| v.abs()).sum::<f64>() / 200_000.0;
        assert!((reference_gap(8, 1.0) - mc).abs() < 0.005, "{} vs {mc}", reference_gap(8, 1.0));
        assert!((reference_gap(3, 1.0) - 1.0).abs() < 1e-12);
        assert!((reference_gap(8, 2.0) - 4.0 * reference_gap(8, 1.0)).abs() < 1e-12);
        // sqrt(d) E|x_0| tends to sqrt(2/pi).
        let limit = reference_gap(1_000_000, 1.0) * 1000.0;
        assert!((limit - 2.0 * (2.0 / PI).sqrt()).abs() < 1e-5);
    }
}
