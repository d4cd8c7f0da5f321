//! Synthetic data: the two-cluster mixture with flipped labels, uniform
//! sphere inputs, kernel-expansion regression targets, and IDX ingestion for
//! real image data.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::ntk::Kernel;
use crate::numerics::RngStream;

/// Parameters of the label-noise mixture `x = z + ỹ μ`, `z ~ N(0, I_d)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub d: usize,
    pub mu: Vec<f64>,
    pub eta: f64,
    /// Strong log-concavity of the cluster law (1 for the standard Gaussian).
    pub lambda_lc: f64,
    /// Constant with `E‖z‖² > kappa_data · d`.
    pub kappa_data: f64,
    pub c_norm: f64,
}

impl MixtureSpec {
    /// Gaussian clusters with mean `mu_norm · e_1`, data norm capped at 1.
    pub fn standard(d: usize, mu_norm: f64, eta: f64) -> Self {
        let mut mu = vec![0.0; d];
        if d > 0 {
            mu[0] = mu_norm;
        }
        Self { d, mu, eta, lambda_lc: 1.0, kappa_data: 0.9, c_norm: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(invalid("mixture dimension must be positive"));
        }
        if self.mu.len() != self.d {
            return Err(invalid(format!("mean has length {}, expected {}", self.mu.len(), self.d)));
        }
        if !(0.0..0.5).contains(&self.eta) {
            return Err(invalid(format!("noise rate {} outside [0, 0.5)", self.eta)));
        }
        if !(self.lambda_lc > 0.0 && self.kappa_data > 0.0 && self.c_norm > 0.0) {
            return Err(invalid("lambda_lc, kappa_data and c_norm must be positive"));
        }
        if self.mu.iter().any(|v| !v.is_finite()) {
            return Err(invalid("mean vector has non-finite entries"));
        }
        Ok(())
    }
}

/// Inputs with noisy labels `y`, clean labels `y_clean`, and the mask of
/// flipped indices.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureDataset {
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    pub y_clean: Vec<f64>,
    pub noise_mask: Vec<bool>,
    /// Uniform factor applied to every raw sample `z + ỹ μ`.
    pub scale: f64,
}

impl MixtureDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    pub fn noise_fraction(&self) -> f64 {
        self.noise_mask.iter().filter(|&&b| b).count() as f64 / self.len().max(1) as f64
    }

    /// Header `x0..x{d-1},y,y_clean,is_noisy`.
    pub fn to_csv(&self) -> String {
        let d = self.dim();
        let mut out = String::new();
        for j in 0..d {
            let _ = write!(out, "x{j},");
        }
        out.push_str("y,y_clean,is_noisy\n");
        for i in 0..self.len() {
            for j in 0..d {
                let _ = write!(out, "{},", self.x[(i, j)]);
            }
            let _ = writeln!(
                out,
                "{},{},{}",
                self.y[i] as i64,
                self.y_clean[i] as i64,
                u8::from(self.noise_mask[i])
            );
        }
        out
    }

    fn subset(&self, range: std::ops::Range<usize>) -> Self {
        let rows = range.len();
        Self {
            x: self.x.rows(range.start, rows).into_owned(),
            y: self.y[range.clone()].to_vec(),
            y_clean: self.y_clean[range.clone()].to_vec(),
            noise_mask: self.noise_mask[range].to_vec(),
            scale: self.scale,
        }
    }
}

/// Draws `n` samples: `ỹ ~ U{±1}`, `z ~ N(0, I)`, `x = z + ỹ μ`, label flipped
/// with probability `eta`, then all rows scaled by one factor so the largest
/// row norm equals `c_norm`.
pub fn sample_mixture(spec: &MixtureSpec, n: usize, rng: &mut RngStream) -> Result<MixtureDataset> {
    Ok(sample_mixture_splits(spec, &[n], rng)?.remove(0))
}

/// One joint draw cut into consecutive splits (e.g. train / test / held-out),
/// so every split shares the same norm-cap scale factor.
pub fn sample_mixture_splits(
    spec: &MixtureSpec,
    sizes: &[usize],
    rng: &mut RngStream,
) -> Result<Vec<MixtureDataset>> {
    spec.validate()?;
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(invalid("every split needs at least one sample"));
    }
    let n: usize = sizes.iter().sum();
    let d = spec.d;
    let mut x = DMatrix::zeros(n, d);
    let mut y = Vec::with_capacity(n);
    let mut y_clean = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    for i in 0..n {
        let yc = rng.sign();
        for j in 0..d {
            x[(i, j)] = rng.standard_normal() + yc * spec.mu[j];
        }
        let flip = rng.uniform() < spec.eta;
        y_clean.push(yc);
        y.push(if flip { -yc } else { yc });
        mask.push(flip);
    }
    let max_norm = (0..n).map(|i| x.row(i).norm()).fold(0.0, f64::max);
    let scale = if max_norm > 0.0 { spec.c_norm / max_norm } else { 1.0 };
    x *= scale;
    let all = MixtureDataset { x, y, y_clean, noise_mask: mask, scale };

    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &s in sizes {
        out.push(all.subset(start..start + s));
        start += s;
    }
    Ok(out)
}

/// `n` points i.i.d. uniform on the unit sphere `S^{d-1}`, one per row.
pub fn sample_sphere(n: usize, d: usize, rng: &mut RngStream) -> Result<DMatrix<f64>> {
    if n == 0 || d == 0 {
        return Err(invalid(format!("sphere sample needs n, d >= 1, got n={n}, d={d}")));
    }
    let mut x = DMatrix::zeros(n, d);
    let mut buf = vec![0.0; d];
    for i in 0..n {
        let norm = loop {
            for v in buf.iter_mut() {
                *v = rng.standard_normal();
            }
            let norm = buf.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                break norm;
            }
        };
        for j in 0..d {
            x[(i, j)] = buf[j] / norm;
        }
    }
    Ok(x)
}

/// Ground truth `f(x) = Σ_j a_j k(x, z_j)` with unit-norm anchors `z_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct RkhsTarget {
    pub centers: DMatrix<f64>,
    pub coeffs: DVector<f64>,
    pub sigma_eps: f64,
    /// `sqrt(aᵀ K_zz a)` under the kernel used at synthesis.
    pub rkhs_norm: f64,
}

impl RkhsTarget {
    /// `k` sphere anchors with coefficients `N(0, 1/k)`.
    pub fn synthesize(
        d: usize,
        k: usize,
        sigma_eps: f64,
        kernel: &dyn Kernel,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if !(sigma_eps >= 0.0) {
            return Err(invalid("label noise level must be non-negative"));
        }
        let centers = sample_sphere(k, d, rng)?;
        let sd = (1.0 / k as f64).sqrt();
        let coeffs = DVector::from_fn(k, |_, _| sd * rng.standard_normal());
        Self::from_parts(centers, coeffs, sigma_eps, kernel)
    }

    pub fn from_parts(
        centers: DMatrix<f64>,
        coeffs: DVector<f64>,
        sigma_eps: f64,
        kernel: &dyn Kernel,
    ) -> Result<Self> {
        if centers.nrows() != coeffs.len() {
            return Err(invalid("one coefficient per center required"));
        }
        for i in 0..centers.nrows() {
            let nrm = centers.row(i).norm();
            if (nrm - 1.0).abs() > 1e-12 {
                return Err(invalid(format!("center {i} has norm {nrm}, expected 1")));
            }
        }
        let k = centers.nrows();
        let rows: Vec<Vec<f64>> = (0..k).map(|i| centers.row(i).iter().copied().collect()).collect();
        let mut quad = 0.0;
        for i in 0..k {
            for j in 0..k {
                quad += coeffs[i] * coeffs[j] * kernel.eval(&rows[i], &rows[j]);
            }
        }
        Ok(Self { centers, coeffs, sigma_eps, rkhs_norm: quad.max(0.0).sqrt() })
    }

    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }
}

/// `Σ_j a_j k(x, z_j)`; `x` must lie on the unit sphere.
pub fn eval_rkhs_target(target: &RkhsTarget, x: &[f64], kernel: &dyn Kernel) -> Result<f64> {
    if x.len() != target.dim() {
        return Err(invalid(format!("input has dimension {}, target expects {}", x.len(), target.dim())));
    }
    let nrm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (nrm - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("target input must be unit norm, got {nrm}")));
    }
    let mut z = vec![0.0; target.dim()];
    let mut acc = 0.0;
    for j in 0..target.centers.nrows() {
        for (c, v) in z.iter_mut().enumerate() {
            *v = target.centers[(j, c)];
        }
        acc += target.coeffs[j] * kernel.eval(x, &z);
    }
    Ok(acc)
}

/// Regression sample: sphere inputs, `y = f(x) + σ_ε ε` with Gaussian `ε`.
pub fn sample_regression(
    target: &RkhsTarget,
    n: usize,
    kernel: &dyn Kernel,
    rng: &mut RngStream,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let x = sample_sphere(n, target.dim(), rng)?;
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        y[i] = eval_rkhs_target(target, &row, kernel)? + target.sigma_eps * rng.standard_normal();
    }
    Ok((x, y))
}

pub const IDX_IMAGES_MAGIC: u32 = 2051;
pub const IDX_LABELS_MAGIC: u32 = 2049;

/// Raw 8-bit image tensor from an IDX3 file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            offset,
            message: format!("header truncated: need 4 bytes, {} available", bytes.len().saturating_sub(offset)),
        })
}

/// Parses an IDX3 unsigned-byte image file (magic 2051).
pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format { offset: 0, message: format!("bad image magic {magic}, expected 2051") });
    }
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let expected = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::Format { offset: 4, message: "image dimensions overflow".into() })?;
    let payload = &bytes[16..];
    if payload.len() < expected {
        return Err(Error::Format {
            offset: 16 + payload.len(),
            message: format!("payload truncated: {} of {expected} pixel bytes", payload.len()),
        });
    }
    if payload.len() > expected {
        return Err(Error::Format {
            offset: 16 + expected,
            message: format!("{} trailing bytes after pixel payload", payload.len() - expected),
        });
    }
    Ok(IdxImages { count, rows, cols, pixels: payload.to_vec() })
}

/// Parses an IDX1 unsigned-byte label file (magic 2049); labels must be 0-9.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format { offset: 0, message: format!("bad label magic {magic}, expected 2049") });
    }
    let count = read_u32(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() != count {
        let offset = 8 + payload.len().min(count);
        return Err(Error::Format {
            offset,
            message: format!("label payload has {} bytes, header says {count}", payload.len()),
        });
    }
    if let Some(pos) = payload.iter().position(|&l| l > 9) {
        return Err(Error::Format { offset: 8 + pos, message: format!("label {} out of range 0-9", payload[pos]) });
    }
    Ok(payload.to_vec())
}

/// Encodes images as IDX3.
pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IDX_IMAGES_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

/// Encodes labels as IDX1.
pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Images scaled to `[0, 1]` and then normalized to unit rows.
#[derive(Clone, Debug)]
pub struct LabelledImages {
    pub x: DMatrix<f64>,
    pub labels: Vec<u8>,
}

/// Joins parsed images and labels into unit-sphere rows.
pub fn images_to_sphere(images: &IdxImages, labels: &[u8]) -> Result<LabelledImages> {
    if images.count != labels.len() {
        return Err(Error::Format {
            offset: 4,
            message: format!("{} images but {} labels", images.count, labels.len()),
        });
    }
    let dim = images.rows * images.cols;
    let mut x = DMatrix::zeros(images.count, dim);
    for i in 0..images.count {
        let px = &images.pixels[i * dim..(i + 1) * dim];
        let norm = px.iter().map(|&p| (f64::from(p) / 255.0).powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroImage { index: i });
        }
        for (j, &p) in px.iter().enumerate() {
            x[(i, j)] = f64::from(p) / 255.0 / norm;
        }
    }
    Ok(LabelledImages { x, labels: labels.to_vec() })
}

pub fn load_idx(path_images: &Path, path_labels: &Path) -> Result<LabelledImages> {
    let images = parse_idx_images(&std::fs::read(path_images)?)?;
    let labels = parse_idx_labels(&std::fs::read(path_labels)?)?;
    images_to_sphere(&images, &labels)
}

/// First `per_class` samples of each label present, in label order.
pub fn subsample_per_class(data: &LabelledImages, per_class: usize) -> LabelledImages {
    let mut picked = Vec::new();
    for class in 0..=9u8 {
        picked.extend(
            data.labels.iter().enumerate().filter(|(_, &l)| l == class).map(|(i, _)| i).take(per_class),
        );
    }
    let x = DMatrix::from_fn(picked.len(), data.x.ncols(), |r, c| data.x[(picked[r], c)]);
    let labels = picked.iter().map(|&i| data.labels[i]).collect();
    LabelledImages { x, labels }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ntk::{ArcCosineNtk2, LinearKernel};

    #[test]
    fn zero_noise_keeps_labels() {
        let spec = MixtureSpec::standard(5, 3.0, 0.0);
        let ds = sample_mixture(&spec, 200, &mut RngStream::new(1, 0)).unwrap();
        assert!(ds.noise_mask.iter().all(|&b| !b));
        assert_eq!(ds.y, ds.y_clean);
    }

    #[test]
    fn noise_rate_within_binomial_band() {
        let spec = MixtureSpec::standard(4, 3.0, 0.1);
        let ds = sample_mixture(&spec, 10_000, &mut RngStream::new(2, 0)).unwrap();
        let f = ds.noise_fraction();
        assert!((0.09..=0.11).contains(&f), "noise fraction {f}");
        for i in 0..ds.len() {
            assert_eq!(ds.y[i] == ds.y_clean[i], !ds.noise_mask[i]);
        }
    }

    #[test]
    fn rows_respect_norm_cap() {
        let mut spec = MixtureSpec::standard(8, 3.0, 0.2);
        spec.c_norm = 2.5;
        let ds = sample_mixture(&spec, 500, &mut RngStream::new(3, 0)).unwrap();
        let max = (0..ds.len()).map(|i| ds.x.row(i).norm()).fold(0.0, f64::max);
        assert!(max <= spec.c_norm + 1e-12);
        assert!((max - spec.c_norm).abs() < 1e-12);
    }

    #[test]
    fn symmetric_clusters_have_zero_mean_signal() {
        let spec = MixtureSpec::standard(6, 0.0, 0.0);
        let n = 4000;
        let ds = sample_mixture(&spec, n, &mut RngStream::new(4, 0)).unwrap();
        for j in 0..6 {
            let vals: Vec<f64> = (0..n).map(|i| ds.y[i] * ds.x[(i, j)] / ds.scale).collect();
            let mean = vals.iter().sum::<f64>() / n as f64;
            assert!(mean.abs() < 3.0 / (n as f64).sqrt(), "coord {j}: {mean}");
        }
    }

    #[test]
    fn gaussian_cluster_moments() {
        let d = 16;
        let spec = MixtureSpec::standard(d, 3.0, 0.1);
        let n = 2000;
        let ds = sample_mixture(&spec, n, &mut RngStream::new(5, 0)).unwrap();
        let mut sq = 0.0;
        for j in 0..d {
            let mut mean = 0.0;
            for i in 0..n {
                let z = ds.x[(i, j)] / ds.scale - ds.y_clean[i] * spec.mu[j];
                mean += z;
                sq += z * z;
            }
            mean /= n as f64;
            assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        }
        let ratio = sq / n as f64 / d as f64;
        assert!((0.9..=1.1).contains(&ratio), "E|z|^2/d = {ratio}");
    }

    #[test]
    fn invalid_spec_rejected() {
        let mut spec = MixtureSpec::standard(3, 1.0, 0.5);
        assert!(spec.validate().is_err());
        spec.eta = 0.2;
        spec.c_norm = 0.0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn splits_share_scale() {
        let spec = MixtureSpec::standard(3, 3.0, 0.1);
        let parts = sample_mixture_splits(&spec, &[10, 20, 5], &mut RngStream::new(1, 1)).unwrap();
        assert_eq!(parts.iter().map(|p| p.len()).collect::<Vec<_>>(), vec![10, 20, 5]);
        assert!(parts.iter().all(|p| p.scale == parts[0].scale));
    }

    #[test]
    fn csv_header_and_rows() {
        let spec = MixtureSpec::standard(2, 3.0, 0.0);
        let ds = sample_mixture(&spec, 3, &mut RngStream::new(1, 0)).unwrap();
        let csv = ds.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("x0,x1,y,y_clean,is_noisy"));
        assert_eq!(lines.count(), 3);
    }

    #[test]
    fn sphere_rows_unit_norm() {
        let x = sample_sphere(300, 7, &mut RngStream::new(9, 0)).unwrap();
        for i in 0..300 {
            assert!((x.row(i).norm() - 1.0).abs() < 1e-12);
        }
        let x1 = sample_sphere(50, 1, &mut RngStream::new(9, 1)).unwrap();
        assert!(x1.iter().all(|&v| v == 1.0 || v == -1.0));
        assert!(sample_sphere(0, 3, &mut RngStream::new(9, 1)).is_err());
    }

    #[test]
    fn sphere_mean_vector_small() {
        let n = 5000;
        let x = sample_sphere(n, 10, &mut RngStream::new(10, 0)).unwrap();
        let mean = x.row_sum() / n as f64;
        assert!(mean.norm() <= 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn mean_abs_cosine_in_three_dimensions() {
        // E|cos θ| = Γ(d/2) / (Γ((d+1)/2) √π) = 1/2 at d = 3.
        let n = 100_000;
        let x = sample_sphere(n, 3, &mut RngStream::new(12, 0)).unwrap();
        let mut acc = 0.0;
        for i in 0..n / 2 {
            acc += x.row(2 * i).dot(&x.row(2 * i + 1)).abs();
        }
        let mean = acc / (n / 2) as f64;
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
    }

    #[test]
    fn rkhs_target_examples() {
        let kernel = ArcCosineNtk2;
        let z = DMatrix::from_row_slice(1, 2, &[0.6, 0.8]);
        let t = RkhsTarget::from_parts(z.clone(), DVector::from_vec(vec![1.0]), 0.0, &kernel).unwrap();
        let v = eval_rkhs_target(&t, &[0.6, 0.8], &kernel).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
        let zero = RkhsTarget::from_parts(z.clone(), DVector::from_vec(vec![0.0]), 0.0, &kernel).unwrap();
        assert_eq!(eval_rkhs_target(&zero, &[1.0, 0.0], &kernel).unwrap(), 0.0);
        assert!(eval_rkhs_target(&t, &[2.0, 0.0], &kernel).is_err());
    }

    #[test]
    fn rkhs_target_is_linear_in_coefficients() {
        let kernel = LinearKernel;
        let mut rng = RngStream::new(3, 3);
        let t = RkhsTarget::synthesize(4, 16, 0.1, &kernel, &mut rng).unwrap();
        let doubled = RkhsTarget::from_parts(t.centers.clone(), &t.coeffs * 2.0, 0.1, &kernel).unwrap();
        let x = [0.5, 0.5, 0.5, 0.5];
        let a = eval_rkhs_target(&t, &x, &kernel).unwrap();
        let b = eval_rkhs_target(&doubled, &x, &kernel).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-14);
        assert!(t.rkhs_norm.is_finite());
        assert!((doubled.rkhs_norm - 2.0 * t.rkhs_norm).abs() < 1e-12);
    }

    fn fixture(count: usize) -> (Vec<u8>, Vec<u8>) {
        let pixels: Vec<u8> = (0..count * 4).map(|i| (i % 251) as u8 + 1).collect();
        let img = IdxImages { count, rows: 2, cols: 2, pixels };
        let labels: Vec<u8> = (0..count).map(|i| (i % 10) as u8).collect();
        (encode_idx_images(&img), encode_idx_labels(&labels))
    }

    #[test]
    fn idx_roundtrip_counts() {
        let (img, lab) = fixture(10);
        let images = parse_idx_images(&img).unwrap();
        let labels = parse_idx_labels(&lab).unwrap();
        let data = images_to_sphere(&images, &labels).unwrap();
        assert_eq!(data.x.nrows(), 10);
        assert_eq!(data.labels.len(), 10);
        for i in 0..10 {
            assert!((data.x.row(i).norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn idx_wrong_magic() {
        let (mut img, mut lab) = fixture(2);
        img[3] = 0x01;
        assert!(matches!(parse_idx_images(&img), Err(Error::Format { offset: 0, .. })));
        lab[3] = 0x03;
        assert!(matches!(parse_idx_labels(&lab), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn idx_truncated_payload_names_offset() {
        let (img, lab) = fixture(3);
        match parse_idx_images(&img[..img.len() - 2]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, img.len() - 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_idx_images(&img[..10]), Err(Error::Format { offset: 8, .. })));
        assert!(matches!(parse_idx_labels(&lab[..lab.len() - 1]), Err(Error::Format { .. })));
    }

    #[test]
    fn idx_count_mismatch() {
        let (img, _) = fixture(3);
        let lab = encode_idx_labels(&[1, 2]);
        let images = parse_idx_images(&img).unwrap();
        let labels = parse_idx_labels(&lab).unwrap();
        assert!(matches!(images_to_sphere(&images, &labels), Err(Error::Format { .. })));
    }

    #[test]
    fn idx_zero_image_rejected() {
        let img = encode_idx_images(&IdxImages { count: 1, rows: 2, cols: 2, pixels: vec![0; 4] });
        let images = parse_idx_images(&img).unwrap();
        assert!(matches!(images_to_sphere(&images, &[3]), Err(Error::ZeroImage { index: 0 })));
    }

    #[test]
    fn idx_label_out_of_range() {
        let lab = encode_idx_labels(&[1, 12]);
        assert!(matches!(parse_idx_labels(&lab), Err(Error::Format { offset: 9, .. })));
    }
}
