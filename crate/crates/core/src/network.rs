//! Bias-free fully-connected ReLU network of depth `L`:
//! `h_0 = x`, `h_l = relu(W_l h_{l-1})` for `l < L`, `f(x) = W_L h_{L-1}`.
//!
//! Weights are `m×d`, `(m×m)^{L-2}`, `1×m`. Initialization draws hidden
//! layers from `N(0, 2/m)` and the output layer from `N(0, 1)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{sample_gaussian, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub depth: usize,
    pub width: usize,
    pub input_dim: usize,
}

impl NetConfig {
    pub fn new(depth: usize, width: usize, input_dim: usize) -> Result<Self> {
        let cfg = Self { depth, width, input_dim };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(invalid(format!("depth must be at least 2, got {}", self.depth)));
        }
        if self.width == 0 || self.input_dim == 0 {
            return Err(invalid("width and input dimension must be positive"));
        }
        Ok(())
    }

    /// `(rows, cols)` of every layer.
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        let mut s = Vec::with_capacity(self.depth);
        s.push((self.width, self.input_dim));
        for _ in 0..self.depth - 2 {
            s.push((self.width, self.width));
        }
        s.push((1, self.width));
        s
    }

    /// Initialization variance per layer: `2/m` for hidden layers, `1` for the output.
    pub fn init_variances(&self) -> Vec<f64> {
        let mut v = vec![2.0 / self.width as f64; self.depth - 1];
        v.push(1.0);
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightSet {
    layers: Vec<DMatrix<f64>>,
}

impl WeightSet {
    pub fn from_layers(layers: Vec<DMatrix<f64>>) -> Result<Self> {
        if layers.len() < 2 {
            return Err(invalid("a network needs at least two layers"));
        }
        let cfg = NetConfig::new(layers.len(), layers[0].nrows(), layers[0].ncols())?;
        for (l, (w, (r, c))) in layers.iter().zip(cfg.shapes()).enumerate() {
            if w.shape() != (r, c) {
                return Err(invalid(format!("layer {} has shape {:?}, expected {:?}", l + 1, w.shape(), (r, c))));
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("layer {} has non-finite entries", l + 1)));
            }
        }
        Ok(Self { layers })
    }

    pub fn config(&self) -> NetConfig {
        NetConfig { depth: self.layers.len(), width: self.layers[0].nrows(), input_dim: self.layers[0].ncols() }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[DMatrix<f64>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DMatrix<f64>] {
        &mut self.layers
    }

    pub fn layer(&self, l: usize) -> &DMatrix<f64> {
        &self.layers[l]
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|w| w.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|w| w.iter().all(|v| v.is_finite()))
    }
}

pub fn init_weights(cfg: &NetConfig, rng: &mut RngStream) -> Result<WeightSet> {
    cfg.validate()?;
    let layers = cfg
        .shapes()
        .into_iter()
        .zip(cfg.init_variances())
        .map(|((r, c), var)| sample_gaussian(rng, r, c, var))
        .collect::<Result<Vec<_>>>()?;
    Ok(WeightSet { layers })
}

/// Activations of one forward pass. Index `k` refers to hidden layer `k + 1`.
#[derive(Clone, Debug)]
pub struct ForwardRecord {
    pub input: DVector<f64>,
    pub preacts: Vec<DVector<f64>>,
    pub acts: Vec<DVector<f64>>,
    pub output: f64,
}

impl ForwardRecord {
    /// `h_{l-1}` feeding layer `l` (1-based), i.e. the input for `l = 1`.
    pub fn layer_input(&self, l: usize) -> &DVector<f64> {
        if l == 1 {
            &self.input
        } else {
            &self.acts[l - 2]
        }
    }
}

fn check_input(w: &WeightSet, x: &[f64]) -> Result<()> {
    let d = w.layers[0].ncols();
    if x.len() != d {
        return Err(invalid(format!("input has dimension {}, network expects {d}", x.len())));
    }
    Ok(())
}

pub fn forward(w: &WeightSet, x: &[f64]) -> Result<ForwardRecord> {
    check_input(w, x)?;
    let input = DVector::from_column_slice(x);
    let hidden = w.depth() - 1;
    let mut preacts = Vec::with_capacity(hidden);
    let mut acts: Vec<DVector<f64>> = Vec::with_capacity(hidden);
    for l in 0..hidden {
        let h_prev = if l == 0 { &input } else { &acts[l - 1] };
        let pre = &w.layers[l] * h_prev;
        let act = pre.map(|v| v.max(0.0));
        preacts.push(pre);
        acts.push(act);
    }
    let output = w.layers[hidden].row(0).transpose().dot(&acts[hidden - 1]);
    Ok(ForwardRecord { input, preacts, acts, output })
}

/// Scalar output only.
pub fn predict(w: &WeightSet, x: &[f64]) -> Result<f64> {
    forward(w, x).map(|r| r.output)
}

/// Outputs for every row of `x` (batched through matrix products).
pub fn predict_batch(w: &WeightSet, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    if x.ncols() != w.layers[0].ncols() {
        return Err(invalid(format!("inputs have dimension {}, network expects {}", x.ncols(), w.layers[0].ncols())));
    }
    let hidden = w.depth() - 1;
    let mut h = x * w.layers[0].transpose();
    h.apply(|v| *v = v.max(0.0));
    for l in 1..hidden {
        h = &h * w.layers[l].transpose();
        h.apply(|v| *v = v.max(0.0));
    }
    Ok(&h * w.layers[hidden].row(0).transpose())
}

/// Backward vectors `b_l` with `∂f/∂W_l = b_l h_{l-1}ᵀ`; `b_L = [1]`,
/// `b_l = D_l W_{l+1}ᵀ b_{l+1}`. Index `l - 1` holds layer `l`.
pub fn backward_vectors(w: &WeightSet, rec: &ForwardRecord) -> Vec<DVector<f64>> {
    let depth = w.depth();
    let mut b = vec![DVector::zeros(0); depth];
    b[depth - 1] = DVector::from_element(1, 1.0);
    for l in (0..depth - 1).rev() {
        let mut v = w.layers[l + 1].tr_mul(&b[l + 1]);
        for (vk, &pk) in v.iter_mut().zip(rec.preacts[l].iter()) {
            if pk < 0.0 {
                *vk = 0.0;
            }
        }
        b[l] = v;
    }
    b
}

/// `∂f/∂W_l` for every layer.
pub fn gradient(w: &WeightSet, x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
    let rec = forward(w, x)?;
    let b = backward_vectors(w, &rec);
    Ok((0..w.depth()).map(|l| &b[l] * rec.layer_input(l + 1).transpose()).collect())
}

/// Gradient of the output with respect to the input, `W_1ᵀ b_1`.
pub fn input_gradient(w: &WeightSet, x: &[f64]) -> Result<DVector<f64>> {
    let rec = forward(w, x)?;
    let b = backward_vectors(w, &rec);
    Ok(w.layers[0].tr_mul(&b[0]))
}

/// Activation pattern per hidden layer; entry `k` is set iff `(W_l h_{l-1})_k >= 0`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignPattern {
    pub masks: Vec<Vec<bool>>,
}

impl SignPattern {
    pub fn from_record(rec: &ForwardRecord) -> Self {
        Self { masks: rec.preacts.iter().map(|p| p.iter().map(|&v| v >= 0.0).collect()).collect() }
    }

    /// `D_l (W_l h_{l-1})` for hidden layer `k + 1`.
    pub fn apply(&self, k: usize, preact: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            preact.len(),
            preact.iter().zip(&self.masks[k]).map(|(&p, &on)| if on { p } else { 0.0 }),
        )
    }
}

pub fn sign_pattern(w: &WeightSet, x: &[f64]) -> Result<SignPattern> {
    Ok(SignPattern::from_record(&forward(w, x)?))
}

/// Per-layer Frobenius distances `‖W_l - W0_l‖_F`.
pub fn weight_distance(w: &WeightSet, w0: &WeightSet) -> Result<Vec<f64>> {
    if w.depth() != w0.depth() {
        return Err(invalid("weight sets have different depths"));
    }
    w.layers
        .iter()
        .zip(&w0.layers)
        .enumerate()
        .map(|(l, (a, b))| {
            if a.shape() != b.shape() {
                Err(invalid(format!("layer {} shapes differ: {:?} vs {:?}", l + 1, a.shape(), b.shape())))
            } else {
                Ok((a - b).norm())
            }
        })
        .collect()
}

/// Largest per-layer distance; `W` lies in the ω-neighborhood of `W0` iff this is `<= ω`.
pub fn neighborhood_radius(w: &WeightSet, w0: &WeightSet) -> Result<f64> {
    Ok(weight_distance(w, w0)?.into_iter().fold(0.0, f64::max))
}

pub fn in_neighborhood(w: &WeightSet, w0: &WeightSet, omega: f64) -> Result<bool> {
    Ok(neighborhood_radius(w, w0)? <= omega)
}

/// Spectral norm by power iteration on `AᵀA` from the normalized all-ones
/// vector; at most 1000 iterations, stopping at relative change `1e-10`.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut sigma = 0.0;
    for _ in 0..1000 {
        let av = a * &v;
        let next = av.norm();
        if next == 0.0 {
            return 0.0;
        }
        let mut w = a.tr_mul(&av);
        let wn = w.norm();
        if wn == 0.0 {
            return next;
        }
        w /= wn;
        let converged = (next - sigma).abs() <= 1e-10 * next;
        sigma = next;
        v = w;
        if converged {
            break;
        }
    }
    sigma.max((a * &v).norm())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimates {
    /// `Π_l ‖W_l‖₂`.
    pub spectral_upper: f64,
    /// `max` over probes of `‖∂f/∂x‖₂`.
    pub empirical_lower: f64,
}

pub fn lipschitz_estimates(w: &WeightSet, probes: &DMatrix<f64>) -> Result<LipschitzEstimates> {
    if probes.nrows() == 0 {
        return Err(invalid("Lipschitz estimate needs at least one probe input"));
    }
    if probes.ncols() != w.layers[0].ncols() {
        return Err(invalid("probe dimension does not match network input"));
    }
    let spectral_upper = w.layers.iter().map(spectral_norm).product();
    let mut empirical_lower: f64 = 0.0;
    for i in 0..probes.nrows() {
        let x: Vec<f64> = probes.row(i).iter().copied().collect();
        empirical_lower = empirical_lower.max(input_gradient(w, &x)?.norm());
    }
    Ok(LipschitzEstimates { spectral_upper, empirical_lower })
}

const WEIGHTS_MAGIC: &[u8; 8] = b"NTKLABW1";

/// JSON sidecar written next to a binary weight file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSidecar {
    pub depth: usize,
    pub width: usize,
    pub input_dim: usize,
    pub shapes: Vec<(usize, usize)>,
    pub byte_len: usize,
}

/// Binary layout: magic `NTKLABW1`, then `L`, `m`, `d` as little-endian u64,
/// then every layer row-major as little-endian f64.
pub fn encode_weights(w: &WeightSet) -> Vec<u8> {
    let cfg = w.config();
    let mut out = Vec::with_capacity(32 + 8 * w.num_params());
    out.extend_from_slice(WEIGHTS_MAGIC);
    for v in [cfg.depth, cfg.width, cfg.input_dim] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for layer in &w.layers {
        for i in 0..layer.nrows() {
            for j in 0..layer.ncols() {
                out.extend_from_slice(&layer[(i, j)].to_le_bytes());
            }
        }
    }
    out
}

pub fn sidecar(w: &WeightSet) -> WeightSidecar {
    let cfg = w.config();
    WeightSidecar {
        depth: cfg.depth,
        width: cfg.width,
        input_dim: cfg.input_dim,
        shapes: cfg.shapes(),
        byte_len: 32 + 8 * w.num_params(),
    }
}

pub fn decode_weights(bytes: &[u8]) -> Result<WeightSet> {
    if bytes.len() < 32 {
        return Err(Error::Format { offset: bytes.len(), message: "weight header truncated".into() });
    }
    if &bytes[..8] != WEIGHTS_MAGIC {
        return Err(Error::Format { offset: 0, message: "bad weight-file magic".into() });
    }
    let field = |k: usize| {
        let o = 8 + 8 * k;
        u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8-byte slice"))
    };
    let as_usize = |v: u64, offset: usize| {
        usize::try_from(v).map_err(|_| Error::Format { offset, message: format!("header value {v} too large") })
    };
    let depth = as_usize(field(0), 8)?;
    let width = as_usize(field(1), 16)?;
    let input_dim = as_usize(field(2), 24)?;
    let cfg = NetConfig { depth, width, input_dim };
    cfg.validate().map_err(|e| Error::Format { offset: 8, message: e.to_string() })?;
    let count = width
        .checked_mul(input_dim)
        .and_then(|a| width.checked_mul(width).and_then(|b| b.checked_mul(depth - 2)).and_then(|b| a.checked_add(b)))
        .and_then(|a| a.checked_add(width))
        .ok_or_else(|| Error::Format { offset: 8, message: "parameter count overflows".into() })?;
    let expected = count
        .checked_mul(8)
        .and_then(|b| b.checked_add(32))
        .ok_or_else(|| Error::Format { offset: 8, message: "byte length overflows".into() })?;
    if bytes.len() != expected {
        return Err(Error::Format {
            offset: bytes.len().min(expected),
            message: format!("weight payload is {} bytes, header implies {expected}", bytes.len()),
        });
    }
    let mut offset = 32;
    let mut layers = Vec::with_capacity(depth);
    for (r, c) in cfg.shapes() {
        let mut m = DMatrix::zeros(r, c);
        for i in 0..r {
            for j in 0..c {
                let v = f64::from_le_bytes(bytes[offset..offset + 8].try_into().expect("8-byte slice"));
                if !v.is_finite() {
                    return Err(Error::Format { offset, message: "non-finite weight".into() });
                }
                m[(i, j)] = v;
                offset += 8;
            }
        }
        layers.push(m);
    }
    Ok(WeightSet { layers })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(depth: usize, width: usize, d: usize, seed: u64) -> WeightSet {
        init_weights(&NetConfig::new(depth, width, d).unwrap(), &mut RngStream::new(seed, 0)).unwrap()
    }

    #[test]
    fn init_shapes() {
        let w = net(2, 4, 3, 1);
        let shapes: Vec<_> = w.layers().iter().map(|l| l.shape()).collect();
        assert_eq!(shapes, vec![(4, 3), (1, 4)]);
        let w = net(4, 5, 2, 1);
        let shapes: Vec<_> = w.layers().iter().map(|l| l.shape()).collect();
        assert_eq!(shapes, vec![(5, 2), (5, 5), (5, 5), (1, 5)]);
        assert!(NetConfig::new(1, 4, 3).is_err());
    }

    #[test]
    fn init_variances_match_scheme() {
        let m = 4096;
        let w = net(3, m, 8, 2);
        let var = |a: &DMatrix<f64>| {
            let n = a.len() as f64;
            let mean = a.sum() / n;
            a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        };
        let hidden = var(w.layer(1));
        assert!(hidden >= 0.9 * 2.0 / m as f64 && hidden <= 1.1 * 2.0 / m as f64);
        let last = var(w.layer(2));
        assert!((0.9..=1.1).contains(&last), "output-layer variance {last}");
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let w = net(3, 16, 5, 3);
        assert_eq!(predict(&w, &[0.0; 5]).unwrap(), 0.0);
        let grads = gradient(&w, &[0.0; 5]).unwrap();
        for g in &grads[..2] {
            assert!(g.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn hand_computed_two_layer() {
        let w = WeightSet::from_layers(vec![
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
        ])
        .unwrap();
        let rec = forward(&w, &[3.0]).unwrap();
        assert_eq!(rec.acts[0].as_slice(), &[3.0, 0.0]);
        assert_eq!(rec.output, 3.0);
    }

    #[test]
    fn positive_homogeneity() {
        let w = net(3, 32, 6, 4);
        let x = [0.3, -0.2, 0.9, 0.1, -0.5, 0.4];
        let f = predict(&w, &x).unwrap();
        let x2: Vec<f64> = x.iter().map(|v| 2.5 * v).collect();
        let f2 = predict(&w, &x2).unwrap();
        assert!((f2 - 2.5 * f).abs() <= 1e-12 * f.abs().max(1.0));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let w = net(2, 4, 3, 1);
        assert!(matches!(forward(&w, &[1.0, 2.0]), Err(Error::InvalidArgument(_))));
        assert!(gradient(&w, &[1.0]).is_err());
    }

    #[test]
    fn last_layer_gradient_is_activation() {
        let w = net(3, 8, 4, 5);
        let x = [0.5, -0.1, 0.3, 0.7];
        let rec = forward(&w, &x).unwrap();
        let g = gradient(&w, &x).unwrap();
        assert_eq!(g[2].row(0).transpose(), rec.acts[1]);
    }

    #[test]
    fn batch_prediction_matches_single() {
        let w = net(3, 20, 4, 6);
        let x = DMatrix::from_fn(5, 4, |i, j| ((i * 4 + j) as f64 * 0.37).sin());
        let batch = predict_batch(&w, &x).unwrap();
        for i in 0..5 {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            assert!((batch[i] - predict(&w, &row).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn sign_pattern_ties_are_active_and_reproduce_acts() {
        let w = net(3, 10, 3, 7);
        let zero = sign_pattern(&w, &[0.0; 3]).unwrap();
        assert!(zero.masks.iter().all(|m| m.iter().all(|&b| b)));
        let x = [0.2, -0.4, 0.9];
        let rec = forward(&w, &x).unwrap();
        let pat = sign_pattern(&w, &x).unwrap();
        assert_eq!(pat, SignPattern::from_record(&rec));
        for k in 0..rec.acts.len() {
            assert_eq!(pat.apply(k, &rec.preacts[k]), rec.acts[k]);
        }
    }

    #[test]
    fn distance_examples() {
        let w = net(3, 4, 2, 8);
        assert!(weight_distance(&w, &w).unwrap().iter().all(|&v| v == 0.0));
        let mut w2 = w.clone();
        w2.layers_mut()[1][(2, 3)] += 0.3;
        let d = weight_distance(&w2, &w).unwrap();
        assert!((d[1] - 0.3).abs() < 1e-15 && d[0] == 0.0 && d[2] == 0.0);
        assert_eq!(d, weight_distance(&w, &w2).unwrap());
        assert!(in_neighborhood(&w2, &w, 0.31).unwrap());
        assert!(!in_neighborhood(&w2, &w, 0.29).unwrap());
        let other = net(2, 4, 2, 8);
        assert!(weight_distance(&w, &other).is_err());
    }

    #[test]
    fn lipschitz_orthonormal_layers() {
        let mut w1 = DMatrix::zeros(3, 2);
        w1[(0, 0)] = 1.0;
        w1[(1, 1)] = 1.0;
        let w2 = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        let w = WeightSet::from_layers(vec![w1, w2]).unwrap();
        let probes = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let est = lipschitz_estimates(&w, &probes).unwrap();
        assert!((est.spectral_upper - 1.0).abs() < 1e-12);
        assert!(est.empirical_lower <= est.spectral_upper);
        assert!(lipschitz_estimates(&w, &DMatrix::zeros(0, 2)).is_err());
    }

    #[test]
    fn lipschitz_scales_with_output_layer() {
        let w = net(3, 12, 4, 9);
        let probes = DMatrix::from_fn(6, 4, |i, j| ((i + 2 * j) as f64).cos());
        let a = lipschitz_estimates(&w, &probes).unwrap();
        let mut w3 = w.clone();
        w3.layers_mut()[2] *= 3.0;
        let b = lipschitz_estimates(&w3, &probes).unwrap();
        assert!((b.spectral_upper - 3.0 * a.spectral_upper).abs() <= 1e-9 * b.spectral_upper);
        assert!((b.empirical_lower - 3.0 * a.empirical_lower).abs() <= 1e-12 * b.empirical_lower);
    }

    #[test]
    fn spectral_norm_matches_svd() {
        let mut rng = RngStream::new(4, 4);
        let a = sample_gaussian(&mut rng, 30, 20, 1.0).unwrap();
        let exact = a.singular_values().max();
        assert!((spectral_norm(&a) - exact).abs() <= 1e-6 * exact);
    }

    #[test]
    fn weights_roundtrip_and_sidecar() {
        let w = net(3, 5, 2, 10);
        let bytes = encode_weights(&w);
        assert_eq!(bytes.len(), sidecar(&w).byte_len);
        assert_eq!(decode_weights(&bytes).unwrap(), w);
        assert!(decode_weights(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_weights(&bad), Err(Error::Format { offset: 0, .. })));
    }
}
