//! Logistic-loss SGD with one sample per step, traced margins, risks and
//! weight drift; plus full-batch squared-loss gradient descent for the
//! kernel-regression comparison.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::datagen::MixtureDataset;
use crate::error::{invalid, Error, Result};
use crate::network::{backward_vectors, forward, predict_batch, weight_distance, WeightSet};
use crate::numerics::RngStream;

/// `log(1 + exp(-z))`, stable for large `|z|`.
pub fn logistic_loss(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// `g(z) = -ℓ'(z) = 1 / (1 + exp(z))`.
pub fn loss_derivative_g(z: f64) -> f64 {
    if z > 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// Label prediction with `sgn(0) = +1`.
pub fn sign_label(f: f64) -> f64 {
    if f >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub alpha: f64,
    pub epochs: usize,
    /// Stop once the empirical risk is at most this value.
    pub stop_risk: f64,
    /// Stop once the training 0-1 error is at most this value.
    pub stop_train01: Option<f64>,
    /// Reshuffle the sample order in every epoch after the first.
    pub shuffle: bool,
    pub rng: RngStream,
}

impl TrainConfig {
    pub fn new(alpha: f64, epochs: usize, rng: RngStream) -> Self {
        Self { alpha, epochs, stop_risk: 0.0, stop_train01: None, shuffle: true, rng }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(invalid(format!("step size must be positive and finite, got {}", self.alpha)));
        }
        if self.epochs == 0 {
            return Err(invalid("at least one epoch is required"));
        }
        if !(self.stop_risk >= 0.0) {
            return Err(invalid("stop risk must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub risk: f64,
    /// Loss at the most recently sampled point (`NaN` before the first step).
    pub sample_loss: f64,
    /// Mean of `ỹ f(x)` over the held-out clean set (`NaN` without one).
    pub margin: f64,
    pub train01: f64,
    pub drift: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
}

impl TrainTrace {
    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn steps(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.step as f64).collect()
    }

    pub fn margins(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.margin).collect()
    }

    /// `step,risk,margin,train01,drift_l1..drift_lL`.
    pub fn to_csv(&self) -> String {
        let depth = self.records.first().map_or(0, |r| r.drift.len());
        let mut out = String::from("step,risk,margin,train01");
        for l in 1..=depth {
            write!(out, ",drift_l{l}").expect("writing to a String cannot fail");
        }
        out.push('\n');
        for r in &self.records {
            write!(out, "{},{:e},{:e},{:e}", r.step, r.risk, r.margin, r.train01).expect("writing to a String cannot fail");
            for v in &r.drift {
                write!(out, ",{v:e}").expect("writing to a String cannot fail");
            }
            out.push('\n');
        }
        out
    }
}

/// Mean logistic loss over the noisy labels.
pub fn empirical_risk(w: &WeightSet, data: &MixtureDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(invalid("empirical risk of an empty dataset"));
    }
    let f = predict_batch(w, &data.x)?;
    Ok(f.iter().zip(&data.y).map(|(fi, yi)| logistic_loss(yi * fi)).sum::<f64>() / data.len() as f64)
}

fn error_rate(scores: &DVector<f64>, labels: &[f64]) -> f64 {
    let wrong = scores.iter().zip(labels).filter(|(f, y)| sign_label(**f) != **y).count();
    wrong as f64 / labels.len() as f64
}

/// Fraction of points with label `!= sgn(f)`; `use_clean` selects `ỹ`.
pub fn test_error(w: &WeightSet, test: &MixtureDataset, use_clean: bool) -> Result<f64> {
    if test.is_empty() {
        return Err(invalid("test error of an empty dataset"));
    }
    let f = predict_batch(w, &test.x)?;
    Ok(error_rate(&f, if use_clean { &test.y_clean } else { &test.y }))
}

/// Mean of `ỹ f(x)` over a dataset's clean labels.
pub fn clean_margin(w: &WeightSet, data: &MixtureDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(invalid("margin of an empty dataset"));
    }
    let f = predict_batch(w, &data.x)?;
    Ok(f.iter().zip(&data.y_clean).map(|(fi, yi)| fi * yi).sum::<f64>() / data.len() as f64)
}

/// `η + exp(-(λ/4) (margin / lip)²)`.
pub fn classification_bound(eta: f64, lambda_lc: f64, margin: f64, lip: f64) -> Result<f64> {
    if margin < 0.0 {
        return Err(Error::Precondition(format!("margin {margin} is negative; the bound does not apply")));
    }
    if !(lip > 0.0) {
        return Err(invalid(format!("Lipschitz constant must be positive, got {lip}")));
    }
    let ratio = margin / lip;
    Ok(eta + (-(lambda_lc / 4.0) * ratio * ratio).exp())
}

const DIVERGENCE_LIMIT: f64 = 1e8;

fn snapshot(
    w: &WeightSet,
    w0: &WeightSet,
    data: &MixtureDataset,
    held_out: Option<&MixtureDataset>,
    step: usize,
    sample_loss: f64,
) -> Result<TraceRecord> {
    let f = predict_batch(w, &data.x)?;
    let risk = f.iter().zip(&data.y).map(|(fi, yi)| logistic_loss(yi * fi)).sum::<f64>() / data.len() as f64;
    let train01 = error_rate(&f, &data.y);
    let margin = match held_out {
        Some(h) => clean_margin(w, h)?,
        None => f64::NAN,
    };
    Ok(TraceRecord { step, risk, sample_loss, margin, train01, drift: weight_distance(w, w0)? })
}

/// Plain SGD on the logistic loss, one sample per step:
/// `W ← W + α g(y f(x)) y ∇f(x)`.
///
/// Epoch 1 visits samples in dataset order; later epochs reshuffle when
/// `cfg.shuffle` is set. A trace record is taken at step 0, every
/// `trace_every` steps, at every epoch end, and at exit. Training stops early
/// at an epoch end or trace point meeting `stop_risk` or `stop_train01`.
pub fn sgd_run(
    w0: &WeightSet,
    data: &MixtureDataset,
    held_out: Option<&MixtureDataset>,
    cfg: &mut TrainConfig,
    trace_every: usize,
) -> Result<(WeightSet, TrainTrace)> {
    let mut trace = TrainTrace::default();
    let w = sgd_run_into(w0, data, held_out, cfg, trace_every, &mut trace)?;
    Ok((w, trace))
}

/// [`sgd_run`] appending to a caller-owned trace, which keeps the records
/// gathered before a failure.
pub fn sgd_run_into(
    w0: &WeightSet,
    data: &MixtureDataset,
    held_out: Option<&MixtureDataset>,
    cfg: &mut TrainConfig,
    trace_every: usize,
    trace: &mut TrainTrace,
) -> Result<WeightSet> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(invalid("cannot train on an empty dataset"));
    }
    if data.dim() != w0.config().input_dim {
        return Err(invalid("dataset dimension does not match network input"));
    }
    let trace_every = trace_every.max(1);
    let mut w = w0.clone();
    let mut rec = snapshot(&w, w0, data, held_out, 0, f64::NAN)?;
    let done = |r: &TraceRecord, cfg: &TrainConfig| {
        r.risk <= cfg.stop_risk || cfg.stop_train01.is_some_and(|t| r.train01 <= t)
    };
    let mut stop = done(&rec, cfg);
    trace.records.push(rec);
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0;
    let mut sample_loss = f64::NAN;
    for epoch in 0..cfg.epochs {
        if stop {
            break;
        }
        if epoch > 0 && cfg.shuffle {
            cfg.rng.shuffle(&mut order);
        }
        for &i in &order {
            let x = data.row(i);
            let y = data.y[i];
            let fr = forward(&w, &x)?;
            if !fr.output.is_finite() || fr.output.abs() > DIVERGENCE_LIMIT {
                return Err(Error::Divergence { step });
            }
            sample_loss = logistic_loss(y * fr.output);
            let coef = cfg.alpha * loss_derivative_g(y * fr.output) * y;
            if coef != 0.0 {
                let b = backward_vectors(&w, &fr);
                for (l, bl) in b.iter().enumerate() {
                    let h = fr.layer_input(l + 1).clone();
                    w.layers_mut()[l].ger(coef, bl, &h, 1.0);
                }
            }
            step += 1;
            if step % trace_every == 0 {
                rec = snapshot(&w, w0, data, held_out, step, sample_loss)?;
                stop = done(&rec, cfg);
                trace.records.push(rec);
                if stop {
                    break;
                }
            }
        }
        if !stop && step % trace_every != 0 {
            rec = snapshot(&w, w0, data, held_out, step, sample_loss)?;
            stop = done(&rec, cfg);
            trace.records.push(rec);
        }
    }
    if trace.last().map(|r| r.step) != Some(step) {
        trace.records.push(snapshot(&w, w0, data, held_out, step, sample_loss)?);
    }
    if !w.is_finite() {
        return Err(Error::Divergence { step });
    }
    Ok(w)
}

/// Per-layer outputs of a batched forward pass: pre-activations and
/// activations, each `n × width`.
struct BatchForward {
    pre: Vec<DMatrix<f64>>,
    act: Vec<DMatrix<f64>>,
    out: DVector<f64>,
}

fn batch_forward(w: &WeightSet, x: &DMatrix<f64>) -> BatchForward {
    let hidden = w.depth() - 1;
    let mut pre = Vec::with_capacity(hidden);
    let mut act: Vec<DMatrix<f64>> = Vec::with_capacity(hidden);
    for l in 0..hidden {
        let input = if l == 0 { x } else { &act[l - 1] };
        let p = input * w.layer(l).transpose();
        act.push(p.map(|v| v.max(0.0)));
        pre.push(p);
    }
    let out = &act[hidden - 1] * w.layer(hidden).row(0).transpose();
    BatchForward { pre, act, out }
}

/// `Σ_i r_i ∂f(x_i)/∂W_l` for every layer.
fn batch_gradient(w: &WeightSet, x: &DMatrix<f64>, fwd: &BatchForward, r: &DVector<f64>) -> Vec<DMatrix<f64>> {
    let depth = w.depth();
    let mut grads = vec![DMatrix::zeros(0, 0); depth];
    // Row i of `b` holds r_i b_l(x_i)ᵀ.
    let mut b = DMatrix::from_column_slice(r.len(), 1, r.as_slice());
    for l in (0..depth).rev() {
        let input = if l == 0 { x } else { &fwd.act[l - 1] };
        grads[l] = b.transpose() * input;
        if l > 0 {
            let mut next = &b * w.layer(l);
            next.zip_apply(&fwd.pre[l - 1], |v, p| {
                if p < 0.0 {
                    *v = 0.0
                }
            });
            b = next;
        }
    }
    grads
}

/// Network output minus its value at initialization.
pub fn centered_predict(w: &WeightSet, w0: &WeightSet, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    Ok(predict_batch(w, x)? - predict_batch(w0, x)?)
}

/// Full-batch gradient descent on `½ Σ_i (f(x_i; W) - f(x_i; W⁰) - y_i)²`.
///
/// Layer `l` moves with step `lr · scale_l` (pass the initialization
/// variances for steps in standardized coordinates, or ones for plain GD).
pub fn gd_squared_centered(
    w0: &WeightSet,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lr: f64,
    layer_scale: &[f64],
    iters: usize,
) -> Result<WeightSet> {
    if x.nrows() != y.len() {
        return Err(invalid("one target per input row required"));
    }
    if layer_scale.len() != w0.depth() {
        return Err(invalid("one step scale per layer required"));
    }
    if !(lr > 0.0) {
        return Err(invalid(format!("learning rate must be positive, got {lr}")));
    }
    let f0 = predict_batch(w0, x)?;
    let mut w = w0.clone();
    for step in 0..iters {
        let fwd = batch_forward(&w, x);
        let r = &fwd.out - &f0 - y;
        if r.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
            return Err(Error::Divergence { step });
        }
        let grads = batch_gradient(&w, x, &fwd, &r);
        for (l, g) in grads.iter().enumerate() {
            w.layers_mut()[l] -= g * (lr * layer_scale[l]);
        }
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{sample_mixture, MixtureSpec};
    use crate::network::{gradient, init_weights, NetConfig};

    #[test]
    fn logistic_examples() {
        assert!((logistic_loss(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(logistic_loss(50.0) <= 1e-20);
        assert!((logistic_loss(-50.0) - 50.0).abs() < 1e-12);
        assert!(logistic_loss(-800.0).is_finite());
        assert_eq!(loss_derivative_g(0.0), 0.5);
        assert!((loss_derivative_g(3.7) + loss_derivative_g(-3.7) - 1.0).abs() < 1e-15);
        let h = 1e-5;
        let fd = -(logistic_loss(1.3 + h) - logistic_loss(1.3 - h)) / (2.0 * h);
        assert!((fd - loss_derivative_g(1.3)).abs() < 1e-8);
    }

    #[test]
    fn bound_examples() {
        assert_eq!(classification_bound(0.1, 1.0, 0.0, 1.0).unwrap(), 1.1);
        assert!((classification_bound(0.1, 1.0, 1e6, 1.0).unwrap() - 0.1).abs() < 1e-15);
        assert!((classification_bound(0.1, 1.0, 4.0, 1.0).unwrap() - (0.1 + (-4.0f64).exp())).abs() < 1e-15);
        assert!((classification_bound(0.1, 1.0, 4.0, 1.0).unwrap() - 0.11832).abs() < 1e-5);
        assert!(matches!(classification_bound(0.1, 1.0, -1.0, 1.0), Err(Error::Precondition(_))));
    }

    fn toy_data(n: usize, d: usize, seed: u64) -> MixtureDataset {
        sample_mixture(&MixtureSpec::standard(d, 3.0, 0.1), n, &mut RngStream::new(seed, 1)).unwrap()
    }

    #[test]
    fn zero_output_layer_risk_is_log2() {
        let data = toy_data(20, 4, 1);
        let mut w = init_weights(&NetConfig::new(2, 8, 4).unwrap(), &mut RngStream::new(1, 2)).unwrap();
        w.layers_mut()[1].fill(0.0);
        assert!((empirical_risk(&w, &data).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let mut all_pos = data.clone();
        all_pos.y_clean.iter_mut().for_each(|v| *v = 1.0);
        assert_eq!(test_error(&w, &all_pos, true).unwrap(), 0.0);
        all_pos.y_clean.iter_mut().for_each(|v| *v = -1.0);
        assert_eq!(test_error(&w, &all_pos, true).unwrap(), 1.0);
    }

    #[test]
    fn two_sample_hand_risk() {
        let w = WeightSet::from_layers(vec![DMatrix::from_row_slice(1, 1, &[1.0]), DMatrix::from_row_slice(1, 1, &[1.0])])
            .unwrap();
        let data = MixtureDataset {
            x: DMatrix::from_row_slice(2, 1, &[0.0, 50.0]),
            y: vec![1.0, 1.0],
            y_clean: vec![1.0, 1.0],
            noise_mask: vec![false, false],
            scale: 1.0,
        };
        let risk = empirical_risk(&w, &data).unwrap();
        assert!((risk - std::f64::consts::LN_2 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_schedules_rejected() {
        let data = toy_data(16, 3, 2);
        let w0 = init_weights(&NetConfig::new(3, 8, 3).unwrap(), &mut RngStream::new(2, 2)).unwrap();
        for (alpha, epochs) in [(0.0, 2), (-0.1, 2), (f64::NAN, 2), (f64::INFINITY, 2), (0.01, 0)] {
            let mut cfg = TrainConfig::new(alpha, epochs, RngStream::new(2, 3));
            assert!(matches!(sgd_run(&w0, &data, None, &mut cfg, 4), Err(Error::InvalidArgument(_))), "{alpha} {epochs}");
        }
    }

    #[test]
    fn single_step_matches_hand_update() {
        let w0 = WeightSet::from_layers(vec![
            DMatrix::from_row_slice(2, 1, &[0.5, -1.0]),
            DMatrix::from_row_slice(1, 2, &[2.0, 3.0]),
        ])
        .unwrap();
        let data = MixtureDataset {
            x: DMatrix::from_row_slice(1, 1, &[2.0]),
            y: vec![-1.0],
            y_clean: vec![-1.0],
            noise_mask: vec![false],
            scale: 1.0,
        };
        let mut cfg = TrainConfig::new(0.1, 1, RngStream::new(0, 0));
        let (w, _) = sgd_run(&w0, &data, None, &mut cfg, 1).unwrap();
        // h = (1, 0), f = 2, y f = -2, g = 1/(1+e^-2).
        let g = 1.0 / (1.0 + (-2.0f64).exp());
        let c = -(0.1 * g);
        assert!((w.layer(1)[(0, 0)] - (2.0 + c * 1.0)).abs() < 1e-15);
        assert_eq!(w.layer(1)[(0, 1)], 3.0);
        assert!((w.layer(0)[(0, 0)] - (0.5 + c * 2.0 * 2.0)).abs() < 1e-15);
        assert_eq!(w.layer(0)[(1, 0)], -1.0);
    }

    #[test]
    fn sgd_is_deterministic() {
        let data = toy_data(32, 4, 3);
        let w0 = init_weights(&NetConfig::new(3, 16, 4).unwrap(), &mut RngStream::new(3, 2)).unwrap();
        let run = || {
            let mut cfg = TrainConfig::new(0.05, 3, RngStream::new(3, 4));
            sgd_run(&w0, &data, Some(&data), &mut cfg, 8).unwrap()
        };
        let (a, ta) = run();
        let (b, tb) = run();
        assert_eq!(a, b);
        assert_eq!(ta.to_csv(), tb.to_csv());
        assert!(ta.records.iter().all(|r| r.drift.iter().all(|&d| d >= 0.0)));
    }

    #[test]
    fn divergence_is_reported() {
        let data = MixtureDataset {
            x: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.5, 0.5]),
            y: vec![1.0, -1.0],
            y_clean: vec![1.0, -1.0],
            noise_mask: vec![false, false],
            scale: 1.0,
        };
        let w0 = WeightSet::from_layers(vec![DMatrix::from_element(4, 2, 1.0), DMatrix::from_element(1, 4, 1e12)])
            .unwrap();
        let mut cfg = TrainConfig::new(0.1, 1, RngStream::new(4, 3));
        let err = sgd_run(&w0, &data, None, &mut cfg, 1);
        assert!(matches!(err, Err(Error::Divergence { step: 0 })));
    }

    #[test]
    fn trace_csv_header() {
        let data = toy_data(8, 2, 5);
        let w0 = init_weights(&NetConfig::new(3, 4, 2).unwrap(), &mut RngStream::new(5, 2)).unwrap();
        let mut cfg = TrainConfig::new(0.01, 1, RngStream::new(5, 3));
        let (_, trace) = sgd_run(&w0, &data, None, &mut cfg, 4).unwrap();
        assert!(trace.to_csv().starts_with("step,risk,margin,train01,drift_l1,drift_l2,drift_l3\n"));
        assert_eq!(trace.steps(), vec![0.0, 4.0, 8.0]);
    }

    #[test]
    fn batch_gradient_matches_per_sample_sum() {
        let w = init_weights(&NetConfig::new(3, 6, 3).unwrap(), &mut RngStream::new(6, 2)).unwrap();
        let x = DMatrix::from_fn(4, 3, |i, j| ((3 * i + j) as f64 * 0.7).sin());
        let r = DVector::from_vec(vec![0.3, -1.0, 0.5, 2.0]);
        let fwd = batch_forward(&w, &x);
        let grads = batch_gradient(&w, &x, &fwd, &r);
        for l in 0..3 {
            let mut expected = DMatrix::zeros(grads[l].nrows(), grads[l].ncols());
            for i in 0..4 {
                let xi: Vec<f64> = x.row(i).iter().copied().collect();
                expected += &gradient(&w, &xi).unwrap()[l] * r[i];
            }
            assert!((&grads[l] - expected).norm() < 1e-12);
        }
    }
}
