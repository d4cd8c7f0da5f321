//! Experiment bodies behind each subcommand. Each `*_run` function is pure
//! computation; [`execute`] adds the run directory and artifacts.

use std::collections::BTreeMap;

use anyhow::{bail, Result};
use ntklab::datagen::{load_idx, sample_mixture_splits, sample_sphere, subsample_per_class, MixtureSpec};
use ntklab::kernelreg::{excess_risk_sweep, RiskSweep, RiskSweepConfig};
use ntklab::network::{encode_weights, init_weights, lipschitz_estimates, sidecar, NetConfig};
use ntklab::ntk::{
    assumption_gap, empirical_ntk, limiting_ntk, mean_abs_deviation, reference_gap, ClassGap, EmpiricalNtkScaling,
    KernelMatrix, LimitingNtk,
};
use ntklab::numerics::{ls_slope, median, RngStream};
use ntklab::spectrum::{hermite_mu1, segment_grid, spectrum_csv, trend_table, verify_ntk_bound, SpectrumReport, TrendTable};
use ntklab::training::{classification_bound, sgd_run_into, test_error, TrainConfig, TrainTrace};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{AssumptionConfig, BenignConfig, ConvergeConfig, DataSource, MinEigConfig, RiskConfig};
use crate::output::{RunDir, RunReport};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenignOutcome {
    pub train01: f64,
    pub noisy_test: f64,
    pub clean_test: f64,
    pub eta: f64,
    pub noise_fraction_train: f64,
    pub margin_initial: f64,
    pub margin_final: f64,
    pub margin_slope: f64,
    pub lip_spectral: f64,
    pub lip_empirical: f64,
    /// `None` when the final margin is negative and the bound does not apply.
    pub bound: Option<f64>,
    pub steps: usize,
    pub max_relative_drift: f64,
    pub pass: bool,
    #[serde(skip)]
    pub trace: TrainTrace,
}

/// Trains on the label-noise mixture until the training error target or the
/// epoch budget is reached. The trace is left in `trace` even on failure.
pub fn benign_run(cfg: &BenignConfig, trace: &mut TrainTrace) -> Result<(BenignOutcome, ntklab::network::WeightSet)> {
    let spec = MixtureSpec { c_norm: cfg.c_norm, ..MixtureSpec::standard(cfg.d, cfg.mu_norm, cfg.eta) };
    let mut splits =
        sample_mixture_splits(&spec, &[cfg.n, cfg.n_test, cfg.n_margin], &mut RngStream::named(cfg.seed, "data"))?;
    let held_out = splits.pop().expect("three splits");
    let test = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    let net = NetConfig::new(cfg.depth, cfg.width, cfg.d)?;
    let w0 = init_weights(&net, &mut RngStream::named(cfg.seed, "init"))?;
    let mut tc = TrainConfig::new(cfg.alpha, cfg.epochs, RngStream::named(cfg.seed, "sgd"));
    tc.stop_train01 = Some(cfg.train_target);
    let w = sgd_run_into(&w0, &train, Some(&held_out), &mut tc, cfg.trace_every, trace)?;
    let last = trace.last().expect("trace has an initial record").clone();
    let first = trace.records[0].clone();
    let probes = test.x.rows(0, cfg.lipschitz_probes.min(test.len())).into_owned();
    let lip = lipschitz_estimates(&w, &probes)?;
    let bound = if last.margin >= 0.0 {
        Some(classification_bound(cfg.eta, spec.lambda_lc, last.margin, lip.spectral_upper)?)
    } else {
        None
    };
    let noisy_test = test_error(&w, &test, false)?;
    let clean_test = test_error(&w, &test, true)?;
    let max_relative_drift = last
        .drift
        .iter()
        .zip(w0.layers())
        .map(|(d, l)| d / l.norm())
        .fold(0.0, f64::max);
    let outcome = BenignOutcome {
        train01: last.train01,
        noisy_test,
        clean_test,
        eta: cfg.eta,
        noise_fraction_train: train.noise_fraction(),
        margin_initial: first.margin,
        margin_final: last.margin,
        margin_slope: ls_slope(&trace.steps(), &trace.margins()),
        lip_spectral: lip.spectral_upper,
        lip_empirical: lip.empirical_lower,
        bound,
        steps: last.step,
        max_relative_drift,
        pass: last.train01 <= cfg.train_target && noisy_test <= cfg.eta + cfg.noisy_slack,
        trace: trace.clone(),
    };
    Ok((outcome, w))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MinEigOutcome {
    pub reports: Vec<SpectrumReport>,
    pub trend: TrendTable,
    pub holds_rate: f64,
    pub intermediate_rate: f64,
    pub clamped_holds_rate: f64,
    pub pass: bool,
}

pub fn min_eig_run(cfg: &MinEigConfig) -> Result<MinEigOutcome> {
    if cfg.cells.is_empty() || cfg.depths.is_empty() {
        bail!("the (n, d) grid and the depth list must be non-empty");
    }
    let mut reports = Vec::new();
    for &(n, d) in &cfg.cells {
        for &depth in &cfg.depths {
            reports.extend(verify_ntk_bound(n, d, depth, cfg.seeds, cfg.seed)?);
        }
    }
    let grid = segment_grid(cfg.trend_d, cfg.trend_n_min, cfg.trend_n_max_factor * cfg.trend_d, cfg.trend_points)?;
    let trend = trend_table(cfg.trend_d, &grid, hermite_mu1())?;
    let total = reports.len() as f64;
    let rate = |f: &dyn Fn(&SpectrumReport) -> bool| reports.iter().filter(|r| f(r)).count() as f64 / total;
    let holds_rate = rate(&|r| r.holds);
    let intermediate_rate = rate(&|r| r.intermediate_holds);
    let clamped_holds_rate = rate(&|r| r.lambda_min_observed >= r.clamped_bound);
    let pass = holds_rate == 1.0 && intermediate_rate == 1.0 && trend.all_match();
    Ok(MinEigOutcome { reports, trend, holds_rate, intermediate_rate, clamped_holds_rate, pass })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergeRow {
    pub width: usize,
    /// Per seed: mean absolute entrywise deviation.
    pub deviations: Vec<f64>,
    pub median_deviation: f64,
    /// Median of deviation divided by the mean absolute limiting entry.
    pub median_relative_deviation: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergeOutcome {
    pub rows: Vec<ConvergeRow>,
    pub strictly_decreasing: bool,
    /// `None` for a single width within tolerance (nothing to compare).
    pub pass: Option<bool>,
    /// Limiting kernel on the fixed point set.
    #[serde(skip)]
    pub limiting: Option<KernelMatrix>,
}

pub fn converge_run(cfg: &ConvergeConfig) -> Result<ConvergeOutcome> {
    if cfg.widths.is_empty() || cfg.seeds == 0 {
        bail!("need at least one width and one seed");
    }
    let x = sample_sphere(cfg.n_points, cfg.d, &mut RngStream::named(cfg.seed, "points"))?;
    let lim = limiting_ntk(&x, cfg.depth)?;
    let scale = lim.gram.matrix().abs().mean();
    let mut rows = Vec::new();
    for &width in &cfg.widths {
        let net = NetConfig::new(cfg.depth, width, cfg.d)?;
        let deviations = (0..cfg.seeds as u64)
            .map(|s| {
                let w = init_weights(&net, &mut RngStream::named(cfg.seed + s, "init").substream(width as u64))?;
                let emp = empirical_ntk(&w, &x, EmpiricalNtkScaling::NtkParameterization)?;
                Ok(mean_abs_deviation(&emp, &lim)?)
            })
            .collect::<Result<Vec<f64>>>()?;
        let med = median(&deviations);
        rows.push(ConvergeRow { width, deviations, median_deviation: med, median_relative_deviation: med / scale });
    }
    let strictly_decreasing = rows.windows(2).all(|w| w[1].median_deviation < w[0].median_deviation);
    let within = rows.last().expect("non-empty").median_relative_deviation <= cfg.max_rel_dev;
    let pass = match (rows.len(), within) {
        (1, true) => None,
        (1, false) => Some(false),
        _ => Some(strictly_decreasing && within),
    };
    Ok(ConvergeOutcome { rows, strictly_decreasing, pass, limiting: Some(lim) })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AssumptionOutcome {
    pub source: DataSource,
    /// One entry per seed (synthetic) or a single entry (image data).
    pub gaps: Vec<ClassGap>,
    pub positive_gaps: usize,
    pub diagonal_dominance: usize,
    pub pass: bool,
}

fn shuffled(labels: &[i64], seed: u64) -> Vec<i64> {
    let mut l = labels.to_vec();
    RngStream::named(seed, "shuffle").shuffle(&mut l);
    l
}

pub fn assumption_run(cfg: &AssumptionConfig) -> Result<AssumptionOutcome> {
    let kernel = LimitingNtk::new(cfg.depth)?;
    let gaps = match cfg.source {
        DataSource::Synthetic => (0..cfg.seeds as u64)
            .map(|s| {
                let x = sample_sphere(cfg.synthetic_n, cfg.synthetic_d, &mut RngStream::named(cfg.seed + s, "data"))?;
                let mut labels: Vec<i64> = (0..x.nrows()).map(|i| if x[(i, 0)] >= 0.0 { 1 } else { -1 }).collect();
                if cfg.shuffle_labels {
                    labels = shuffled(&labels, cfg.seed + s);
                }
                Ok(assumption_gap(&x, &labels, &kernel)?)
            })
            .collect::<Result<Vec<_>>>()?,
        DataSource::Idx => {
            let data = subsample_per_class(&load_idx(&cfg.images, &cfg.labels)?, cfg.per_class);
            let mut labels: Vec<i64> = data.labels.iter().map(|&l| i64::from(l)).collect();
            if cfg.shuffle_labels {
                labels = shuffled(&labels, cfg.seed);
            }
            vec![assumption_gap(&data.x, &labels, &kernel)?]
        }
    };
    let positive_gaps = gaps.iter().filter(|g| g.gap > 0.0).count();
    let diagonal_dominance = gaps.iter().map(ClassGap::diagonal_dominance).min().unwrap_or(0);
    let pass = match cfg.source {
        DataSource::Synthetic => positive_gaps == gaps.len(),
        DataSource::Idx => diagonal_dominance >= cfg.min_dominant,
    };
    Ok(AssumptionOutcome { source: cfg.source, gaps, positive_gaps, diagonal_dominance, pass })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RiskOutcome {
    pub sweep: RiskSweep,
    /// `None` for a single-point grid.
    pub pass: Option<bool>,
}

pub fn risk_run(cfg: &RiskConfig) -> Result<RiskOutcome> {
    let sweep = excess_risk_sweep(&RiskSweepConfig {
        d: cfg.d,
        n_grid: cfg.n_grid.clone(),
        sigma_eps: cfg.sigma_eps,
        seeds: cfg.seeds,
        base_seed: cfg.seed,
        n_test: cfg.n_test,
        target_centers: cfg.target_centers,
        depth: cfg.depth,
        jitter: cfg.jitter,
    })?;
    let (lo, hi) = cfg.peak_window;
    let pass = (cfg.n_grid.len() > 1).then(|| (lo..=hi).contains(&sweep.peak_n));
    Ok(RiskOutcome { sweep, pass })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subcommand {
    BenignClass,
    MinEigSweep,
    NtkConverge,
    AssumptionCheck,
    ExcessRiskSweep,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::BenignClass => "benign-class",
            Subcommand::MinEigSweep => "min-eig-sweep",
            Subcommand::NtkConverge => "ntk-converge",
            Subcommand::AssumptionCheck => "assumption-check",
            Subcommand::ExcessRiskSweep => "excess-risk-sweep",
        }
    }
}

fn finish(
    run: &mut RunDir,
    sub: Subcommand,
    config: &Value,
    metrics: BTreeMap<String, f64>,
    pass: Option<bool>,
    details: Value,
) -> Result<RunReport> {
    let mut artifacts = run.artifact_names();
    artifacts.push("manifest.json".into());
    artifacts.push("report.json".into());
    let report = RunReport { subcommand: sub.name().into(), metrics, pass, artifacts, details };
    run.write_json("report.json", &report)?;
    run.write_manifest(sub.name(), config)?;
    Ok(report)
}

fn metrics<const N: usize>(pairs: [(&str, f64); N]) -> BTreeMap<String, f64> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Runs one subcommand with its resolved config inside `run`.
pub fn execute(sub: Subcommand, config: &Value, run: &mut RunDir) -> Result<RunReport> {
    match sub {
        Subcommand::BenignClass => {
            let cfg: BenignConfig = serde_json::from_value(config.clone())?;
            let mut trace = TrainTrace::default();
            let result = benign_run(&cfg, &mut trace);
            run.write("trace.csv", trace.to_csv().as_bytes())?;
            let (out, w) = result?;
            run.write("weights.bin", &encode_weights(&w))?;
            run.write_json("weights.json", &sidecar(&w))?;
            let m = metrics([
                ("train01", out.train01),
                ("noisy_test_error", out.noisy_test),
                ("clean_test_error", out.clean_test),
                ("eta", out.eta),
                ("margin_initial", out.margin_initial),
                ("margin_final", out.margin_final),
                ("margin_slope", out.margin_slope),
                ("lipschitz_spectral_upper", out.lip_spectral),
                ("lipschitz_empirical_lower", out.lip_empirical),
                ("classification_bound", out.bound.unwrap_or(f64::NAN)),
                ("steps", out.steps as f64),
                ("max_relative_drift", out.max_relative_drift),
            ]);
            finish(run, sub, config, m, Some(out.pass), serde_json::to_value(&out)?)
        }
        Subcommand::MinEigSweep => {
            let cfg: MinEigConfig = serde_json::from_value(config.clone())?;
            let out = min_eig_run(&cfg)?;
            run.write("spectrum.csv", spectrum_csv(&out.reports).as_bytes())?;
            run.write("trend.csv", out.trend.to_csv().as_bytes())?;
            let m = metrics([
                ("holds_rate", out.holds_rate),
                ("intermediate_rate", out.intermediate_rate),
                ("clamped_holds_rate", out.clamped_holds_rate),
                ("trend_segments_matching", out.trend.segments.iter().filter(|s| s.matches_expected).count() as f64),
                ("branch_value_below_d", out.trend.branch_values_at_d.0),
                ("branch_value_at_d", out.trend.branch_values_at_d.1),
            ]);
            let details = json!({ "trend": { "segments": out.trend.segments,
                "small_n_limit_ratios": out.trend.small_n_limit_ratios,
                "large_n_limit_ratios": out.trend.large_n_limit_ratios },
                "reports": out.reports });
            finish(run, sub, config, m, Some(out.pass), details)
        }
        Subcommand::NtkConverge => {
            let cfg: ConvergeConfig = serde_json::from_value(config.clone())?;
            let out = converge_run(&cfg)?;
            let mut csv = String::from("width,seed,deviation\n");
            for r in &out.rows {
                for (s, d) in r.deviations.iter().enumerate() {
                    csv.push_str(&format!("{},{},{:e}\n", r.width, cfg.seed + s as u64, d));
                }
            }
            run.write("deviation.csv", csv.as_bytes())?;
            if let Some(k) = &out.limiting {
                run.write("kernel.csv", k.to_csv().as_bytes())?;
                run.write_json("kernel.json", &k.summary()?)?;
            }
            let mut m = BTreeMap::new();
            for r in &out.rows {
                m.insert(format!("median_deviation_m{}", r.width), r.median_deviation);
                m.insert(format!("median_relative_deviation_m{}", r.width), r.median_relative_deviation);
            }
            finish(run, sub, config, m, out.pass, serde_json::to_value(&out)?)
        }
        Subcommand::AssumptionCheck => {
            let cfg: AssumptionConfig = serde_json::from_value(config.clone())?;
            let out = assumption_run(&cfg)?;
            run.write("confusion.csv", out.gaps[0].confusion_csv().as_bytes())?;
            let mut csv = String::from("index,gap,same_class_mean,cross_class_mean\n");
            for (i, g) in out.gaps.iter().enumerate() {
                csv.push_str(&format!("{i},{:e},{:e},{:e}\n", g.gap, g.same_class_mean, g.cross_class_mean));
            }
            run.write("gaps.csv", csv.as_bytes())?;
            let mean_gap = out.gaps.iter().map(|g| g.gap).sum::<f64>() / out.gaps.len() as f64;
            let dim = match cfg.source {
                DataSource::Synthetic => cfg.synthetic_d as f64,
                DataSource::Idx => 784.0,
            };
            let mut m = metrics([
                ("mean_gap", mean_gap),
                // Both candidate scalings of the gap in the dimension.
                ("mean_gap_times_sqrt_d", mean_gap * dim.sqrt()),
                ("positive_gaps", out.positive_gaps as f64),
                ("runs", out.gaps.len() as f64),
                ("diagonal_dominance", out.diagonal_dominance as f64),
                ("classes", out.gaps[0].classes.len() as f64),
            ]);
            if cfg.source == DataSource::Synthetic {
                m.insert("reference_gap".into(), reference_gap(cfg.synthetic_d, 1.0));
            }
            finish(run, sub, config, m, Some(out.pass), serde_json::to_value(&out)?)
        }
        Subcommand::ExcessRiskSweep => {
            let cfg: RiskConfig = serde_json::from_value(config.clone())?;
            let out = risk_run(&cfg)?;
            run.write("risk.csv", out.sweep.to_csv().as_bytes())?;
            let mut m = metrics([("peak_n", out.sweep.peak_n as f64)]);
            for (n, med) in out.sweep.n_grid.iter().zip(&out.sweep.medians) {
                m.insert(format!("median_excess_risk_n{n}"), *med);
            }
            finish(run, sub, config, m, out.pass, serde_json::to_value(&out)?)
        }
    }
}
