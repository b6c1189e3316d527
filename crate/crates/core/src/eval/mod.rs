//! Experiment harness: routing statistics, reconstruction parity, the
//! β-sparsity sweep, switch calibration over training, placement ablation,
//! and a downstream easy/hard probe.
//!
//! Difficulty labels are read here and nowhere in training.

mod probe;

pub use probe::{fit_probe, probe_features, LogisticProbe, PROBE_EPOCHS, PROBE_LR};

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::data::{frames_to_tensor, Dataset, Difficulty, Frame};
use crate::dsl::{discrepancy, DslModel, Route, RouteDecision};
use crate::error::{Error, Result};
use crate::training::{train, Checkpoint, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingReport {
    pub tau: f64,
    pub n: usize,
    pub n_light: usize,
    pub n_full: usize,
    pub easy_total: usize,
    pub easy_light: usize,
    pub hard_total: usize,
    pub hard_light: usize,
    pub easy_light_fraction: f64,
    pub hard_light_fraction: f64,
    pub light_fraction: f64,
    /// Expected per-frame MACs under the realized routing mix.
    pub macs_mixed: f64,
    /// Per-frame MACs when every frame routes full (prefix, switch, suffix).
    pub macs_full_only: u64,
    /// Per-frame MACs when every frame routes light (prefix, switch, decoder).
    pub macs_light_only: u64,
    /// Per-frame MACs of the network without a switch layer.
    pub macs_baseline: u64,
    /// Mean of the instrumented per-sample counters.
    pub macs_instrumented: f64,
    #[serde(skip)]
    pub decisions: Vec<RouteDecision>,
}

fn fraction(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn routing_stats(model: &DslModel, frames: &[Frame], tau: f64) -> Result<RoutingReport> {
    if frames.is_empty() {
        return Err(Error::Contract("routing statistics need at least one frame".into()));
    }
    let mixed = model.mixed_forward(&frames_to_tensor(frames)?, tau)?;
    let count = |d: Difficulty| {
        let total = frames.iter().filter(|f| f.difficulty == Some(d)).count();
        let light = frames
            .iter()
            .zip(&mixed.decisions)
            .filter(|(f, r)| f.difficulty == Some(d) && r.kind == Route::Light)
            .count();
        (total, light)
    };
    let (easy_total, easy_light) = count(Difficulty::Easy);
    let (hard_total, hard_light) = count(Difficulty::Hard);
    let n = frames.len();
    let n_light = mixed.light_count();
    let budget = model.mac_budget();
    Ok(RoutingReport {
        tau,
        n,
        n_light,
        n_full: n - n_light,
        easy_total,
        easy_light,
        hard_total,
        hard_light,
        easy_light_fraction: fraction(easy_light, easy_total),
        hard_light_fraction: fraction(hard_light, hard_total),
        light_fraction: fraction(n_light, n),
        macs_mixed: budget.expected_per_frame(n as u64, n_light as u64),
        macs_full_only: budget.total(1, 0),
        macs_light_only: budget.total(1, 1),
        macs_baseline: budget.full_path(),
        macs_instrumented: mixed.macs as f64 / n as f64,
        decisions: mixed.decisions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParityReport {
    pub mse_full: f64,
    pub mse_light: f64,
    pub mse_mixed: f64,
}

fn mse(a: &Tensor, b: &Tensor) -> f64 {
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    s / a.numel() as f64
}

/// Reconstruction MSE of the full, lightweight and routed outputs.
pub fn quality_parity(model: &DslModel, frames: &[Frame], tau: f64) -> Result<ParityReport> {
    let x = frames_to_tensor(frames)?;
    let p = model.passes(&x)?;
    let mixed = model.mixed_forward(&x, tau)?;
    Ok(ParityReport {
        mse_full: mse(&p.full, &x),
        mse_light: mse(&p.light, &x),
        mse_mixed: mse(&mixed.output, &x),
    })
}

/// Parity over all frames, then easy-only and hard-only subsets when present.
pub fn quality_parity_by_difficulty(
    model: &DslModel,
    frames: &[Frame],
    tau: f64,
) -> Result<Vec<(String, ParityReport)>> {
    let mut out = vec![("all".to_string(), quality_parity(model, frames, tau)?)];
    for (name, d) in [("easy", Difficulty::Easy), ("hard", Difficulty::Hard)] {
        let subset: Vec<Frame> = frames.iter().filter(|f| f.difficulty == Some(d)).cloned().collect();
        if !subset.is_empty() {
            out.push((name.to_string(), quality_parity(model, &subset, tau)?));
        }
    }
    Ok(out)
}

/// Pearson correlation. Returns `(0, true)` when either side has zero
/// variance.
pub fn pearson(a: &[f64], b: &[f64]) -> (f64, bool) {
    let n = a.len().min(b.len());
    if n < 2 {
        return (0.0, true);
    }
    let mean = |v: &[f64]| v[..n].iter().sum::<f64>() / n as f64;
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (da, db) = (a[i] - ma, b[i] - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return (0.0, true);
    }
    ((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0), false)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub epoch: usize,
    pub mae: f64,
    pub pearson_r: f64,
    pub degenerate: bool,
}

impl CalibrationPoint {
    pub fn from_predictions(epoch: usize, predicted: &[f64], actual: &[f64]) -> Self {
        let mae = predicted.iter().zip(actual).map(|(p, a)| (p - a).abs()).sum::<f64>() / actual.len().max(1) as f64;
        let (pearson_r, degenerate) = pearson(predicted, actual);
        Self {
            epoch,
            mae,
            pearson_r,
            degenerate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub epoch: usize,
    pub predicted: f64,
    pub actual: f64,
    pub difficulty: Option<Difficulty>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CalibrationReport {
    pub points: Vec<CalibrationPoint>,
    pub scatter: Vec<ScatterPoint>,
}

/// Switch predictions against realized discrepancy for one model.
pub fn switch_predictions(model: &DslModel, frames: &[Frame]) -> Result<(Vec<f64>, Vec<f64>)> {
    let p = model.passes(&frames_to_tensor(frames)?)?;
    let actual = discrepancy(&p.light, &p.full)?;
    Ok((p.predicted, actual))
}

pub fn calibration_progress(checkpoints: &[Checkpoint], frames: &[Frame]) -> Result<CalibrationReport> {
    if checkpoints.len() < 2 {
        return Err(Error::Contract("calibration progress needs at least two checkpoints".into()));
    }
    let mut report = CalibrationReport::default();
    for ckpt in checkpoints {
        let (predicted, actual) = switch_predictions(&ckpt.model, frames)?;
        report.points.push(CalibrationPoint::from_predictions(ckpt.epoch, &predicted, &actual));
        report.scatter.extend(predicted.iter().zip(&actual).zip(frames).map(|((&p, &a), f)| ScatterPoint {
            epoch: ckpt.epoch,
            predicted: p,
            actual: a,
            difficulty: f.difficulty,
        }));
    }
    Ok(report)
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityCurvePoint {
    pub beta: f64,
    pub sparsity: f64,
    pub l_recon: f64,
}

/// One training run per β, everything else shared. Rows are sorted by β.
pub fn sparsity_sweep(base: &TrainConfig, betas: &[f64], jobs: usize) -> Result<Vec<SparsityCurvePoint>> {
    if betas.is_empty() {
        return Err(Error::Config("sparsity sweep needs at least one beta".into()));
    }
    let mut sorted = betas.to_vec();
    if sorted.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
        return Err(Error::Config(format!("betas must be finite and non-negative: {betas:?}")));
    }
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config(format!("betas must be distinct: {betas:?}")));
    }
    pool(jobs)?.install(|| {
        sorted
            .par_iter()
            .map(|&beta| {
                let mut cfg = base.clone();
                cfg.dsl.beta = beta;
                let run = train(&cfg)?;
                let last = run.final_checkpoint();
                Ok(SparsityCurvePoint {
                    beta,
                    sparsity: last.model.mask.sparsity(),
                    l_recon: last.history.last().map_or(f64::NAN, |m| m.l_recon),
                })
            })
            .collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub placement: usize,
    pub pearson_r: f64,
    pub mae: f64,
    pub prefix_mac_share: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

/// One training run per placement with a shared seed; switch quality is
/// measured on the test split of each run.
pub fn placement_ablation(base: &TrainConfig, placements: &[usize], jobs: usize) -> Result<AblationReport> {
    if placements.is_empty() {
        return Err(Error::Config("placement ablation needs at least one placement".into()));
    }
    for &i in placements {
        let cfg = crate::dsl::DslConfig { placement: i, ..base.dsl };
        DslModel::new(&base.arch, cfg, base.seed)
            .map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("placement {i} is invalid: {msg}")),
                other => Error::Config(format!("placement {i} is invalid: {other}")),
            })?;
    }
    let rows = pool(jobs)?.install(|| {
        placements
            .par_iter()
            .map(|&i| {
                let mut cfg = base.clone();
                cfg.dsl.placement = i;
                let run = train(&cfg)?;
                let model = &run.final_checkpoint().model;
                let frames = if run.dataset.test.is_empty() { &run.dataset.train } else { &run.dataset.test };
                let (predicted, actual) = switch_predictions(model, frames)?;
                let point = CalibrationPoint::from_predictions(0, &predicted, &actual);
                let budget = model.mac_budget();
                Ok(AblationRow {
                    placement: i,
                    pearson_r: point.pearson_r,
                    mae: point.mae,
                    prefix_mac_share: budget.prefix as f64 / budget.full_path() as f64,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(AblationReport { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DownstreamReport {
    pub acc_full: f64,
    pub acc_light: f64,
    pub acc_mixed: f64,
}

fn labeled(frames: &[Frame]) -> (Vec<Frame>, Vec<bool>) {
    frames
        .iter()
        .filter_map(|f| f.difficulty.map(|d| (f.clone(), d == Difficulty::Hard)))
        .unzip()
}

/// Trains an easy/hard logistic probe on the train split and scores it on
/// the test split, once per output source: full pass, lightweight pass,
/// and the routed mix at `tau`.
pub fn downstream_probe(model: &DslModel, dataset: &Dataset, tau: f64) -> Result<DownstreamReport> {
    let (train_frames, train_y) = labeled(&dataset.train);
    let (test_frames, test_y) = labeled(&dataset.test);
    if train_frames.is_empty() || test_frames.is_empty() {
        return Err(Error::Contract("downstream probe needs labeled train and test frames".into()));
    }
    let outputs = |frames: &[Frame]| -> Result<[Tensor; 3]> {
        let x = frames_to_tensor(frames)?;
        let p = model.passes(&x)?;
        Ok([p.full, p.light, model.mixed_forward(&x, tau)?.output])
    };
    let train_out = outputs(&train_frames)?;
    let test_out = outputs(&test_frames)?;
    let mut acc = [0.0; 3];
    for k in 0..3 {
        acc[k] = fit_probe(
            &probe_features(&train_out[k]),
            &train_y,
            &probe_features(&test_out[k]),
            &test_y,
        )?;
    }
    Ok(DownstreamReport {
        acc_full: acc[0],
        acc_light: acc[1],
        acc_mixed: acc[2],
    })
}

/// Writes `rows` after an explicit header, so an empty table still has one.
pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<()> {
    let path = path.as_ref();
    let to_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path.display().to_string(), format!("{other:?}")),
    };
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(to_err)?;
    w.write_record(header).map_err(to_err)?;
    for row in rows {
        w.serialize(row).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_routing_csv(report: &RoutingReport, path: impl AsRef<Path>) -> Result<()> {
    write_csv(
        path,
        &[
            "tau", "n", "n_light", "n_full", "easy_total", "easy_light", "hard_total", "hard_light",
            "easy_light_fraction", "hard_light_fraction", "light_fraction", "macs_mixed", "macs_full_only",
            "macs_light_only", "macs_baseline", "macs_instrumented",
        ],
        [report],
    )
}

pub fn write_parity_csv(rows: &[(String, ParityReport)], path: impl AsRef<Path>) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        subset: &'a str,
        mse_full: f64,
        mse_light: f64,
        mse_mixed: f64,
    }
    write_csv(
        path,
        &["subset", "mse_full", "mse_light", "mse_mixed"],
        rows.iter().map(|(s, p)| Row {
            subset: s,
            mse_full: p.mse_full,
            mse_light: p.mse_light,
            mse_mixed: p.mse_mixed,
        }),
    )
}

pub fn write_sparsity_csv(points: &[SparsityCurvePoint], path: impl AsRef<Path>) -> Result<()> {
    write_csv(path, &["beta", "sparsity", "l_recon"], points)
}

pub fn write_ablation_csv(report: &AblationReport, path: impl AsRef<Path>) -> Result<()> {
    write_csv(path, &["placement", "pearson_r", "mae", "prefix_mac_share"], &report.rows)
}

pub fn write_calibration_csv(report: &CalibrationReport, path: impl AsRef<Path>) -> Result<()> {
    write_csv(path, &["epoch", "mae", "pearson_r", "degenerate"], &report.points)
}

pub fn write_scatter_csv(report: &CalibrationReport, path: impl AsRef<Path>) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        epoch: usize,
        predicted: f64,
        actual: f64,
        difficulty: &'static str,
    }
    write_csv(
        path,
        &["epoch", "predicted", "actual", "difficulty"],
        report.scatter.iter().map(|s| Row {
            epoch: s.epoch,
            predicted: s.predicted,
            actual: s.actual,
            difficulty: match s.difficulty {
                Some(Difficulty::Easy) => "easy",
                Some(Difficulty::Hard) => "hard",
                None => "",
            },
        }),
    )
}

pub fn write_probe_csv(report: &DownstreamReport, path: impl AsRef<Path>) -> Result<()> {
    write_csv(path, &["acc_full", "acc_light", "acc_mixed"], [report])
}
