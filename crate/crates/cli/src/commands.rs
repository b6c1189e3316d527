use std::path::{Path, PathBuf};

use dynswitch::data::{write_wav, Difficulty, Frame};
use dynswitch::dsl::{calibrate_threshold, DslConfig, DslModel, Route};
use dynswitch::eval::{
    calibration_progress, downstream_probe, placement_ablation, quality_parity_by_difficulty, routing_stats,
    sparsity_sweep, switch_predictions, write_ablation_csv, write_calibration_csv, write_json, write_parity_csv,
    write_probe_csv, write_routing_csv, write_scatter_csv, write_sparsity_csv, DownstreamReport, ParityReport,
    RoutingReport,
};
use dynswitch::training::{train_on, write_metrics_csv, Checkpoint};
use serde::Serialize;

use crate::config::{RunConfig, Threshold};
use crate::Failure;

const WAV_SAMPLE_RATE: u32 = 16_000;

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::io(format!("cannot create {}: {e}", dir.display())))
}

pub fn train(cfg: &RunConfig, seed: Option<u64>) -> Result<(), Failure> {
    let tc = cfg.train_config(seed)?;
    let dataset = cfg.dataset()?;
    let checkpoints = train_on(&tc, &dataset)?;

    let ckpt_dir = cfg.output_dir.join("checkpoints");
    ensure_dir(&ckpt_dir)?;
    for c in &checkpoints {
        c.save(ckpt_dir.join(format!("epoch-{:05}.json", c.epoch)))?;
    }
    let last = checkpoints.last().expect("training always yields the initial checkpoint");
    last.save(cfg.output_dir.join("final.json"))?;
    write_metrics_csv(&last.history, cfg.output_dir.join("metrics.csv"))?;

    if checkpoints.len() >= 2 {
        let unlabeled = dataset.without_labels();
        let held_out = if unlabeled.test.is_empty() { &unlabeled.train } else { &unlabeled.test };
        let report = calibration_progress(&checkpoints, held_out)?;
        write_calibration_csv(&report, cfg.output_dir.join("calibration.csv"))?;
        write_scatter_csv(&report, cfg.output_dir.join("calibration_scatter.csv"))?;
    }
    match last.history.last() {
        Some(m) => println!(
            "trained {} epochs: l_recon {:.6}, l_total {:.6}, sparsity {:.3}, switch MAE {:.4}",
            m.epoch, m.l_recon, m.l_total, m.sparsity, m.switch_mae
        ),
        None => println!("epochs = 0: wrote the initial checkpoint"),
    }
    println!("outputs in {}", cfg.output_dir.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalSummary<'a> {
    checkpoint: &'a Path,
    epoch: usize,
    tau: f64,
    target_light_fraction: Option<f64>,
    calibrate_light_fraction: Option<f64>,
    routing: &'a RoutingReport,
    parity: Vec<(&'a str, &'a ParityReport)>,
    probe: Option<DownstreamReport>,
}

fn light_fraction(model: &DslModel, frames: &[Frame], tau: f64) -> Result<f64, Failure> {
    let (pred, _) = switch_predictions(model, frames)?;
    let light = pred.iter().filter(|&&p| dynswitch::dsl::route(p, tau).kind == Route::Light).count();
    Ok(light as f64 / pred.len() as f64)
}

pub fn eval(cfg: &RunConfig, checkpoint: &Path, flag: Option<Threshold>) -> Result<(), Failure> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let model = &ckpt.model;
    if model.input_dim() != cfg.data.frame_len {
        return Err(Failure::usage(format!(
            "checkpoint expects frames of {} samples, config has frame_len {}",
            model.input_dim(),
            cfg.data.frame_len
        )));
    }
    let threshold = flag.or(cfg.threshold()?).ok_or_else(|| {
        Failure::usage("no routing threshold: pass --tau or --target-light-fraction, or set one in [dsl]")
    })?;
    let dataset = cfg.dataset()?;
    if dataset.test.is_empty() {
        return Err(Failure::usage("the test split is empty"));
    }

    let (tau, target, calibrate_fraction) = match threshold {
        Threshold::Tau(t) => {
            if t.is_nan() || t < 0.0 {
                return Err(Failure::usage(format!("--tau must be non-negative, got {t}")));
            }
            let realized = if dataset.calibrate.is_empty() {
                None
            } else {
                Some(light_fraction(model, &dataset.calibrate, t)?)
            };
            (t, None, realized)
        }
        Threshold::TargetLightFraction(f) => {
            if dataset.calibrate.is_empty() {
                return Err(Failure::usage("the calibrate split is empty; cannot calibrate tau"));
            }
            let (pred, _) = switch_predictions(model, &dataset.calibrate)?;
            let tau = calibrate_threshold(&pred, f)?;
            (tau, Some(f), Some(light_fraction(model, &dataset.calibrate, tau)?))
        }
    };

    ensure_dir(&cfg.output_dir)?;
    let routing = routing_stats(model, &dataset.test, tau)?;
    write_routing_csv(&routing, cfg.output_dir.join("routing.csv"))?;
    let parity = quality_parity_by_difficulty(model, &dataset.test, tau)?;
    write_parity_csv(&parity, cfg.output_dir.join("parity.csv"))?;

    let has_both = |frames: &[Frame]| {
        frames.iter().any(|f| f.difficulty == Some(Difficulty::Easy))
            && frames.iter().any(|f| f.difficulty == Some(Difficulty::Hard))
    };
    let probe = if has_both(&dataset.train) && has_both(&dataset.test) {
        let r = downstream_probe(model, &dataset, tau)?;
        write_probe_csv(&r, cfg.output_dir.join("probe.csv"))?;
        Some(r)
    } else {
        eprintln!("note: probe skipped, the data does not contain both easy and hard frames");
        None
    };

    write_json(
        cfg.output_dir.join("summary.json"),
        &EvalSummary {
            checkpoint,
            epoch: ckpt.epoch,
            tau,
            target_light_fraction: target,
            calibrate_light_fraction: calibrate_fraction,
            routing: &routing,
            parity: parity.iter().map(|(s, p)| (s.as_str(), p)).collect(),
            probe,
        },
    )?;

    println!(
        "tau {tau:.6}: light fraction {:.3} (easy {:.3}, hard {:.3}), {:.1} MACs/frame vs {} full",
        routing.light_fraction,
        routing.easy_light_fraction,
        routing.hard_light_fraction,
        routing.macs_mixed,
        routing.macs_full_only
    );
    if let Some(f) = calibrate_fraction {
        println!("light fraction on the calibrate split: {f:.3}");
    }
    Ok(())
}

pub fn sweep_beta(cfg: &RunConfig, betas: &[f64], seed: Option<u64>, jobs: usize) -> Result<(), Failure> {
    let tc = cfg.train_config(seed)?;
    let points = sparsity_sweep(&tc, betas, jobs)?;
    ensure_dir(&cfg.output_dir)?;
    write_sparsity_csv(&points, cfg.output_dir.join("sparsity.csv"))?;
    for p in &points {
        println!("beta {:e}: sparsity {:.3}, l_recon {:.6}", p.beta, p.sparsity, p.l_recon);
    }
    Ok(())
}

/// Every placement that yields a valid model for the configured architecture.
pub fn valid_placements(cfg: &RunConfig) -> Result<Vec<usize>, Failure> {
    let tc = cfg.train_config(None)?;
    Ok((0..tc.arch.layer_count())
        .filter(|&i| DslModel::new(&tc.arch, DslConfig { placement: i, ..tc.dsl }, tc.seed).is_ok())
        .collect())
}

pub fn ablate_placement(cfg: &RunConfig, placements: &[usize], seed: Option<u64>, jobs: usize) -> Result<(), Failure> {
    let tc = cfg.train_config(seed)?;
    let placements = if placements.is_empty() { valid_placements(cfg)? } else { placements.to_vec() };
    let report = placement_ablation(&tc, &placements, jobs)?;
    ensure_dir(&cfg.output_dir)?;
    write_ablation_csv(&report, cfg.output_dir.join("ablation.csv"))?;
    for r in &report.rows {
        println!(
            "placement {}: switch r {:.3}, MAE {:.4}, prefix MAC share {:.3}",
            r.placement, r.pearson_r, r.mae, r.prefix_mac_share
        );
    }
    Ok(())
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let frames = cfg.data_config().frames()?;
    let easy_dir: PathBuf = out.join("easy");
    let hard_dir: PathBuf = out.join("hard");
    ensure_dir(&easy_dir)?;
    ensure_dir(&hard_dir)?;
    let (mut n_easy, mut n_hard) = (0usize, 0usize);
    for f in &frames {
        let path = match f.difficulty {
            Some(Difficulty::Easy) => {
                n_easy += 1;
                easy_dir.join(format!("{:05}.wav", n_easy - 1))
            }
            _ => {
                n_hard += 1;
                hard_dir.join(format!("{:05}.wav", n_hard - 1))
            }
        };
        write_wav(&path, &f.samples, WAV_SAMPLE_RATE)?;
    }
    println!("wrote {n_easy} easy and {n_hard} hard frames under {}", out.display());
    Ok(())
}
