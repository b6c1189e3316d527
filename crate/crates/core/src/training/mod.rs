//! Joint training of the autoencoder and its switch layer.
//!
//! The reconstruction loss runs through the full path and trains the
//! prefix, mask and suffix. The lightweight decoder and the switch see a
//! detached latent and regress onto detached targets, so they only imitate
//! and predict the full path. The mask's L1 penalty acts on the mask alone.

mod adam;
mod checkpoint;

pub use adam::AdamState;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT_VERSION};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor};
use crate::data::{frames_to_tensor, DataConfig, Dataset, Frame};
use crate::dsl::{self, discrepancy, DslConfig, DslModel};
use crate::error::{Error, Result};
use crate::nn::{self, Architecture};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: Architecture,
    pub dsl: DslConfig,
    pub data: DataConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Checkpoint cadence in epochs; 0 means every tenth of the run.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: Architecture::default_autoencoder(),
            dsl: DslConfig::default(),
            data: DataConfig::default(),
            epochs: 200,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.dsl.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.data.signal.frame_len != self.arch.dims[0] {
            return Err(Error::Config(format!(
                "frame_len {} does not match input width {}",
                self.data.signal.frame_len, self.arch.dims[0]
            )));
        }
        Ok(())
    }

    pub fn checkpoint_interval(&self) -> usize {
        if self.checkpoint_every > 0 {
            self.checkpoint_every
        } else {
            (self.epochs / 10).max(1)
        }
    }
}

/// Which terms drive the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Reconstruction plus the weighted switch-layer terms.
    Dsl,
    /// Reconstruction through the full path only.
    ReconstructionOnly,
}

/// Loss values of one batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_recon: f64,
    pub l_switch: f64,
    pub l_lwd: f64,
    pub l_comp: f64,
    pub l_total: f64,
}

/// One row of the metric history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub l_recon: f64,
    pub l_switch: f64,
    pub l_lwd: f64,
    pub l_comp: f64,
    pub l_total: f64,
    pub sparsity: f64,
    pub switch_mae: f64,
}

/// Builds the training graph for one batch, backpropagates, and leaves
/// each parameter's gradient in its `grad` buffer.
pub fn loss_and_grads(model: &mut DslModel, batch: &Tensor, objective: Objective) -> Result<LossBreakdown> {
    if batch.rows() == 0 {
        return Err(Error::Contract("empty batch".into()));
    }
    let mut g = Graph::new();
    let x = g.constant(batch.clone());
    let prefix = model.prefix.bind(&mut g);
    let mask_w = g.param(&model.mask.weights);
    let suffix = model.suffix.bind(&mut g);
    let lwd = model.lwd.net.bind(&mut g);
    let switch = model.switch.net.bind(&mut g);

    let pre = model.prefix.forward_graph(&mut g, &prefix, x)?;
    let h = model.mask.apply_graph(&mut g, pre, mask_w)?;
    let full = model.suffix.forward_graph(&mut g, &suffix, h)?;
    let l_recon = g.mse(full, x)?;

    let mut out = LossBreakdown {
        l_recon: g.value(l_recon).item(),
        ..LossBreakdown::default()
    };
    let total = match objective {
        Objective::ReconstructionOnly => {
            out.l_total = out.l_recon;
            l_recon
        }
        Objective::Dsl => {
            let h_frozen = g.detach(h);
            let target = g.detach(full);
            let d_out = model.lwd.net.forward_graph(&mut g, &lwd, h_frozen)?;
            let l_lwd = dsl::lwd_loss(&mut g, d_out, target)?;

            let actual = discrepancy(g.value(d_out), g.value(full))?;
            let actual = g.constant(Tensor::vector(actual));
            let predicted = model.switch.net.forward_graph(&mut g, &switch, h_frozen)?;
            let l_switch = dsl::switch_loss(&mut g, predicted, actual)?;

            let l_comp = dsl::compression_loss(&mut g, mask_w);
            let l_dsl = dsl::dsl_total_loss(&mut g, l_switch, l_lwd, l_comp, &model.config)?;
            let total = g.add(l_recon, l_dsl)?;
            out.l_switch = g.value(l_switch).item();
            out.l_lwd = g.value(l_lwd).item();
            out.l_comp = g.value(l_comp).item();
            out.l_total = g.value(total).item();
            total
        }
    };

    g.backward(total)?;
    prefix.store_grads(&g, &mut model.prefix);
    suffix.store_grads(&g, &mut model.suffix);
    lwd.store_grads(&g, &mut model.lwd.net);
    switch.store_grads(&g, &mut model.switch.net);
    nn::store(&g, mask_w, &mut model.mask.weights);
    Ok(out)
}

/// Loss terms for `batch` without touching any gradient.
pub fn total_loss(model: &DslModel, batch: &Tensor) -> Result<LossBreakdown> {
    let mut scratch = model.clone();
    loss_and_grads(&mut scratch, batch, Objective::Dsl)
}

/// Every trainable tensor with a stable name, in optimizer order.
pub fn named_params(model: &mut DslModel) -> Vec<(String, &mut Tensor)> {
    let mut out: Vec<(String, &mut Tensor)> = Vec::new();
    out.extend(model.prefix.named_params_mut("prefix"));
    out.push(("mask.weights".to_string(), &mut model.mask.weights));
    out.extend(model.suffix.named_params_mut("suffix"));
    out.extend(model.lwd.net.named_params_mut("lwd"));
    out.extend(model.switch.net.named_params_mut("switch"));
    out
}

/// Mean absolute error between switch predictions and the realized
/// inference-mode discrepancy.
pub fn switch_mae(model: &DslModel, frames: &[Frame]) -> Result<f64> {
    let x = frames_to_tensor(frames)?;
    let p = model.passes(&x)?;
    let actual = discrepancy(&p.light, &p.full)?;
    let total: f64 = p.predicted.iter().zip(&actual).map(|(a, b)| (a - b).abs()).sum();
    Ok(total / actual.len() as f64)
}

/// Result of [`train`]: the generated data and every emitted checkpoint,
/// starting with the untrained model at epoch 0.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub dataset: Dataset,
    pub checkpoints: Vec<Checkpoint>,
}

impl TrainRun {
    pub fn final_checkpoint(&self) -> &Checkpoint {
        self.checkpoints.last().expect("initial checkpoint is always emitted")
    }
}

pub fn train(cfg: &TrainConfig) -> Result<TrainRun> {
    cfg.validate()?;
    let dataset = cfg.data.build()?;
    let checkpoints = train_on(cfg, &dataset)?;
    Ok(TrainRun { dataset, checkpoints })
}

pub fn train_on(cfg: &TrainConfig, dataset: &Dataset) -> Result<Vec<Checkpoint>> {
    train_with_objective(cfg, dataset, Objective::Dsl)
}

pub fn train_with_objective(cfg: &TrainConfig, dataset: &Dataset, objective: Objective) -> Result<Vec<Checkpoint>> {
    cfg.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let monitor = if dataset.calibrate.is_empty() {
        &dataset.train
    } else {
        &dataset.calibrate
    };
    let mut model = DslModel::new(&cfg.arch, cfg.dsl, cfg.seed)?;
    let mut adam = AdamState::new(cfg.lr);
    let mut history: Vec<EpochMetrics> = Vec::with_capacity(cfg.epochs);
    let snapshot = |epoch, model: &DslModel, adam: &AdamState, history: &[EpochMetrics]| Checkpoint {
        format_version: CHECKPOINT_FORMAT_VERSION,
        epoch,
        model: model.clone(),
        optimizer: adam.clone(),
        history: history.to_vec(),
    };
    let mut checkpoints = vec![snapshot(0, &model, &adam, &history)];
    let every = cfg.checkpoint_interval();

    let n = dataset.train.len();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, seed::EPOCH_SHUFFLE, epoch as u64));
        order.shuffle(&mut rng);

        let mut sums = LossBreakdown::default();
        for chunk in order.chunks(cfg.batch_size) {
            let rows: Vec<&[f64]> = chunk.iter().map(|&i| dataset.train[i].samples.as_slice()).collect();
            let batch = Tensor::from_rows(&rows)?;
            let b = loss_and_grads(&mut model, &batch, objective)?;
            if !b.l_total.is_finite() {
                return Err(Error::Training(format!("loss diverged to {} in epoch {epoch}", b.l_total)));
            }
            let w = chunk.len() as f64;
            sums.l_recon += w * b.l_recon;
            sums.l_switch += w * b.l_switch;
            sums.l_lwd += w * b.l_lwd;
            sums.l_comp += w * b.l_comp;
            sums.l_total += w * b.l_total;
            adam.step(&mut named_params(&mut model))
                .map_err(|e| Error::Training(format!("epoch {epoch}: {e}")))?;
        }
        let nf = n as f64;
        let metrics = EpochMetrics {
            epoch,
            l_recon: sums.l_recon / nf,
            l_switch: sums.l_switch / nf,
            l_lwd: sums.l_lwd / nf,
            l_comp: sums.l_comp / nf,
            l_total: sums.l_total / nf,
            sparsity: model.mask.sparsity(),
            switch_mae: switch_mae(&model, monitor)?,
        };
        if !metrics.switch_mae.is_finite() {
            return Err(Error::Training(format!("switch predictions diverged in epoch {epoch}")));
        }
        history.push(metrics);
        if epoch % every == 0 || epoch == cfg.epochs {
            checkpoints.push(snapshot(epoch, &model, &adam, &history));
        }
    }
    Ok(checkpoints)
}

/// Writes the history as CSV with header
/// `epoch,l_recon,l_switch,l_lwd,l_comp,sparsity,switch_mae`.
pub fn write_metrics_csv(history: &[EpochMetrics], path: impl AsRef<Path>) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        epoch: usize,
        l_recon: f64,
        l_switch: f64,
        l_lwd: f64,
        l_comp: f64,
        sparsity: f64,
        switch_mae: f64,
    }
    crate::eval::write_csv(
        path,
        &["epoch", "l_recon", "l_switch", "l_lwd", "l_comp", "sparsity", "switch_mae"],
        history.iter().map(|m| Row {
            epoch: m.epoch,
            l_recon: m.l_recon,
            l_switch: m.l_switch,
            l_lwd: m.l_lwd,
            l_comp: m.l_comp,
            sparsity: m.sparsity,
            switch_mae: m.switch_mae,
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_easy, gen_hard, SignalSpec};

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            arch: Architecture::new(
                vec![16, 8, 4, 8, 16],
                Architecture::default_autoencoder().activations,
            )
            .unwrap(),
            data: DataConfig {
                signal: SignalSpec { frame_len: 16, seed: 3, ..SignalSpec::default() },
                n_frames: 120,
                ..DataConfig::default()
            },
            epochs: 4,
            batch_size: 16,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_weights_reduce_to_reconstruction() {
        let cfg = TrainConfig {
            dsl: DslConfig { alpha: 0.0, beta: 0.0, ..DslConfig::default() },
            ..TrainConfig::default()
        };
        let model = DslModel::new(&cfg.arch, cfg.dsl, 1).unwrap();
        let spec = SignalSpec::default();
        let mut frames = gen_easy(&spec, 4);
        frames.extend(gen_hard(&spec, 4));
        let x = frames_to_tensor(&frames).unwrap();
        let b = total_loss(&model, &x).unwrap();
        assert_eq!(b.l_total, b.l_recon);
    }

    #[test]
    fn zero_frames_give_mean_square_output() {
        let model = DslModel::new(&Architecture::default_autoencoder(), DslConfig::default(), 2).unwrap();
        let x = Tensor::zeros(&[5, 64]);
        let out = model.suffix.forward(&model.mask.apply(&model.prefix.forward(&x).unwrap(), dsl::MaskMode::Train).unwrap()).unwrap();
        let mse = out.data().iter().map(|v| v * v).sum::<f64>() / out.numel() as f64;
        assert!((total_loss(&model, &x).unwrap().l_recon - mse).abs() < 1e-15);
    }

    #[test]
    fn breakdown_resums() {
        let cfg = DslConfig { alpha: 0.7, beta: 0.03, ..DslConfig::default() };
        let model = DslModel::new(&Architecture::default_autoencoder(), cfg, 3).unwrap();
        let spec = SignalSpec::default();
        let mut frames = gen_easy(&spec, 6);
        frames.extend(gen_hard(&spec, 6));
        let b = total_loss(&model, &frames_to_tensor(&frames).unwrap()).unwrap();
        let resum = b.l_recon + cfg.weighted(b.l_switch, b.l_lwd, b.l_comp);
        assert!((resum - b.l_total).abs() < 1e-12);
    }

    #[test]
    fn zero_epochs_emit_only_the_initial_checkpoint() {
        let cfg = TrainConfig { epochs: 0, ..small_cfg() };
        let run = train(&cfg).unwrap();
        assert_eq!(run.checkpoints.len(), 1);
        assert_eq!(run.checkpoints[0].epoch, 0);
        assert!(run.checkpoints[0].history.is_empty());
    }

    #[test]
    fn cadence_and_determinism() {
        let cfg = TrainConfig { epochs: 5, checkpoint_every: 2, ..small_cfg() };
        let a = train(&cfg).unwrap();
        let epochs: Vec<usize> = a.checkpoints.iter().map(|c| c.epoch).collect();
        assert_eq!(epochs, vec![0, 2, 4, 5]);
        let b = train(&cfg).unwrap();
        assert_eq!(a.final_checkpoint().to_json().unwrap(), b.final_checkpoint().to_json().unwrap());
        let h = &a.final_checkpoint().history;
        assert!(h.windows(2).all(|w| w[1].epoch == w[0].epoch + 1));
        assert_eq!(a.final_checkpoint().optimizer.t, 5 * 6); // 96 frames / 16
    }

    #[test]
    fn mismatched_frame_length_is_rejected() {
        let mut cfg = small_cfg();
        cfg.data.signal.frame_len = 20;
        assert!(matches!(train(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let cfg = TrainConfig { lr: 1e200, epochs: 3, ..small_cfg() };
        match train(&cfg) {
            Err(Error::Training(msg)) => assert!(msg.contains("epoch"), "{msg}"),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn gradient_step_reduces_distillation_loss() {
        let mut model = DslModel::new(&Architecture::default_autoencoder(), DslConfig::default(), 5).unwrap();
        let spec = SignalSpec::default();
        let mut frames = gen_easy(&spec, 8);
        frames.extend(gen_hard(&spec, 8));
        let x = frames_to_tensor(&frames).unwrap();
        let before = total_loss(&model, &x).unwrap().l_lwd;
        loss_and_grads(&mut model, &x, Objective::Dsl).unwrap();
        for layer in model.lwd.net.layers_mut() {
            for t in [&mut layer.weights, &mut layer.bias] {
                let g = t.grad().unwrap().to_vec();
                t.data_mut().iter_mut().zip(&g).for_each(|(w, g)| *w -= 1e-3 * g);
            }
        }
        let after = total_loss(&model, &x).unwrap().l_lwd;
        assert!(after < before, "{after} !< {before}");
    }
}
