//! Dynamic switch layer: mask, switch, lightweight decoder, their losses,
//! and threshold routing.
//!
//! A model is split at a placement index into a prefix and a suffix. The
//! prefix output `h` is scaled per dimension by the mask. The switch reads
//! the masked latent and predicts how far the lightweight decoder's output
//! will be from the suffix's output. Samples with a prediction below `tau`
//! take the lightweight decoder; the rest take the full suffix.

mod model;

pub use model::{mixed_forward, DslModel, MacBudget, MixedPass, Passes};

use serde::{Deserialize, Serialize};

use crate::autograd::{self, Activation, Graph, ReduceKind, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{Architecture, InitSpec, Network};

/// Added to the reference norm in [`discrepancy`].
pub const DISCREPANCY_DELTA: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    Train,
    Infer,
}

/// Per-dimension multiplicative weights on the latent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    pub weights: Tensor,
    pub eps: f64,
}

impl Mask {
    pub fn ones(dim: usize, eps: f64) -> Self {
        Self {
            weights: Tensor::ones(&[dim]),
            eps,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.numel()
    }

    /// Weights with entries below `eps` in magnitude replaced by exact zeros.
    pub fn effective_weights(&self) -> Tensor {
        let data = self
            .weights
            .data()
            .iter()
            .map(|&w| if w.abs() < self.eps { 0.0 } else { w })
            .collect();
        Tensor::vector(data)
    }

    pub fn apply(&self, h: &Tensor, mode: MaskMode) -> Result<Tensor> {
        if h.shape().len() != 2 || h.cols() != self.dim() {
            return Err(Error::dim("mask_apply", h.shape(), &[h.rows(), self.dim()]));
        }
        match mode {
            MaskMode::Train => autograd::mul_row(h, &self.weights),
            MaskMode::Infer => autograd::mul_row(h, &self.effective_weights()),
        }
    }

    /// Train-mode application on the graph, differentiable in `h` and `w`.
    pub fn apply_graph(&self, g: &mut Graph, h: Var, w: Var) -> Result<Var> {
        if g.value(h).cols() != self.dim() {
            return Err(Error::dim("mask_apply", g.value(h).shape(), &[self.dim()]));
        }
        g.mul_row(h, w)
    }

    /// Fraction of dimensions hard-zeroed at inference.
    pub fn sparsity(&self) -> f64 {
        let zeroed = self.weights.data().iter().filter(|w| w.abs() < self.eps).count();
        zeroed as f64 / self.dim() as f64
    }
}

pub fn mask_apply(mask: &Mask, h: &Tensor, mode: MaskMode) -> Result<Tensor> {
    mask.apply(h, mode)
}

pub fn activation_sparsity(mask: &Mask) -> f64 {
    mask.sparsity()
}

/// `‖w_M‖₁` on the graph.
pub fn compression_loss(g: &mut Graph, mask_weights: Var) -> Var {
    g.reduce(mask_weights, ReduceKind::L1)
}

/// Regressor `d → max(4, d/4) → 1` with a softplus head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Switch {
    pub net: Network,
}

impl Switch {
    pub fn hidden_width(latent_dim: usize) -> usize {
        (latent_dim / 4).max(4)
    }

    pub fn new(latent_dim: usize, seed: u64) -> Result<Self> {
        let arch = Architecture::new(
            vec![latent_dim, Self::hidden_width(latent_dim), 1],
            vec![Activation::Tanh, Activation::Softplus],
        )?;
        Ok(Self {
            net: Network::init(&arch, InitSpec::xavier(seed))?,
        })
    }

    /// One non-negative prediction per row of the masked latent.
    pub fn predict(&self, h: &Tensor) -> Result<Vec<f64>> {
        Ok(self.net.forward(h)?.into_data())
    }
}

/// Reduced-width mirror of the suffix network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightweightDecoder {
    pub net: Network,
}

impl LightweightDecoder {
    /// Same depth, activations and input/output widths as `suffix`; each
    /// hidden width is `ceil(rho · width)`.
    pub fn mirror(suffix: &Network, rho: f64, seed: u64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::Config(format!("rho must lie in (0, 1), got {rho}")));
        }
        let arch = suffix.architecture();
        let last = arch.dims.len() - 1;
        let dims = arch
            .dims
            .iter()
            .enumerate()
            .map(|(k, &w)| {
                if k == 0 || k == last {
                    w
                } else {
                    ((rho * w as f64).ceil() as usize).max(1)
                }
            })
            .collect();
        let light = Architecture::new(dims, arch.activations)?;
        let net = Network::init(&light, InitSpec::xavier(seed))?;
        if net.param_count() >= suffix.param_count() {
            return Err(Error::Config(format!(
                "lightweight decoder ({} params) is not smaller than the suffix ({} params); \
                 the placement must leave at least two suffix layers",
                net.param_count(),
                suffix.param_count()
            )));
        }
        Ok(Self { net })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DslConfig {
    /// Weight shared by the switch and lightweight-decoder losses.
    pub alpha: f64,
    /// Weight of the mask's L1 penalty.
    pub beta: f64,
    /// Routing threshold; predictions strictly below it go light.
    pub tau: f64,
    /// Mask magnitudes below this are zeroed at inference.
    pub eps: f64,
    /// Lightweight decoder width factor.
    pub rho: f64,
    /// Number of layers before the switch layer.
    pub placement: usize,
}

impl Default for DslConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1e-5,
            tau: 0.0,
            eps: 1e-2,
            rho: 0.25,
            placement: 1,
        }
    }
}

impl DslConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")))
            }
        };
        finite_nonneg("alpha", self.alpha)?;
        finite_nonneg("beta", self.beta)?;
        finite_nonneg("tau", self.tau)?;
        finite_nonneg("eps", self.eps)?;
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        Ok(())
    }

    /// `α·l_switch + α·l_lwd + β·l_comp` on plain scalars.
    pub fn weighted(&self, l_switch: f64, l_lwd: f64, l_comp: f64) -> f64 {
        self.alpha * l_switch + self.alpha * l_lwd + self.beta * l_comp
    }
}

/// Graph form of [`DslConfig::weighted`]; evaluates in the same order.
pub fn dsl_total_loss(g: &mut Graph, l_switch: Var, l_lwd: Var, l_comp: Var, cfg: &DslConfig) -> Result<Var> {
    for v in [l_switch, l_lwd, l_comp] {
        if !g.value(v).is_scalar() {
            return Err(Error::Contract(format!(
                "dsl_total_loss takes scalars, got shape {:?}",
                g.value(v).shape()
            )));
        }
    }
    let a = g.scale(l_switch, cfg.alpha);
    let b = g.scale(l_lwd, cfg.alpha);
    let c = g.scale(l_comp, cfg.beta);
    let ab = g.add(a, b)?;
    g.add(ab, c)
}

/// Per-row `‖d − f‖₂ / (‖f‖₂ + δ)`.
pub fn discrepancy(d_out: &Tensor, full_out: &Tensor) -> Result<Vec<f64>> {
    if d_out.shape() != full_out.shape() {
        return Err(Error::dim("discrepancy", d_out.shape(), full_out.shape()));
    }
    Ok((0..full_out.rows())
        .map(|i| {
            let (d, f) = (d_out.row(i), full_out.row(i));
            let diff: f64 = d.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum();
            let norm: f64 = f.iter().map(|v| v * v).sum();
            diff.sqrt() / (norm.sqrt() + DISCREPANCY_DELTA)
        })
        .collect())
}

/// Mean squared error of switch predictions against detached targets.
pub fn switch_loss(g: &mut Graph, predicted: Var, actual: Var) -> Result<Var> {
    let (p, a) = (g.value(predicted), g.value(actual));
    if p.numel() != a.numel() {
        return Err(Error::dim("switch_loss", p.shape(), a.shape()));
    }
    let shape = a.shape().to_vec();
    let predicted = if p.shape() == a.shape() {
        predicted
    } else {
        g.reshape(predicted, shape)?
    };
    g.mse(predicted, actual)
}

/// Mean squared error between the lightweight output and the detached
/// full-pass output.
pub fn lwd_loss(g: &mut Graph, d_out: Var, target: Var) -> Result<Var> {
    if g.value(d_out).shape() != g.value(target).shape() {
        return Err(Error::dim("lwd_loss", g.value(d_out).shape(), g.value(target).shape()));
    }
    g.mse(d_out, target)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Light,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteDecision {
    pub kind: Route,
    pub predicted: f64,
}

/// Light iff `predicted < tau`; ties go full.
pub fn route(predicted: f64, tau: f64) -> RouteDecision {
    let kind = if predicted < tau { Route::Light } else { Route::Full };
    RouteDecision { kind, predicted }
}

/// The `target_light_fraction` quantile of `predictions`, linearly
/// interpolated between order statistics.
///
/// Under the strict `<` routing rule a constant prediction set routes
/// nothing light at its own quantile.
pub fn calibrate_threshold(predictions: &[f64], target_light_fraction: f64) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Contract("threshold calibration needs predictions".into()));
    }
    if !(0.0..=1.0).contains(&target_light_fraction) {
        return Err(Error::Contract(format!(
            "target light fraction {target_light_fraction} outside [0, 1]"
        )));
    }
    let mut sorted = predictions.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = target_light_fraction * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}
