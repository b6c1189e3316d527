use serde::{Deserialize, Serialize};

use super::{route, DslConfig, LightweightDecoder, Mask, MaskMode, Route, RouteDecision, Switch};
use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::nn::{Architecture, InitSpec, MacCounter, Network};
use crate::seed;

/// An autoencoder split at `config.placement` with a switch layer inserted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DslModel {
    pub prefix: Network,
    pub mask: Mask,
    pub switch: Switch,
    pub lwd: LightweightDecoder,
    pub suffix: Network,
    pub config: DslConfig,
}

/// Per-frame multiply-accumulate cost of each component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacBudget {
    pub prefix: u64,
    pub switch: u64,
    pub light: u64,
    pub suffix: u64,
}

impl MacBudget {
    /// Prefix plus suffix: the network without any switch layer.
    pub fn full_path(&self) -> u64 {
        self.prefix + self.suffix
    }

    /// Total MACs for `n` frames of which `n_light` were routed light.
    pub fn total(&self, n: u64, n_light: u64) -> u64 {
        n * (self.prefix + self.switch) + n_light * self.light + (n - n_light) * self.suffix
    }

    pub fn expected_per_frame(&self, n: u64, n_light: u64) -> f64 {
        self.total(n, n_light) as f64 / n as f64
    }
}

/// Every intermediate of one inference pass, with both decoders evaluated.
#[derive(Debug, Clone)]
pub struct Passes {
    pub latent: Tensor,
    pub predicted: Vec<f64>,
    pub full: Tensor,
    pub light: Tensor,
}

#[derive(Debug, Clone)]
pub struct MixedPass {
    pub output: Tensor,
    pub decisions: Vec<RouteDecision>,
    /// Instrumented multiply-accumulates actually executed.
    pub macs: u64,
}

impl MixedPass {
    pub fn light_count(&self) -> usize {
        self.decisions.iter().filter(|d| d.kind == Route::Light).count()
    }
}

impl DslModel {
    pub fn new(arch: &Architecture, config: DslConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        arch.validate()?;
        if config.placement >= arch.layer_count() {
            return Err(Error::Config(format!(
                "placement {} is out of range for a {}-layer network",
                config.placement,
                arch.layer_count()
            )));
        }
        let full = Network::init(arch, InitSpec::xavier(seed::derive(seed, seed::MODEL_INIT, 0)))?;
        let (prefix, suffix) = full.split_at(config.placement)?;
        let latent = prefix.output_dim();
        let switch = Switch::new(latent, seed::derive(seed, seed::SWITCH_INIT, 0))?;
        let lwd = LightweightDecoder::mirror(&suffix, config.rho, seed::derive(seed, seed::LWD_INIT, 0))?;
        Ok(Self {
            prefix,
            mask: Mask::ones(latent, config.eps),
            switch,
            lwd,
            suffix,
            config,
        })
    }

    /// Structural checks for models that did not come from [`DslModel::new`].
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        for (name, net) in [
            ("prefix", &self.prefix),
            ("switch", &self.switch.net),
            ("lwd", &self.lwd.net),
            ("suffix", &self.suffix),
        ] {
            net.validate().map_err(|e| Error::format(name, e.to_string()))?;
        }
        let d = self.prefix.output_dim();
        let checks = [
            ("mask.weights", self.mask.weights.shape() == [d]),
            ("switch", self.switch.net.input_dim() == d && self.switch.net.output_dim() == 1),
            ("lwd", self.lwd.net.input_dim() == d && self.lwd.net.output_dim() == self.suffix.output_dim()),
            ("suffix", self.suffix.input_dim() == d),
            ("config.placement", self.prefix.len() == self.config.placement),
        ];
        for (field, ok) in checks {
            if !ok {
                return Err(Error::format(field, "inconsistent with the rest of the model"));
            }
        }
        if self.mask.eps != self.config.eps {
            return Err(Error::format("mask.eps", "differs from config.eps"));
        }
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        self.prefix.output_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.prefix.input_dim()
    }

    pub fn mac_budget(&self) -> MacBudget {
        MacBudget {
            prefix: self.prefix.mac_count(),
            switch: self.switch.net.mac_count(),
            light: self.lwd.net.mac_count(),
            suffix: self.suffix.mac_count(),
        }
    }

    /// Masked latent in inference mode.
    pub fn latent(&self, x: &Tensor) -> Result<Tensor> {
        self.mask.apply(&self.prefix.forward(x)?, MaskMode::Infer)
    }

    pub fn passes(&self, x: &Tensor) -> Result<Passes> {
        let latent = self.latent(x)?;
        Ok(Passes {
            predicted: self.switch.predict(&latent)?,
            full: self.suffix.forward(&latent)?,
            light: self.lwd.net.forward(&latent)?,
            latent,
        })
    }

    pub fn full_forward(&self, x: &Tensor) -> Result<Tensor> {
        self.suffix.forward(&self.latent(x)?)
    }

    pub fn light_forward(&self, x: &Tensor) -> Result<Tensor> {
        self.lwd.net.forward(&self.latent(x)?)
    }

    pub fn mixed_forward(&self, x: &Tensor, tau: f64) -> Result<MixedPass> {
        mixed_forward(&self.prefix, &self.mask, &self.switch, &self.lwd, &self.suffix, x, tau)
    }

    /// Threshold-routed inference: each row runs through exactly one of the
    /// lightweight decoder and the suffix.
    pub fn with_tau(&self, tau: f64) -> Self {
        let mut m = self.clone();
        m.config.tau = tau;
        m
    }
}

/// Runs prefix, mask and switch on every row, then the lightweight decoder
/// on rows predicted below `tau` and the suffix on the rest.
pub fn mixed_forward(
    prefix: &Network,
    mask: &Mask,
    switch: &Switch,
    lwd: &LightweightDecoder,
    suffix: &Network,
    x: &Tensor,
    tau: f64,
) -> Result<MixedPass> {
    let mut counter = MacCounter::default();
    let h = mask.apply(&prefix.forward_counted(x, &mut counter)?, MaskMode::Infer)?;
    let predicted = switch.net.forward_counted(&h, &mut counter)?.into_data();
    let decisions: Vec<RouteDecision> = predicted.iter().map(|&p| route(p, tau)).collect();

    let (light_rows, full_rows): (Vec<usize>, Vec<usize>) =
        (0..decisions.len()).partition(|&i| decisions[i].kind == Route::Light);

    let out_dim = suffix.output_dim();
    if lwd.net.output_dim() != out_dim {
        return Err(Error::dim("mixed_forward", &[lwd.net.output_dim()], &[out_dim]));
    }
    let mut output = vec![0.0; decisions.len() * out_dim];
    for (rows, net) in [(&light_rows, &lwd.net), (&full_rows, suffix)] {
        if rows.is_empty() {
            continue;
        }
        let y = net.forward_counted(&h.select_rows(rows)?, &mut counter)?;
        for (k, &i) in rows.iter().enumerate() {
            output[i * out_dim..(i + 1) * out_dim].copy_from_slice(y.row(k));
        }
    }
    Ok(MixedPass {
        output: Tensor::new(vec![decisions.len(), out_dim], output)?,
        decisions,
        macs: counter.macs,
    })
}
