use std::path::{Path, PathBuf};

use dynswitch::autograd::Activation;
use dynswitch::data::{load_wav, split, DataConfig, Dataset, SignalSpec};
use dynswitch::dsl::DslConfig;
use dynswitch::nn::Architecture;
use dynswitch::training::TrainConfig;
use serde::Deserialize;

use crate::Failure;

/// A run described by one TOML file. Every section and key is optional;
/// unknown keys are rejected.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub arch: ArchSection,
    pub dsl: DslSection,
    pub data: DataSection,
    pub train: TrainSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchSection {
    pub dims: Vec<usize>,
    pub activations: Vec<Activation>,
    pub placement: usize,
    pub rho: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DslSection {
    pub alpha: f64,
    pub beta: f64,
    pub eps: f64,
    pub tau: Option<f64>,
    pub target_light_fraction: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub frame_len: usize,
    pub easy_noise_amp: f64,
    pub hard_components: usize,
    pub hard_freq_range: (f64, f64),
    pub hard_amp_range: (f64, f64),
    pub seed: u64,
    pub n_frames: usize,
    pub easy_fraction: f64,
    pub split: (f64, f64, f64),
    /// When set, frames come from these files instead of the generator.
    pub wav_paths: Vec<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            arch: ArchSection::default(),
            dsl: DslSection::default(),
            data: DataSection::default(),
            train: TrainSection::default(),
        }
    }
}

impl Default for ArchSection {
    fn default() -> Self {
        let arch = Architecture::default_autoencoder();
        let dsl = DslConfig::default();
        Self {
            dims: arch.dims,
            activations: arch.activations,
            placement: dsl.placement,
            rho: dsl.rho,
        }
    }
}

impl Default for DslSection {
    fn default() -> Self {
        let dsl = DslConfig::default();
        Self {
            alpha: dsl.alpha,
            beta: dsl.beta,
            eps: dsl.eps,
            tau: None,
            target_light_fraction: None,
        }
    }
}

impl Default for DataSection {
    fn default() -> Self {
        let d = DataConfig::default();
        Self {
            frame_len: d.signal.frame_len,
            easy_noise_amp: d.signal.easy_noise_amp,
            hard_components: d.signal.hard_components,
            hard_freq_range: d.signal.hard_freq_range,
            hard_amp_range: d.signal.hard_amp_range,
            seed: d.signal.seed,
            n_frames: d.n_frames,
            easy_fraction: d.easy_fraction,
            split: d.split,
            wav_paths: Vec::new(),
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            seed: t.seed,
            checkpoint_every: t.checkpoint_every,
        }
    }
}

/// Threshold requested in the config or on the command line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Tau(f64),
    TargetLightFraction(f64),
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Failure::usage(format!("invalid config {}: {e}", path.display())))?;
        cfg.train_config(None)?;
        cfg.threshold()?;
        Ok(cfg)
    }

    pub fn data_config(&self) -> DataConfig {
        DataConfig {
            signal: SignalSpec {
                frame_len: self.data.frame_len,
                easy_noise_amp: self.data.easy_noise_amp,
                hard_components: self.data.hard_components,
                hard_freq_range: self.data.hard_freq_range,
                hard_amp_range: self.data.hard_amp_range,
                seed: self.data.seed,
            },
            n_frames: self.data.n_frames,
            easy_fraction: self.data.easy_fraction,
            split: self.data.split,
        }
    }

    /// Training configuration with the optional seed override applied.
    pub fn train_config(&self, seed: Option<u64>) -> Result<TrainConfig, Failure> {
        let cfg = TrainConfig {
            arch: Architecture::new(self.arch.dims.clone(), self.arch.activations.clone())?,
            dsl: DslConfig {
                alpha: self.dsl.alpha,
                beta: self.dsl.beta,
                tau: self.dsl.tau.unwrap_or(0.0),
                eps: self.dsl.eps,
                rho: self.arch.rho,
                placement: self.arch.placement,
            },
            data: self.data_config(),
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            lr: self.train.lr,
            seed: seed.unwrap_or(self.train.seed),
            checkpoint_every: self.train.checkpoint_every,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn threshold(&self) -> Result<Option<Threshold>, Failure> {
        match (self.dsl.tau, self.dsl.target_light_fraction) {
            (Some(_), Some(_)) => Err(Failure::usage(
                "dsl.tau and dsl.target_light_fraction are mutually exclusive",
            )),
            (Some(t), None) => Ok(Some(Threshold::Tau(t))),
            (None, Some(f)) if !(0.0..=1.0).contains(&f) => Err(Failure::usage(format!(
                "dsl.target_light_fraction {f} is outside [0, 1]"
            ))),
            (None, Some(f)) => Ok(Some(Threshold::TargetLightFraction(f))),
            (None, None) => Ok(None),
        }
    }

    pub fn dataset(&self) -> Result<Dataset, Failure> {
        if self.data.wav_paths.is_empty() {
            return Ok(self.data_config().build()?);
        }
        let mut frames = Vec::new();
        for path in &self.data.wav_paths {
            frames.extend(load_wav(path, self.data.frame_len)?);
        }
        Ok(split(frames, self.data.split, self.data.seed)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_library_defaults() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        let tc = cfg.train_config(None).unwrap();
        let d = TrainConfig::default();
        assert_eq!(tc.arch, d.arch);
        assert_eq!(tc.epochs, d.epochs);
        assert_eq!(tc.seed, d.seed);
        assert_eq!(tc.dsl.beta, d.dsl.beta);
        assert_eq!(cfg.threshold().unwrap(), None);
    }

    #[test]
    fn seed_override_wins() {
        let cfg: RunConfig = toml::from_str("[train]\nseed = 3\n").unwrap();
        assert_eq!(cfg.train_config(None).unwrap().seed, 3);
        assert_eq!(cfg.train_config(Some(8)).unwrap().seed, 8);
    }

    #[test]
    fn activations_parse_by_name() {
        let cfg: RunConfig = toml::from_str(
            "[arch]\ndims = [8, 4, 8]\nactivations = [\"relu\", \"identity\"]\nplacement = 0\n",
        )
        .unwrap();
        assert_eq!(cfg.arch.activations, vec![Activation::Relu, Activation::None]);
    }

    #[test]
    fn fraction_outside_unit_interval_is_rejected() {
        let cfg: RunConfig = toml::from_str("[dsl]\ntarget_light_fraction = 1.5\n").unwrap();
        assert!(cfg.threshold().is_err());
    }
}
