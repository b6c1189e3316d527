//! Synthetic easy/hard frames, stratified splits, and WAV ingestion.
//!
//! Easy frames are low-level noise, sometimes with a faint tone. Hard
//! frames are sums of random sinusoids. The difficulty label exists for
//! evaluation only; nothing in training reads it.

mod wav;

pub use wav::{decode_wav, encode_wav, load_wav, write_wav};

use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::seed;

/// Probability that an easy frame carries a faint tone.
pub const EASY_TONE_PROBABILITY: f64 = 0.3;
/// Largest amplitude of that tone.
pub const EASY_TONE_MAX_AMP: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub samples: Vec<f64>,
    pub difficulty: Option<Difficulty>,
    pub source_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignalSpec {
    pub frame_len: usize,
    pub easy_noise_amp: f64,
    pub hard_components: usize,
    /// Cycles per sample.
    pub hard_freq_range: (f64, f64),
    pub hard_amp_range: (f64, f64),
    pub seed: u64,
}

impl Default for SignalSpec {
    fn default() -> Self {
        Self {
            frame_len: 64,
            easy_noise_amp: 0.02,
            hard_components: 3,
            hard_freq_range: (0.02, 0.45),
            hard_amp_range: (0.2, 0.9),
            seed: 0,
        }
    }
}

impl SignalSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frame_len == 0 {
            return Err(Error::Config("frame_len must be positive".into()));
        }
        if !(self.easy_noise_amp >= 0.0 && self.easy_noise_amp.is_finite()) {
            return Err(Error::Config("easy_noise_amp must be finite and non-negative".into()));
        }
        let (f0, f1) = self.hard_freq_range;
        let (a0, a1) = self.hard_amp_range;
        if !(0.0 <= f0 && f0 <= f1 && f1 <= 0.5) {
            return Err(Error::Config(format!("hard_freq_range {f0}..{f1} outside [0, 0.5]")));
        }
        if !(0.0 <= a0 && a0 <= a1 && a1.is_finite()) {
            return Err(Error::Config(format!("hard_amp_range {a0}..{a1} is invalid")));
        }
        Ok(())
    }

    fn noise(&self) -> Option<Normal<f64>> {
        (self.easy_noise_amp > 0.0).then(|| Normal::new(0.0, self.easy_noise_amp).expect("finite sigma"))
    }
}

fn add_sinusoid(buf: &mut [f64], amp: f64, freq: f64, phase: f64) {
    for (t, v) in buf.iter_mut().enumerate() {
        *v += amp * (TAU * freq * t as f64 + phase).sin();
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// One easy frame from its own seeded stream.
pub fn easy_frame(spec: &SignalSpec, index: u64) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(spec.seed, seed::EASY_FRAMES, index));
    let mut samples = vec![0.0; spec.frame_len];
    if let Some(noise) = spec.noise() {
        samples.iter_mut().for_each(|v| *v = rng.sample(noise));
    }
    if rng.random_bool(EASY_TONE_PROBABILITY) {
        let amp = rng.random_range(0.0..=EASY_TONE_MAX_AMP);
        let freq = uniform(&mut rng, spec.hard_freq_range);
        let phase = rng.random_range(0.0..TAU);
        add_sinusoid(&mut samples, amp, freq, phase);
    }
    samples.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
    Frame {
        samples,
        difficulty: Some(Difficulty::Easy),
        source_id: format!("easy-{index}"),
    }
}

pub fn hard_frame(spec: &SignalSpec, index: u64) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(spec.seed, seed::HARD_FRAMES, index));
    let mut samples = vec![0.0; spec.frame_len];
    for _ in 0..spec.hard_components {
        let amp = uniform(&mut rng, spec.hard_amp_range);
        let freq = uniform(&mut rng, spec.hard_freq_range);
        let phase = rng.random_range(0.0..TAU);
        add_sinusoid(&mut samples, amp, freq, phase);
    }
    if let Some(noise) = spec.noise() {
        samples.iter_mut().for_each(|v| *v += rng.sample(noise));
    }
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 1.0 {
        samples.iter_mut().for_each(|v| *v /= peak);
    }
    Frame {
        samples,
        difficulty: Some(Difficulty::Hard),
        source_id: format!("hard-{index}"),
    }
}

pub fn gen_easy(spec: &SignalSpec, n: usize) -> Vec<Frame> {
    (0..n as u64).map(|i| easy_frame(spec, i)).collect()
}

pub fn gen_hard(spec: &SignalSpec, n: usize) -> Vec<Frame> {
    (0..n as u64).map(|i| hard_frame(spec, i)).collect()
}

/// How many synthetic frames to generate and how to split them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub signal: SignalSpec,
    pub n_frames: usize,
    pub easy_fraction: f64,
    /// Train, calibrate and test ratios.
    pub split: (f64, f64, f64),
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            signal: SignalSpec::default(),
            n_frames: 2000,
            easy_fraction: 0.5,
            split: (0.8, 0.1, 0.1),
        }
    }
}

impl DataConfig {
    pub fn frames(&self) -> Result<Vec<Frame>> {
        self.signal.validate()?;
        if !(0.0..=1.0).contains(&self.easy_fraction) {
            return Err(Error::Config(format!("easy_fraction {} outside [0, 1]", self.easy_fraction)));
        }
        let n_easy = (self.easy_fraction * self.n_frames as f64).round() as usize;
        let mut frames = gen_easy(&self.signal, n_easy);
        frames.extend(gen_hard(&self.signal, self.n_frames - n_easy));
        Ok(frames)
    }

    pub fn build(&self) -> Result<Dataset> {
        split(self.frames()?, self.split, self.signal.seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitTag {
    Train,
    Calibrate,
    Test,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<Frame>,
    pub calibrate: Vec<Frame>,
    pub test: Vec<Frame>,
}

impl Dataset {
    pub fn get(&self, tag: SplitTag) -> &[Frame] {
        match tag {
            SplitTag::Train => &self.train,
            SplitTag::Calibrate => &self.calibrate,
            SplitTag::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.calibrate.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A copy with every difficulty label removed.
    pub fn without_labels(&self) -> Dataset {
        let strip = |frames: &[Frame]| {
            frames
                .iter()
                .map(|f| Frame {
                    difficulty: None,
                    ..f.clone()
                })
                .collect()
        };
        Dataset {
            train: strip(&self.train),
            calibrate: strip(&self.calibrate),
            test: strip(&self.test),
        }
    }
}

/// Deterministic stratified partition: each difficulty (and the unlabeled
/// group) is shuffled and cut by the same ratios.
pub fn split(frames: Vec<Frame>, ratios: (f64, f64, f64), seed: u64) -> Result<Dataset> {
    let (r_train, r_cal, r_test) = ratios;
    if [r_train, r_cal, r_test].iter().any(|r| !(r.is_finite() && *r >= 0.0))
        || (r_train + r_cal + r_test - 1.0).abs() > 1e-9
    {
        return Err(Error::Config(format!(
            "split ratios {ratios:?} must be non-negative and sum to 1"
        )));
    }
    let mut groups: [Vec<Frame>; 3] = Default::default();
    for f in frames {
        let k = match f.difficulty {
            Some(Difficulty::Easy) => 0,
            Some(Difficulty::Hard) => 1,
            None => 2,
        };
        groups[k].push(f);
    }
    let mut ds = Dataset::default();
    for (k, mut group) in groups.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, seed::SPLIT, k as u64));
        group.shuffle(&mut rng);
        let n = group.len();
        let n_train = ((r_train * n as f64).round() as usize).min(n);
        let n_cal = ((r_cal * n as f64).round() as usize).min(n - n_train);
        let mut rest = group.split_off(n_train);
        let test = rest.split_off(n_cal);
        ds.train.extend(group);
        ds.calibrate.extend(rest);
        ds.test.extend(test);
    }
    Ok(ds)
}

/// Stacks frames into a `rows × frame_len` matrix.
pub fn frames_to_tensor(frames: &[Frame]) -> Result<Tensor> {
    if frames.is_empty() {
        return Err(Error::Contract("no frames to stack".into()));
    }
    let rows: Vec<&[f64]> = frames.iter().map(|f| f.samples.as_slice()).collect();
    Tensor::from_rows(&rows)
}

pub fn rms(samples: &[f64]) -> f64 {
    (samples.iter().map(|v| v * v).sum::<f64>() / samples.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_abs(frames: &[Frame]) -> f64 {
        let total: f64 = frames.iter().flat_map(|f| f.samples.iter()).map(|v| v.abs()).sum();
        total / frames.iter().map(|f| f.samples.len()).sum::<usize>() as f64
    }

    #[test]
    fn silent_easy_frames_without_tone_are_zero() {
        let spec = SignalSpec { easy_noise_amp: 0.0, ..SignalSpec::default() };
        let frames = gen_easy(&spec, 50);
        let silent = frames.iter().filter(|f| f.samples.iter().all(|&v| v == 0.0)).count();
        // only the toned frames are non-zero
        assert!(silent > 20 && silent < 50, "{silent}");
        for f in &frames {
            assert!(f.samples.iter().all(|v| v.abs() <= EASY_TONE_MAX_AMP + 1e-12));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SignalSpec { seed: 99, ..SignalSpec::default() };
        assert_eq!(gen_easy(&spec, 20), gen_easy(&spec, 20));
        assert_eq!(gen_hard(&spec, 20), gen_hard(&spec, 20));
        // prefix property of per-frame seeding
        assert_eq!(gen_hard(&spec, 5), gen_hard(&spec, 20)[..5].to_vec());
    }

    #[test]
    fn amplitude_statistics() {
        let spec = SignalSpec::default();
        let easy = gen_easy(&spec, 1000);
        let hard = gen_hard(&spec, 1000);
        let (e, h) = (mean_abs(&easy), mean_abs(&hard));
        assert!(e < 0.1, "{e}");
        assert!(h > 3.0 * e, "{h} vs {e}");
        for f in easy.iter().chain(&hard) {
            assert!(f.samples.iter().all(|v| (-1.0..=1.0).contains(v)));
            assert_eq!(f.samples.len(), 64);
        }
    }

    #[test]
    fn zero_component_hard_frames_are_noise() {
        let spec = SignalSpec { hard_components: 0, ..SignalSpec::default() };
        let hard = gen_hard(&spec, 200);
        assert!(mean_abs(&hard) < 0.03);
        assert!(hard.iter().all(|f| f.difficulty == Some(Difficulty::Hard)));
    }

    #[test]
    fn populations_separate_by_energy() {
        let spec = SignalSpec::default();
        let mut easy: Vec<f64> = gen_easy(&spec, 1000).iter().map(|f| rms(&f.samples)).collect();
        easy.sort_by(f64::total_cmp);
        let p99 = easy[989];
        let hard = gen_hard(&spec, 1000);
        let above = hard.iter().filter(|f| rms(&f.samples) > p99).count();
        assert!(above >= 990, "{above}");
    }

    fn mixed(n_easy: usize, n_hard: usize) -> Vec<Frame> {
        let spec = SignalSpec::default();
        let mut v = gen_easy(&spec, n_easy);
        v.extend(gen_hard(&spec, n_hard));
        v
    }

    #[test]
    fn split_sizes() {
        let ds = split(mixed(50, 50), (1.0, 0.0, 0.0), 1).unwrap();
        assert_eq!((ds.train.len(), ds.calibrate.len(), ds.test.len()), (100, 0, 0));
        let ds = split(mixed(50, 50), (0.8, 0.1, 0.1), 1).unwrap();
        assert_eq!((ds.train.len(), ds.calibrate.len(), ds.test.len()), (80, 10, 10));
        assert!(split(mixed(2, 2), (0.5, 0.6, 0.1), 1).is_err());
        assert!(split(mixed(2, 2), (1.2, -0.1, -0.1), 1).is_err());
    }

    #[test]
    fn split_is_stratified_disjoint_and_deterministic() {
        let frames = mixed(300, 100);
        let ds = split(frames.clone(), (0.7, 0.15, 0.15), 4).unwrap();
        assert_eq!(ds, split(frames, (0.7, 0.15, 0.15), 4).unwrap());
        for part in [&ds.train, &ds.calibrate, &ds.test] {
            let easy = part.iter().filter(|f| f.difficulty == Some(Difficulty::Easy)).count() as f64;
            let hard = part.len() as f64 - easy;
            // global ratio 3:1
            assert!((easy - 3.0 * hard).abs() <= 3.0 + 1e-9, "{easy} {hard}");
        }
        let mut ids: Vec<&str> = [&ds.train, &ds.calibrate, &ds.test]
            .iter()
            .flat_map(|p| p.iter().map(|f| f.source_id.as_str()))
            .collect();
        let n = ids.len();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), n);
    }

    #[test]
    fn label_stripping() {
        let ds = split(mixed(10, 10), (0.6, 0.2, 0.2), 0).unwrap().without_labels();
        assert!([&ds.train, &ds.calibrate, &ds.test]
            .iter()
            .all(|p| p.iter().all(|f| f.difficulty.is_none())));
    }
}
