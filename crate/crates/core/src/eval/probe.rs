use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::seed::{derive, PROBE};
use crate::training::AdamState;

pub const PROBE_EPOCHS: usize = 300;
pub const PROBE_LR: f64 = 0.05;
const PROBE_BATCH: usize = 64;

/// Per-row features for the probe: each output value and its square.
pub fn probe_features(outputs: &Tensor) -> Vec<Vec<f64>> {
    (0..outputs.rows())
        .map(|r| {
            let row = outputs.row(r);
            row.iter().copied().chain(row.iter().map(|v| v * v)).collect()
        })
        .collect()
}

/// Logistic regression on z-scored features.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticProbe {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub weights: Tensor,
    pub bias: Tensor,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticProbe {
    pub fn fit(features: &[Vec<f64>], labels: &[bool], epochs: usize, lr: f64, seed: u64) -> Result<Self> {
        let n = features.len();
        if n == 0 || n != labels.len() {
            return Err(Error::Contract(format!(
                "probe needs matching non-empty features and labels ({n} vs {})",
                labels.len()
            )));
        }
        let d = features[0].len();
        if d == 0 || features.iter().any(|f| f.len() != d) {
            return Err(Error::Contract("probe features must share a non-zero width".into()));
        }
        let mut mean = vec![0.0; d];
        for f in features {
            for (m, v) in mean.iter_mut().zip(f) {
                *m += v / n as f64;
            }
        }
        let mut scale = vec![0.0; d];
        for f in features {
            for j in 0..d {
                scale[j] += (f[j] - mean[j]).powi(2) / n as f64;
            }
        }
        for s in &mut scale {
            *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
        }
        let mut probe = Self {
            mean,
            scale,
            weights: Tensor::zeros(&[d]),
            bias: Tensor::zeros(&[1]),
        };
        let z: Vec<Vec<f64>> = features.iter().map(|f| probe.standardize(f)).collect();

        let mut adam = AdamState::new(lr);
        let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, PROBE, 0));
        let mut order: Vec<usize> = (0..n).collect();
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(PROBE_BATCH) {
                let mut gw = vec![0.0; d];
                let mut gb = 0.0;
                for &i in batch {
                    let err = sigmoid(probe.logit_standardized(&z[i])) - f64::from(u8::from(labels[i]));
                    for j in 0..d {
                        gw[j] += err * z[i][j] / batch.len() as f64;
                    }
                    gb += err / batch.len() as f64;
                }
                probe.weights.set_grad(gw);
                probe.bias.set_grad(vec![gb]);
                adam.step(&mut [("probe.weight".into(), &mut probe.weights), ("probe.bias".into(), &mut probe.bias)])?;
            }
        }
        Ok(probe)
    }

    fn standardize(&self, f: &[f64]) -> Vec<f64> {
        f.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }

    fn logit_standardized(&self, z: &[f64]) -> f64 {
        z.iter().zip(self.weights.data()).map(|(a, b)| a * b).sum::<f64>() + self.bias.data()[0]
    }

    pub fn predict(&self, f: &[f64]) -> bool {
        self.logit_standardized(&self.standardize(f)) > 0.0
    }

    pub fn accuracy(&self, features: &[Vec<f64>], labels: &[bool]) -> f64 {
        let hits = features.iter().zip(labels).filter(|(f, &y)| self.predict(f) == y).count();
        hits as f64 / labels.len().max(1) as f64
    }
}

/// Fits on the train features and returns test accuracy.
pub fn fit_probe(train_x: &[Vec<f64>], train_y: &[bool], test_x: &[Vec<f64>], test_y: &[bool]) -> Result<f64> {
    let probe = LogisticProbe::fit(train_x, train_y, PROBE_EPOCHS, PROBE_LR, 0)?;
    Ok(probe.accuracy(test_x, test_y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_features_are_learned() {
        let xs: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 - 19.5, 1.0]).collect();
        let ys: Vec<bool> = xs.iter().map(|x| x[0] > 0.0).collect();
        assert_eq!(fit_probe(&xs, &ys, &xs, &ys).unwrap(), 1.0);
    }

    #[test]
    fn features_are_values_then_squares() {
        let t = Tensor::from_rows(&[vec![1.0, -2.0]]).unwrap();
        assert_eq!(probe_features(&t), vec![vec![1.0, -2.0, 1.0, 4.0]]);
    }

    #[test]
    fn rejects_mismatched_inputs() {
        assert!(LogisticProbe::fit(&[vec![1.0]], &[], 1, 0.1, 0).is_err());
        assert!(LogisticProbe::fit(&[], &[], 1, 0.1, 0).is_err());
    }
}
