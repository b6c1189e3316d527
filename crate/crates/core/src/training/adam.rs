use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{Error, Result};

/// Bias-corrected Adam with per-parameter moment buffers.
///
/// Moments are created on the first step, in the order parameters are
/// presented; later steps must present the same parameters in the same order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Applies one update using each tensor's stored gradient. Nothing is
    /// modified if any gradient is missing or non-finite.
    pub fn step(&mut self, params: &mut [(String, &mut Tensor)]) -> Result<()> {
        for (name, p) in params.iter() {
            let g = p
                .grad()
                .ok_or_else(|| Error::Training(format!("parameter {name} has no gradient")))?;
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite gradient {} at {name}[{i}]",
                    g[i]
                )));
            }
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len()
            || self.first.iter().zip(params.iter()).any(|(m, (_, p))| m.len() != p.numel())
        {
            return Err(Error::Training("optimizer state does not match the parameter set".into()));
        }

        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, (_, p)) in params.iter_mut().enumerate() {
            let g = p.grad().expect("checked above").to_vec();
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_grad(data: Vec<f64>, grad: Vec<f64>) -> Tensor {
        let mut t = Tensor::vector(data);
        t.set_grad(grad);
        t
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = with_grad(vec![0.5, -1.0], vec![0.0, 0.0]);
        let mut adam = AdamState::new(1e-3);
        adam.step(&mut [("p".into(), &mut p)]).unwrap();
        assert_eq!(p.data(), &[0.5, -1.0]);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = with_grad(vec![2.0], vec![1.0]);
        let mut adam = AdamState::new(0.1);
        adam.step(&mut [("p".into(), &mut p)]).unwrap();
        // m̂ = 1, v̂ = 1 → Δ = 0.1 / (1 + 1e-8)
        let expected = 2.0 - 0.1 / (1.0 + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn parameters_update_independently() {
        let mut a = with_grad(vec![1.0], vec![0.3]);
        let mut b = with_grad(vec![1.0], vec![-5.0]);
        let mut joint = AdamState::new(0.01);
        joint.step(&mut [("a".into(), &mut a), ("b".into(), &mut b)]).unwrap();

        let mut a2 = with_grad(vec![1.0], vec![0.3]);
        let mut b2 = with_grad(vec![1.0], vec![-5.0]);
        AdamState::new(0.01).step(&mut [("a".into(), &mut a2)]).unwrap();
        AdamState::new(0.01).step(&mut [("b".into(), &mut b2)]).unwrap();
        assert_eq!(a.data(), a2.data());
        assert_eq!(b.data(), b2.data());
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut ok = with_grad(vec![1.0], vec![0.5]);
        let mut bad = with_grad(vec![1.0, 2.0], vec![0.0, f64::NAN]);
        let mut adam = AdamState::new(0.01);
        let err = adam
            .step(&mut [("ok".into(), &mut ok), ("suffix.0.bias".into(), &mut bad)])
            .unwrap_err();
        assert!(err.to_string().contains("suffix.0.bias"), "{err}");
        assert_eq!(ok.data(), &[1.0]);
        assert_eq!(adam.t, 0);
    }

    #[test]
    fn step_counter_increments() {
        let mut p = with_grad(vec![0.0], vec![1.0]);
        let mut adam = AdamState::new(0.01);
        for k in 1..=5 {
            adam.step(&mut [("p".into(), &mut p)]).unwrap();
            assert_eq!(adam.t, k);
        }
    }
}
