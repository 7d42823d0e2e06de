//! Adam with bias correction.

use super::{NnError, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..AdamConfig::default()
        }
    }
}

/// Optimizer state: step counter plus first/second moment buffers mirroring
/// the parameter tensors (in visit order).
#[derive(Debug, Clone)]
pub struct AdamState<S> {
    pub step: u64,
    pub cfg: AdamConfig,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(cfg: AdamConfig, param_sizes: &[usize]) -> Self {
        AdamState {
            step: 0,
            cfg,
            m: param_sizes.iter().map(|&n| vec![S::zero(); n]).collect(),
            v: param_sizes.iter().map(|&n| vec![S::zero(); n]).collect(),
        }
    }

    /// One Adam update over the given parameter tensors, consuming the
    /// gradient buffers (they are zeroed afterwards). Tensors must be passed
    /// in the same order every step; a missing gradient counts as zero.
    pub fn step_params(&mut self, params: &mut [&mut Tensor<S>]) -> Result<(), NnError> {
        if params.len() != self.m.len() {
            return Err(NnError::ShapeMismatch(format!(
                "Adam state tracks {} tensors, got {}",
                self.m.len(),
                params.len()
            )));
        }
        self.step += 1;
        let b1 = S::cast_from(self.cfg.beta1);
        let b2 = S::cast_from(self.cfg.beta2);
        let one_minus_b1 = S::cast_from(1.0 - self.cfg.beta1);
        let one_minus_b2 = S::cast_from(1.0 - self.cfg.beta2);
        let bc1 = S::cast_from(1.0 - self.cfg.beta1.powi(self.step as i32));
        let bc2 = S::cast_from(1.0 - self.cfg.beta2.powi(self.step as i32));
        let lr = S::cast_from(self.cfg.lr);
        let eps = S::cast_from(self.cfg.eps);

        for (idx, p) in params.iter_mut().enumerate() {
            if self.m[idx].len() != p.len() {
                return Err(NnError::ShapeMismatch(format!(
                    "Adam moment {idx} has {} elements, parameter has {}",
                    self.m[idx].len(),
                    p.len()
                )));
            }
            let Some(grad) = p.grad().map(<[S]>::to_vec) else {
                // no gradient accumulated: moments still decay
                for (m, v) in self.m[idx].iter_mut().zip(&mut self.v[idx]) {
                    *m = b1 * *m;
                    *v = b2 * *v;
                }
                continue;
            };
            let (m_buf, v_buf) = (&mut self.m[idx], &mut self.v[idx]);
            for (((value, &g), m), v) in p
                .values_mut()
                .iter_mut()
                .zip(&grad)
                .zip(m_buf.iter_mut())
                .zip(v_buf.iter_mut())
            {
                *m = b1 * *m + one_minus_b1 * g;
                *v = b2 * *v + one_minus_b2 * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *value -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.zero_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut p = Tensor::new(vec![3], vec![1.0f64, -2.0, 0.5]);
        p.grad_mut(); // allocated, all zero
        let before = p.values().to_vec();
        let mut adam = AdamState::new(AdamConfig::default(), &[3]);
        adam.step_params(&mut [&mut p]).unwrap();
        assert_eq!(p.values(), &before[..]);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn first_step_with_unit_gradient_moves_by_lr() {
        // bias correction makes the very first update -lr * 1/(1 + eps-term)
        let mut p = Tensor::new(vec![1], vec![0.0f64]);
        p.add_grad(&[1.0]).unwrap();
        let mut adam = AdamState::new(AdamConfig::default(), &[1]);
        adam.step_params(&mut [&mut p]).unwrap();
        assert!((p.values()[0] + 1e-3).abs() < 1e-8, "got {}", p.values()[0]);
    }

    #[test]
    fn constant_gradient_keeps_step_size_near_lr() {
        let mut p = Tensor::new(vec![1], vec![0.0f64]);
        let mut adam = AdamState::new(AdamConfig::default(), &[1]);
        for _ in 0..10 {
            p.add_grad(&[1.0]).unwrap();
            adam.step_params(&mut [&mut p]).unwrap();
        }
        // with g identically 1, m_hat = 1 and v_hat = 1, so each step is ~lr
        assert!((p.values()[0] + 10.0 * 1e-3).abs() < 1e-6, "got {}", p.values()[0]);
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let run = || {
            let mut rng = crate::rng::Rng::seed_from(42);
            let mut p = Tensor::new(vec![4], (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect());
            let mut adam = AdamState::new(AdamConfig::default(), &[4]);
            for step in 0..50 {
                let g: Vec<f64> = p
                    .values()
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| v * 0.3 + (step + i) as f64 * 0.01)
                    .collect();
                p.add_grad(&g).unwrap();
                adam.step_params(&mut [&mut p]).unwrap();
            }
            p.values().to_vec()
        };
        let (a, b) = (run(), run());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let mut p = Tensor::<f64>::zeros(vec![3]);
        let mut adam = AdamState::new(AdamConfig::default(), &[4]);
        assert!(adam.step_params(&mut [&mut p]).is_err());
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut p = Tensor::new(vec![1], vec![2.0f64]);
        let mut adam = AdamState::new(AdamConfig { lr: 0.05, ..AdamConfig::default() }, &[1]);
        for _ in 0..500 {
            let g = 2.0 * p.values()[0]; // d/dx x^2
            p.add_grad(&[g]).unwrap();
            adam.step_params(&mut [&mut p]).unwrap();
        }
        assert!(p.values()[0].abs() < 1e-2, "got {}", p.values()[0]);
    }
}
