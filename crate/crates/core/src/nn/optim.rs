use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bias-corrected Adam over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self { m: vec![0.0; n_params], v: vec![0.0; n_params], step: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam state has {} entries, params {}, grads {}",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub total_steps: u64,
}

impl CosineSchedule {
    pub fn new(lr_max: f64, lr_min: f64, total_steps: u64) -> Result<Self> {
        if !(lr_max >= lr_min && lr_min >= 0.0) {
            return Err(Error::config("schedule.lr", "need lr_max >= lr_min >= 0"));
        }
        if total_steps < 1 {
            return Err(Error::config("schedule.total_steps", "must be >= 1"));
        }
        Ok(Self { lr_max, lr_min, total_steps })
    }

    /// Learning rate at step `t`; steps past the end clamp to `lr_min`.
    pub fn lr(&self, t: u64) -> f64 {
        if t >= self.total_steps {
            return self.lr_min;
        }
        let frac = t as f64 / self.total_steps as f64;
        self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_and_zero_lr_are_identity() {
        let mut s = AdamState::new(3);
        let mut p = vec![1.0, -2.0, 0.5];
        s.step(&mut p, &[0.0; 3], 0.1).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        s.step(&mut p, &[1.0, -3.0, 2.0], 0.0).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_magnitude_is_lr_and_opposes_gradient() {
        let mut s = AdamState::new(4);
        let g = [0.3, -7.0, 1e-3, -0.02];
        let mut p = vec![0.0; 4];
        s.step(&mut p, &g, 0.01).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            assert!((pi.abs() - 0.01).abs() < 1e-6);
            assert!(pi.signum() == -gi.signum());
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut s = AdamState::new(2);
        assert!(s.step(&mut [0.0; 3], &[0.0; 3], 0.1).is_err());
    }

    #[test]
    fn cosine_examples() {
        let s = CosineSchedule::new(0.1, 0.02, 100).unwrap();
        assert_eq!(s.lr(0), 0.1);
        assert!((s.lr(100) - 0.02).abs() < 1e-15);
        assert!((s.lr(50) - 0.06).abs() < 1e-12);
        assert_eq!(s.lr(1000), 0.02);
        assert!(CosineSchedule::new(0.1, 0.2, 10).is_err());
        assert!(CosineSchedule::new(0.1, 0.0, 0).is_err());
    }
}
