use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HuberConfig {
    pub delta: f64,
}

impl Default for HuberConfig {
    fn default() -> Self {
        Self { delta: 1.0 }
    }
}

impl HuberConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::config("huber.delta", "must be > 0"));
        }
        Ok(())
    }
}

/// Mean Huber loss and its gradient with respect to `pred`.
///
/// The gradient is that of the mean, so each entry is the clamped residual
/// divided by the element count.
pub fn huber_loss(pred: &[f64], target: &[f64], delta: f64) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!("prediction length {} != target length {}", pred.len(), target.len())));
    }
    if pred.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let r = p - t;
            if r.abs() <= delta {
                loss += 0.5 * r * r;
                r / n
            } else {
                loss += delta * (r.abs() - 0.5 * delta);
                delta * r.signum() / n
            }
        })
        .collect();
    Ok((loss / n, grad))
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!("prediction length {} != target length {}", pred.len(), target.len())));
    }
    let n = pred.len().max(1) as f64;
    let loss = pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n;
    let grad = pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect();
    Ok((loss, grad))
}

/// Inverted dropout. Returns the output and the multiplicative mask applied
/// (`None` when the call is the identity).
pub fn dropout(batch: &Matrix, rate: f64, training: bool, r: &mut Rng) -> Result<(Matrix, Option<Matrix>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config("dropout.rate", "must satisfy 0 <= rate < 1"));
    }
    if !training || rate == 0.0 {
        return Ok((batch.clone(), None));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask = Array2::from_shape_fn(batch.raw_dim(), |_| if r.random::<f64>() < rate { 0.0 } else { keep });
    Ok((batch * &mask, Some(mask)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    #[test]
    fn huber_examples() {
        let (l, g) = huber_loss(&[1.0, 2.0], &[1.0, 2.0], 1.0).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
        let (l, _) = huber_loss(&[0.5], &[0.0], 1.0).unwrap();
        assert_eq!(l, 0.125);
        let (l, g) = huber_loss(&[2.0], &[0.0], 1.0).unwrap();
        assert_eq!(l, 1.5);
        assert_eq!(g, vec![1.0]);
        assert!(matches!(huber_loss(&[1.0], &[], 1.0), Err(Error::Shape(_))));
        assert!(HuberConfig { delta: 0.0 }.validate().is_err());
    }

    proptest! {
        #[test]
        fn huber_gradient_bounded(res in prop::collection::vec(-50.0f64..50.0, 1..20), delta in 0.1f64..3.0) {
            let zeros = vec![0.0; res.len()];
            let (_, g) = huber_loss(&res, &zeros, delta).unwrap();
            for v in g {
                prop_assert!(v.abs() <= delta + 1e-15);
            }
        }
    }

    #[test]
    fn dropout_identity_cases() {
        let mut r = rng::from_seed(0);
        let x = Array2::from_shape_fn((4, 5), |(i, j)| (i * 5 + j) as f64);
        for training in [true, false] {
            assert_eq!(dropout(&x, 0.0, training, &mut r).unwrap().0, x);
        }
        assert_eq!(dropout(&x, 0.2, false, &mut r).unwrap().0, x);
        assert!(matches!(dropout(&x, 1.0, true, &mut r), Err(Error::Config { .. })));
    }

    #[test]
    fn dropout_survivor_fraction_and_mean() {
        let mut r = rng::from_seed(42);
        let x = Array2::from_elem((1000, 100), 3.0);
        let (y, _) = dropout(&x, 0.5, true, &mut r).unwrap();
        let survivors = y.iter().filter(|v| **v != 0.0).count() as f64 / y.len() as f64;
        assert!((survivors - 0.5).abs() < 0.01, "{survivors}");
        let mean = y.mean().unwrap();
        assert!((mean - 3.0).abs() / 3.0 < 0.02, "{mean}");
    }
}
