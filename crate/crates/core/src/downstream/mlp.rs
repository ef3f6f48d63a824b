use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{mse_loss, Activation, AdamState, CosineSchedule, Matrix, Mlp};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpSpec {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for MlpSpec {
    fn default() -> Self {
        Self { hidden: vec![512, 256, 128], dropout: 0.2, learning_rate: 0.005, epochs: 40, batch_size: 256 }
    }
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.len() != 3 || self.hidden.contains(&0) {
            return Err(Error::config("mlp.hidden", "need exactly 3 positive hidden widths"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("mlp.dropout", "must satisfy 0 <= rate < 1"));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::config("mlp.learning_rate", "must be >= 0"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("mlp.batch_size", "must be >= 1"));
        }
        Ok(())
    }
}

/// Network on a standardized target: `y = y_mean + y_std * net(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub net: Mlp,
    pub y_mean: f64,
    pub y_std: f64,
    pub train_loss: Vec<f64>,
}

impl MlpModel {
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(self.net.predict(x)?.column(0).iter().map(|v| self.y_mean + self.y_std * v).collect())
    }
}

/// ReLU MLP with dropout, squared error, Adam and cosine decay.
///
/// Batches larger than the row count are clamped to the row count.
pub fn mlp_fit(x: &Matrix, y: &[f64], spec: &MlpSpec, seed: u64) -> Result<MlpModel> {
    spec.validate()?;
    fit_network(x, y, &spec.hidden, spec.dropout, spec.learning_rate, spec.epochs, spec.batch_size, seed)
}

/// Shared training loop for any hidden-layer stack.
#[allow(clippy::too_many_arguments)]
pub(crate) fn fit_network(
    x: &Matrix,
    y: &[f64],
    hidden: &[usize],
    dropout: f64,
    learning_rate: f64,
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> Result<MlpModel> {
    if x.nrows() != y.len() || y.is_empty() {
        return Err(Error::Shape(format!("{} rows for {} targets", x.nrows(), y.len())));
    }
    let n = y.len();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let y_std = (y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64).sqrt().max(crate::features::STD_FLOOR);
    let yz: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_std).collect();
    let mut net = Mlp::new(x.ncols(), hidden, 1, Activation::Relu, dropout, &mut rng::stream(seed, "mlp-init"))?;
    let batch = batch_size.min(n);
    let steps_per_epoch = n.div_ceil(batch);
    let schedule = CosineSchedule::new(learning_rate, 0.0, (epochs * steps_per_epoch).max(1) as u64)?;
    let mut params = net.params();
    let mut adam = AdamState::new(params.len());
    let mut drop_rng = rng::stream(seed, "mlp-dropout");
    let mut order: Vec<usize> = (0..n).collect();
    let mut train_loss = Vec::with_capacity(epochs);
    let mut step = 0u64;
    for epoch in 0..epochs {
        order.shuffle(&mut rng::stream(seed, &format!("mlp-order-{epoch}")));
        let mut total = 0.0;
        for idx in order.chunks(batch) {
            let xb = x.select(Axis(0), idx);
            let yb: Vec<f64> = idx.iter().map(|&i| yz[i]).collect();
            let (out, cache) = net.forward_train(&xb, &mut drop_rng)?;
            let (loss, grad) = mse_loss(out.as_slice().expect("standard layout"), &yb)?;
            if !loss.is_finite() {
                return Err(Error::Training { step: step as usize, reason: format!("mlp loss is {loss}") });
            }
            let up = Array2::from_shape_vec((idx.len(), 1), grad).expect("column");
            let grads = Mlp::flatten_grads(&net.backward(&cache, &up)?);
            adam.step(&mut params, &grads, schedule.lr(step))?;
            net.set_params(&params)?;
            total += loss * idx.len() as f64;
            step += 1;
        }
        train_loss.push(total / n as f64);
    }
    Ok(MlpModel { net, y_mean, y_std, train_loss })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use rand::Rng as _;

    fn data(n: usize, seed: u64) -> (Matrix, Vec<f64>) {
        let mut r = rng::from_seed(seed);
        let x = Array2::from_shape_fn((n, 3), |_| r.random_range(-1.0..1.0));
        let y = x.rows().into_iter().map(|v| v[0] - 0.5 * v[1] * v[2]).collect();
        (x, y)
    }

    fn small() -> MlpSpec {
        MlpSpec { hidden: vec![16, 8, 4], epochs: 5, batch_size: 32, ..Default::default() }
    }

    #[test]
    fn zero_epochs_is_the_initial_network() {
        let (x, y) = data(64, 1);
        let spec = MlpSpec { epochs: 0, ..small() };
        let m = mlp_fit(&x, &y, &spec, 3).unwrap();
        let init = Mlp::new(3, &spec.hidden, 1, Activation::Relu, spec.dropout, &mut rng::stream(3, "mlp-init")).unwrap();
        assert_eq!(m.net, init);
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let (x, y) = data(64, 2);
        let m0 = mlp_fit(&x, &y, &MlpSpec { epochs: 0, ..small() }, 4).unwrap();
        let m = mlp_fit(&x, &y, &MlpSpec { learning_rate: 0.0, ..small() }, 4).unwrap();
        assert_eq!(m.net, m0.net);
    }

    #[test]
    fn constant_target_is_learned() {
        let (x, _) = data(128, 3);
        let y = vec![4.0; 128];
        let m = mlp_fit(&x, &y, &small(), 5).unwrap();
        let p = m.predict(&x).unwrap();
        let mse = p.iter().map(|v| (v - 4.0).powi(2)).sum::<f64>() / 128.0;
        assert!(mse <= 1e-2 * 16.0, "{mse}");
    }

    #[test]
    fn fits_a_smooth_function_and_predicts_deterministically() {
        let (x, y) = data(512, 4);
        let m = mlp_fit(&x, &y, &MlpSpec { epochs: 40, ..small() }, 6).unwrap();
        assert!(m.train_loss.last().unwrap() < &m.train_loss[0]);
        assert_eq!(m.predict(&x).unwrap(), m.predict(&x).unwrap());
        assert_eq!(m, mlp_fit(&x, &y, &MlpSpec { epochs: 40, ..small() }, 6).unwrap());
    }

    #[test]
    fn tiny_architecture_gradient_check() {
        let (x, y) = data(6, 7);
        let x = x.slice(ndarray::s![.., ..3]).to_owned();
        let net = Mlp::new(3, &[4, 3, 2], 1, Activation::Relu, 0.0, &mut rng::from_seed(8)).unwrap();
        let f = |p: &[f64]| {
            let mut n = net.clone();
            n.set_params(p).unwrap();
            let (out, cache) = n.forward_train(&x, &mut rng::from_seed(0)).unwrap();
            let (l, g) = mse_loss(out.as_slice().unwrap(), &y).unwrap();
            let up = Array2::from_shape_vec((6, 1), g).unwrap();
            (l, Mlp::flatten_grads(&n.backward(&cache, &up).unwrap()))
        };
        assert!(grad_check(f, &net.params(), 1e-5) < 1e-6);
    }

    #[test]
    fn spec_validation() {
        assert!(MlpSpec { hidden: vec![4, 4], ..Default::default() }.validate().is_err());
        assert!(MlpSpec { dropout: 1.0, ..Default::default() }.validate().is_err());
    }
}
