use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{gelu, gelu_grad, Matrix};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Gelu,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Gelu => gelu(z),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    #[inline]
    pub fn derivative(&self, z: f64) -> f64 {
        match self {
            Activation::Gelu => gelu_grad(z),
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// `activation(x W^T + b)` with `W` stored as out × in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    pub input: Matrix,
    pub pre_activation: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseGrads {
    pub fn zeros_like(layer: &DenseLayer) -> Self {
        Self { weight: Array2::zeros(layer.weight.raw_dim()), bias: Array1::zeros(layer.bias.len()) }
    }

    pub fn add_assign(&mut self, other: &DenseGrads) {
        self.weight += &other.weight;
        self.bias += &other.bias;
    }

    pub fn scale(&mut self, s: f64) {
        self.weight *= s;
        self.bias *= s;
    }
}

impl DenseLayer {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Result<Self> {
        if weight.nrows() != bias.len() {
            return Err(Error::Shape(format!("bias length {} != output width {}", bias.len(), weight.nrows())));
        }
        if weight.nrows() == 0 || weight.ncols() == 0 {
            return Err(Error::Shape("dense layer dimensions must be positive".into()));
        }
        Ok(Self { weight, bias, activation })
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(inputs: usize, outputs: usize, activation: Activation, rng: &mut Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weight = Array2::from_shape_fn((outputs, inputs), |_| rng.random_range(-limit..limit));
        Self { weight, bias: Array1::zeros(outputs), activation }
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self { weight: Array2::zeros((outputs, inputs)), bias: Array1::zeros(outputs), activation }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.ncols() != self.inputs() {
            return Err(Error::Shape(format!("layer expects width {}, got {}", self.inputs(), x.ncols())));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &Matrix) -> Result<(Matrix, DenseCache)> {
        self.check_input(x)?;
        let mut z = x.dot(&self.weight.t());
        z += &self.bias;
        let a = match self.activation {
            Activation::Identity => z.clone(),
            act => z.mapv(|v| act.apply(v)),
        };
        Ok((a, DenseCache { input: x.clone(), pre_activation: z }))
    }

    /// Returns parameter gradients and the gradient with respect to the input.
    pub fn backward(&self, cache: &DenseCache, upstream: &Matrix) -> Result<(DenseGrads, Matrix)> {
        if upstream.raw_dim() != cache.pre_activation.raw_dim() {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} does not match layer output {:?}",
                upstream.shape(),
                cache.pre_activation.shape()
            )));
        }
        let delta = match self.activation {
            Activation::Identity => upstream.clone(),
            act => {
                let mut d = upstream.clone();
                d.zip_mut_with(&cache.pre_activation, |g, &z| *g *= act.derivative(z));
                d
            }
        };
        let weight = delta.t().dot(&cache.input);
        let bias = delta.sum_axis(Axis(0));
        let dx = delta.dot(&self.weight);
        Ok((DenseGrads { weight, bias }, dx))
    }

    /// Append weights then bias to `out`.
    pub fn write_params(&self, out: &mut Vec<f64>) {
        out.extend(self.weight.iter());
        out.extend(self.bias.iter());
    }

    /// Read weights then bias from the front of `src`; returns the rest.
    pub fn read_params<'a>(&mut self, src: &'a [f64]) -> &'a [f64] {
        let (w, rest) = src.split_at(self.weight.len());
        let (b, rest) = rest.split_at(self.bias.len());
        self.weight.iter_mut().zip(w).for_each(|(d, s)| *d = *s);
        self.bias.iter_mut().zip(b).for_each(|(d, s)| *d = *s);
        rest
    }
}

impl DenseGrads {
    pub fn write_params(&self, out: &mut Vec<f64>) {
        out.extend(self.weight.iter());
        out.extend(self.bias.iter());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use crate::rng;
    use ndarray::array;

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = DenseLayer::new(Array2::eye(3), Array1::zeros(3), Activation::Identity).unwrap();
        let x = array![[1.0, -2.0, 3.0], [0.5, 0.0, -1.0]];
        assert_eq!(layer.forward(&x).unwrap(), x);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut r = rng::from_seed(1);
        let layer = DenseLayer::glorot(4, 3, Activation::Gelu, &mut r);
        let x = Array2::from_shape_fn((5, 4), |(i, j)| (i as f64 - j as f64) * 0.3);
        let (_, cache) = layer.forward_cached(&x).unwrap();
        let (g, dx) = layer.backward(&cache, &Array2::zeros((5, 3))).unwrap();
        assert!(g.weight.iter().chain(g.bias.iter()).chain(dx.iter()).all(|v| *v == 0.0));
    }

    #[test]
    fn shape_errors() {
        let layer = DenseLayer::zeros(4, 3, Activation::Relu);
        assert!(matches!(layer.forward(&Array2::zeros((2, 5))), Err(Error::Shape(_))));
        assert!(DenseLayer::new(Array2::zeros((3, 2)), Array1::zeros(2), Activation::Relu).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for act in [Activation::Gelu, Activation::Relu, Activation::Identity] {
            let mut r = rng::from_seed(11);
            let mut layer = DenseLayer::glorot(4, 3, act, &mut r);
            layer.bias = array![0.1, -0.2, 0.3];
            let x = Array2::from_shape_fn((6, 4), |_| r.random_range(-1.0..1.0));
            let target = Array2::from_shape_fn((6, 3), |_| r.random_range(-1.0..1.0));
            let mut params = Vec::new();
            layer.write_params(&mut params);
            let loss_and_grad = |p: &[f64]| {
                let mut l = layer.clone();
                l.read_params(p);
                let (y, cache) = l.forward_cached(&x).unwrap();
                let diff = &y - &target;
                let loss = 0.5 * diff.iter().map(|d| d * d).sum::<f64>();
                let (g, _) = l.backward(&cache, &diff).unwrap();
                let mut flat = Vec::new();
                g.write_params(&mut flat);
                (loss, flat)
            };
            let err = grad_check(&loss_and_grad, &params, 1e-5);
            assert!(err < 1e-6, "{act:?}: {err}");
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut r = rng::from_seed(5);
        let layer = DenseLayer::glorot(3, 2, Activation::Gelu, &mut r);
        let x0: Vec<f64> = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();
        let f = |p: &[f64]| {
            let x = Array2::from_shape_vec((2, 3), p.to_vec()).unwrap();
            let (y, cache) = layer.forward_cached(&x).unwrap();
            let loss = y.iter().map(|v| v * v).sum::<f64>();
            let (_, dx) = layer.backward(&cache, &(&y * 2.0)).unwrap();
            (loss, dx.iter().copied().collect::<Vec<_>>())
        };
        assert!(grad_check(&f, &x0, 1e-5) < 1e-6);
    }
}
