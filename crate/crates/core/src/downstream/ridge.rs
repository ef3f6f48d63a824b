use nalgebra::{DMatrix, DVector};
use ndarray::Axis;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub coef: Vec<f64>,
    pub intercept: f64,
}

/// Ridge regression with an unpenalized intercept: center `x` and `y`, then
/// solve `(XcᵀXc + λI) w = Xcᵀyc` by Cholesky factorization.
pub fn ridge_fit(x: &Matrix, y: &[f64], lambda: f64) -> Result<RidgeModel> {
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!("{} rows for {} targets", x.nrows(), y.len())));
    }
    if y.len() < 2 {
        return Err(Error::Fit("ridge needs at least 2 rows".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::config("ridge.lambda", "must be >= 0"));
    }
    let p = x.ncols();
    let x_mean = x.mean_axis(Axis(0)).expect("non-empty");
    let y_mean = y.iter().sum::<f64>() / y.len() as f64;
    let xc = x - &x_mean;
    let gram = xc.t().dot(&xc);
    let rhs: Vec<f64> = (0..p)
        .map(|j| xc.column(j).iter().zip(y).map(|(a, b)| a * (b - y_mean)).sum())
        .collect();
    let mut a = DMatrix::from_fn(p, p, |i, j| gram[[i, j]]);
    for i in 0..p {
        a[(i, i)] += lambda;
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Singular(format!("ridge normal matrix ({p}×{p}, λ={lambda}) is not positive definite")))?;
    let w = chol.solve(&DVector::from_vec(rhs));
    let coef: Vec<f64> = w.iter().copied().collect();
    let intercept = y_mean - coef.iter().zip(x_mean.iter()).map(|(c, m)| c * m).sum::<f64>();
    Ok(RidgeModel { coef, intercept })
}

impl RidgeModel {
    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        x.rows()
            .into_iter()
            .map(|r| self.intercept + r.iter().zip(&self.coef).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }
}
