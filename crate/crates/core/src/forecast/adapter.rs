use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::downstream::{fit_network, MlpModel};
use crate::error::{Error, Result};
use crate::features::STD_FLOOR;
use crate::nn::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdapterSpec {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for AdapterSpec {
    fn default() -> Self {
        Self { hidden: vec![64, 32], learning_rate: 0.005, epochs: 100, batch_size: 16 }
    }
}

impl AdapterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.len() != 2 || self.hidden.contains(&0) {
            return Err(Error::config("adapter.hidden", "need exactly 2 positive hidden widths"));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::config("adapter.learning_rate", "must be >= 0"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("adapter.batch_size", "must be >= 1"));
        }
        Ok(())
    }
}

/// MLP mapping `[base forecast ‖ embedding]` to a corrected value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterModel {
    pub net: MlpModel,
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub embedding_width: usize,
}

fn design(base: &[f64], embeddings: &Matrix) -> Result<Matrix> {
    if base.len() != embeddings.nrows() {
        return Err(Error::Shape(format!("{} base forecasts for {} embedding rows", base.len(), embeddings.nrows())));
    }
    let b = Array2::from_shape_vec((base.len(), 1), base.to_vec()).expect("column");
    concatenate(Axis(1), &[b.view(), embeddings.view()]).map_err(|e| Error::Shape(e.to_string()))
}

fn standardize(x: &Matrix, mean: &[f64], std: &[f64]) -> Matrix {
    let mut z = x.clone();
    for (j, mut col) in z.columns_mut().into_iter().enumerate() {
        col.mapv_inplace(|v| (v - mean[j]) / std[j]);
    }
    z
}

impl AdapterModel {

    pub fn predict(&self, base: &[f64], embeddings: &Matrix) -> Result<Vec<f64>> {
        if embeddings.ncols() != self.embedding_width {
            return Err(Error::Shape(format!(
                "adapter expects {} embedding columns, got {}",
                self.embedding_width,
                embeddings.ncols()
            )));
        }
        self.net.predict(&standardize(&design(base, embeddings)?, &self.x_mean, &self.x_std))
    }
}

/// Squared-error training with Adam and cosine decay on standardized inputs
/// and target. Rows are (region, step) pairs.
pub fn train_adapter(
    base: &[f64],
    embeddings: &Matrix,
    actual: &[f64],
    spec: &AdapterSpec,
    seed: u64,
) -> Result<AdapterModel> {
    spec.validate()?;
    let x = design(base, embeddings)?;
    if actual.len() != x.nrows() || actual.is_empty() {
        return Err(Error::Shape(format!("{} targets for {} rows", actual.len(), x.nrows())));
    }
    let n = x.nrows() as f64;
    let x_mean: Vec<f64> = x.columns().into_iter().map(|c| c.sum() / n).collect();
    let x_std: Vec<f64> = x
        .columns()
        .into_iter()
        .zip(&x_mean)
        .map(|(c, m)| (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt().max(STD_FLOOR))
        .collect();
    let z = standardize(&x, &x_mean, &x_std);
    let net = fit_network(&z, actual, &spec.hidden, 0.0, spec.learning_rate, spec.epochs, spec.batch_size, seed)?;
    Ok(AdapterModel { net, x_mean, x_std, embedding_width: embeddings.ncols() })
}
