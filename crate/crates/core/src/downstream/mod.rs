//! Task models trained on embeddings or coordinates: ridge regression, a
//! three-hidden-layer MLP and gradient-boosted trees.

mod gbdt;
mod mlp;
mod ridge;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use gbdt::{gbdt_fit, GbdtModel, GbdtSpec, Tree, TreeNode};
pub use mlp::{mlp_fit, MlpModel, MlpSpec};
pub(crate) use mlp::fit_network;
pub use ridge::{ridge_fit, RidgeModel};

use crate::error::{Error, Result};
use crate::io;
use crate::nn::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Ridge,
    Mlp,
    Gbdt,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Ridge => "ridge",
            Family::Mlp => "mlp",
            Family::Gbdt => "gbdt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegressorSpec {
    Ridge {
        #[serde(default = "default_lambda")]
        lambda: f64,
    },
    Mlp(MlpSpec),
    Gbdt(GbdtSpec),
}

fn default_lambda() -> f64 {
    1.0
}

impl RegressorSpec {
    pub fn family(&self) -> Family {
        match self {
            RegressorSpec::Ridge { .. } => Family::Ridge,
            RegressorSpec::Mlp(_) => Family::Mlp,
            RegressorSpec::Gbdt(_) => Family::Gbdt,
        }
    }

    pub fn default_for(family: Family) -> Self {
        match family {
            Family::Ridge => RegressorSpec::Ridge { lambda: 1.0 },
            Family::Mlp => RegressorSpec::Mlp(MlpSpec::default()),
            Family::Gbdt => RegressorSpec::Gbdt(GbdtSpec::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Fitted {
    Ridge(RidgeModel),
    Mlp(MlpModel),
    Gbdt(GbdtModel),
}

/// A fitted model together with the input width it accepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedRegressor {
    pub width: usize,
    pub model: Fitted,
}

impl TrainedRegressor {
    pub fn family(&self) -> Family {
        match self.model {
            Fitted::Ridge(_) => Family::Ridge,
            Fitted::Mlp(_) => Family::Mlp,
            Fitted::Gbdt(_) => Family::Gbdt,
        }
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.ncols() != self.width {
            return Err(Error::Shape(format!("model expects {} features, got {}", self.width, x.ncols())));
        }
        match &self.model {
            Fitted::Ridge(m) => Ok(m.predict(x)),
            Fitted::Mlp(m) => m.predict(x),
            Fitted::Gbdt(m) => Ok(m.predict(x)),
        }
    }

    /// JSON dump for audit (trees, weights and their shapes).
    pub fn dump(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }
}

/// Fit any family. `validation` is used for GBDT early stopping only.
pub fn fit_regressor(
    spec: &RegressorSpec,
    x: &Matrix,
    y: &[f64],
    validation: Option<(&Matrix, &[f64])>,
    seed: u64,
) -> Result<TrainedRegressor> {
    let model = match spec {
        RegressorSpec::Ridge { lambda } => Fitted::Ridge(ridge_fit(x, y, *lambda)?),
        RegressorSpec::Mlp(s) => Fitted::Mlp(mlp_fit(x, y, s, seed)?),
        RegressorSpec::Gbdt(s) => Fitted::Gbdt(gbdt_fit(x, y, validation, s)?),
    };
    Ok(TrainedRegressor { width: x.ncols(), model })
}
