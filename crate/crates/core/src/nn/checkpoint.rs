use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Activation, DenseLayer};
use crate::error::{Error, Result};
use crate::io;

pub const CHECKPOINT_FORMAT: &str = "geofm-checkpoint/1";

/// One layer with its shape manifest. Values are stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDump {
    pub shape: [usize; 2],
    pub activation: Activation,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerDump {
    pub fn from_layer(layer: &DenseLayer) -> Self {
        Self {
            shape: [layer.outputs(), layer.inputs()],
            activation: layer.activation,
            weight: layer.weight.iter().copied().collect(),
            bias: layer.bias.to_vec(),
        }
    }

    pub fn to_layer(&self) -> Result<DenseLayer> {
        let weight = Array2::from_shape_vec((self.shape[0], self.shape[1]), self.weight.clone())
            .map_err(|e| Error::Shape(format!("checkpoint weight: {e}")))?;
        DenseLayer::new(weight, Array1::from(self.bias.clone()), self.activation)
    }
}

/// Named layers plus free-form metadata, serialized as JSON. Floats are
/// written with round-trip precision so reloading is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub layers: BTreeMap<String, LayerDump>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl Default for Checkpoint {
    fn default() -> Self {
        Self { format: CHECKPOINT_FORMAT.into(), layers: BTreeMap::new(), meta: serde_json::Value::Null }
    }
}

impl Checkpoint {
    pub fn insert(&mut self, name: impl Into<String>, layer: &DenseLayer) {
        self.layers.insert(name.into(), LayerDump::from_layer(layer));
    }

    pub fn layer(&self, name: &str) -> Result<DenseLayer> {
        self.layers
            .get(name)
            .ok_or_else(|| Error::Lookup { kind: "checkpoint layer", id: name.into() })?
            .to_layer()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = io::read_json(path)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::parse(path, format!("unsupported checkpoint format {:?}", ck.format)));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn bit_exact_round_trip() {
        let mut r = rng::from_seed(31);
        let mut ck = Checkpoint::default();
        let a = DenseLayer::glorot(7, 5, Activation::Gelu, &mut r);
        let mut b = DenseLayer::glorot(5, 1, Activation::Identity, &mut r);
        b.bias[0] = std::f64::consts::PI * 1e-300;
        ck.insert("a", &a);
        ck.insert("b", &b);
        ck.meta = serde_json::json!({"epoch": 3});
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        let (a2, b2) = (back.layer("a").unwrap(), back.layer("b").unwrap());
        for (x, y) in a.weight.iter().chain(a.bias.iter()).zip(a2.weight.iter().chain(a2.bias.iter())) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(b.bias[0].to_bits(), b2.bias[0].to_bits());
        assert!(matches!(back.layer("zz"), Err(Error::Lookup { .. })));
    }
}
