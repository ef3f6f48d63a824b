//! Inverse distance weighting on geodesic distance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{haversine, LatLon};
use crate::par;

pub const ZERO_DISTANCE_MILES: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdwConfig {
    pub power: f64,
    pub k: usize,
}

impl Default for IdwConfig {
    fn default() -> Self {
        Self { power: 2.0, k: 32 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdwModel {
    pub coords: Vec<LatLon>,
    pub values: Vec<f64>,
    pub config: IdwConfig,
}

pub fn idw_fit(coords: &[LatLon], values: &[f64], config: &IdwConfig) -> Result<IdwModel> {
    if !(config.power > 0.0) {
        return Err(Error::config("idw.power", "must be > 0"));
    }
    if config.k < 1 {
        return Err(Error::config("idw.k", "must be >= 1"));
    }
    if coords.len() != values.len() {
        return Err(Error::Fit(format!("{} coordinates for {} values", coords.len(), values.len())));
    }
    if coords.is_empty() {
        return Err(Error::Fit("idw needs at least one training point".into()));
    }
    for c in coords {
        c.validate()?;
    }
    Ok(IdwModel { coords: coords.to_vec(), values: values.to_vec(), config: config.clone() })
}

impl IdwModel {
    pub fn predict_one(&self, q: LatLon) -> f64 {
        let mut d: Vec<(f64, usize)> = self.coords.iter().enumerate().map(|(i, c)| (haversine(q, *c), i)).collect();
        let (sum, count) = d
            .iter()
            .filter(|(dist, _)| *dist <= ZERO_DISTANCE_MILES)
            .fold((0.0, 0usize), |(s, n), &(_, i)| (s + self.values[i], n + 1));
        if count > 0 {
            return sum / count as f64;
        }
        let k = self.config.k.min(d.len());
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < d.len() {
            d.select_nth_unstable_by(k - 1, cmp);
            d.truncate(k);
        }
        d.sort_by(cmp);
        let (num, den) = d.iter().fold((0.0, 0.0), |(num, den), &(dist, i)| {
            let w = dist.powf(-self.config.power);
            (num + w * self.values[i], den + w)
        });
        num / den
    }

    pub fn predict(&self, queries: &[LatLon]) -> Vec<f64> {
        par::map_slice(queries, |q| self.predict_one(*q))
    }
}
