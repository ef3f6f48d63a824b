use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Source;
use crate::sampling::SamplerConfig;

/// A contiguous block of embedding dimensions dedicated to some sources.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Partition {
    pub name: String,
    pub sources: Vec<Source>,
    pub start: usize,
    pub end: usize,
}

impl Partition {
    pub fn new(name: &str, sources: &[Source], range: Range<usize>) -> Self {
        Self { name: name.into(), sources: sources.to_vec(), start: range.start, end: range.end }
    }

    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn width(&self) -> usize {
        self.end - self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Sum,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdfmConfig {
    pub hidden: usize,
    pub embedding_dim: usize,
    pub partitions: Vec<Partition>,
    pub message_passing_rounds: usize,
    pub pooling: Pooling,
    pub share_neighbor_weights: bool,
    pub huber_delta: f64,
    pub lr_max: f64,
    pub lr_min: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub validation_fraction: f64,
    /// Per-source loss weight; missing sources weigh 1.
    pub loss_weights: BTreeMap<Source, f64>,
    pub seed: u64,
    /// Seeds per gradient chunk. Chunks are reduced in a fixed order, so the
    /// result does not depend on the worker count.
    pub grad_chunk: usize,
    pub sampler: SamplerConfig,
    /// Sampler seed used when exporting embeddings.
    pub export_seed: u64,
}

impl Default for PdfmConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl PdfmConfig {
    /// Small embedding (16/16/16) for the synthetic desk world.
    pub fn desk() -> Self {
        Self {
            hidden: 256,
            embedding_dim: 48,
            partitions: vec![
                Partition::new("trends", &[Source::Trends], 0..16),
                Partition::new("maps_busyness", &[Source::Maps, Source::Busyness], 16..32),
                Partition::new("weather_aq", &[Source::WeatherAq], 32..48),
            ],
            message_passing_rounds: 1,
            pooling: Pooling::Sum,
            share_neighbor_weights: false,
            huber_delta: 1.0,
            lr_max: 1e-3,
            lr_min: 0.0,
            epochs: 30,
            batch_size: 16,
            validation_fraction: 0.2,
            loss_weights: BTreeMap::new(),
            seed: 7,
            grad_chunk: 4,
            sampler: SamplerConfig::default(),
            export_seed: 1234,
        }
    }

    /// Full-width 330-dimensional embedding.
    pub fn paper() -> Self {
        Self {
            embedding_dim: 330,
            partitions: vec![
                Partition::new("trends", &[Source::Trends], 0..128),
                Partition::new("maps_busyness", &[Source::Maps, Source::Busyness], 128..256),
                Partition::new("weather_aq", &[Source::WeatherAq], 256..330),
            ],
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden < 1 {
            return Err(Error::config("pdfm.hidden", "must be >= 1"));
        }
        if self.embedding_dim < 1 {
            return Err(Error::config("pdfm.embedding_dim", "must be >= 1"));
        }
        if self.message_passing_rounds != 1 {
            return Err(Error::config("pdfm.message_passing_rounds", "only one round is supported"));
        }
        let mut at = 0;
        let mut seen = Vec::new();
        for p in &self.partitions {
            if p.start != at || p.end <= p.start {
                return Err(Error::config(
                    "pdfm.partitions",
                    format!("partition `{}` [{}, {}) must start at {at} and be non-empty", p.name, p.start, p.end),
                ));
            }
            for s in &p.sources {
                if seen.contains(s) {
                    return Err(Error::config("pdfm.partitions", format!("source {s} appears in two partitions")));
                }
                seen.push(*s);
            }
            at = p.end;
        }
        if at != self.embedding_dim {
            return Err(Error::config("pdfm.partitions", format!("partitions cover [0, {at}) but embedding_dim is {}", self.embedding_dim)));
        }
        if !(self.huber_delta > 0.0) {
            return Err(Error::config("pdfm.huber_delta", "must be > 0"));
        }
        if !(self.lr_max >= self.lr_min && self.lr_min >= 0.0) {
            return Err(Error::config("pdfm.lr_max", "need lr_max >= lr_min >= 0"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("pdfm.batch_size", "must be >= 1"));
        }
        if self.grad_chunk < 1 {
            return Err(Error::config("pdfm.grad_chunk", "must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::config("pdfm.validation_fraction", "must satisfy 0 <= f < 1"));
        }
        if self.loss_weights.values().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::config("pdfm.loss_weights", "weights must be finite and >= 0"));
        }
        self.sampler.validate()
    }

    pub fn partition_of(&self, source: Source) -> Option<&Partition> {
        self.partitions.iter().find(|p| p.sources.contains(&source))
    }

    pub fn loss_weight(&self, source: Source) -> f64 {
        self.loss_weights.get(&source).copied().unwrap_or(1.0)
    }
}
