//! The run configuration document: one TOML file selecting a preset
//! (`desk` or `paper`) and overriding any of its keys.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::Value;

use crate::bench::BenchConfig;
use crate::error::{Error, Result};
use crate::features::ClipOrder;
use crate::forecast::{ForecastConfig, ForecastTaskConfig, ForecasterSpec, ThreePartSplit};
use crate::graph::GraphConfig;
use crate::pdfm::PdfmConfig;
use crate::synthgeo::{desk_synth_config, SynthConfig};
use crate::{io, rng};

pub const PRESETS: [&str; 2] = ["desk", "paper"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    pub clip: f64,
    pub clip_order: ClipOrder,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { clip: 4.0, clip_order: ClipOrder::StandardizeThenClip }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    pub choropleth: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    pub output_dir: PathBuf,
    pub synth: SynthConfig,
    pub features: FeatureConfig,
    pub graph: GraphConfig,
    pub pdfm: PdfmConfig,
    pub bench: BenchConfig,
    pub forecast: ForecastConfig,
    pub report: ReportConfig,
}

fn desk_forecast() -> ForecastConfig {
    ForecastConfig {
        tasks: vec![
            ForecastTaskConfig {
                task: "unemployment".into(),
                split: ThreePartSplit { part1: 0..120, part2: 120..121, part3: 126..127 },
                base: None,
                arima: ForecasterSpec::arima(1, 0, 1),
            },
            ForecastTaskConfig {
                task: "poverty".into(),
                split: ThreePartSplit { part1: 0..27, part2: 27..28, part3: 29..30 },
                base: None,
                arima: ForecasterSpec::arima(1, 0, 1),
            },
        ],
        ..ForecastConfig::default()
    }
}

impl RunConfig {
    /// 500 postal codes, 50 counties and a 48-wide embedding.
    pub fn desk() -> Self {
        Self {
            preset: "desk".into(),
            output_dir: PathBuf::from("out"),
            synth: desk_synth_config(),
            features: FeatureConfig::default(),
            graph: GraphConfig::default(),
            pdfm: PdfmConfig::desk(),
            bench: BenchConfig::default(),
            forecast: desk_forecast(),
            report: ReportConfig { choropleth: true },
        }
    }

    /// Country-scale world and the full 330-wide embedding.
    pub fn paper() -> Self {
        Self {
            preset: "paper".into(),
            synth: SynthConfig {
                n_states: 50,
                n_counties: 3000,
                n_postal: 30000,
                state_grid_columns: 10,
                ..desk_synth_config()
            },
            pdfm: PdfmConfig::paper(),
            report: ReportConfig { choropleth: false },
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::config("preset", format!("unknown preset `{other}`; expected one of {PRESETS:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.graph.validate()?;
        self.pdfm.validate()?;
        self.bench.validate()?;
        self.forecast.adapter.validate()?;
        if !(self.features.clip > 0.0) {
            return Err(Error::config("features.clip", "must be > 0"));
        }
        for (i, t) in self.forecast.tasks.iter().enumerate() {
            if !self.synth.series.iter().any(|s| s.task == t.task) {
                return Err(Error::config(format!("forecast.tasks[{i}].task"), format!("no series named `{}`", t.task)));
            }
        }
        Ok(())
    }

    /// Parses a document, merges it over its preset and validates the result.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::config("<document>", e.message()))?;
        Self::from_table(doc, &[])
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with(path, &[])
    }

    /// Like [`RunConfig::load`], then applies `key.path=value` overrides.
    pub fn load_with(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = io::read_string(path)?;
        let doc: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            Error::config(path.display().to_string(), e.to_string().replace('\n', " "))
        })?;
        Self::from_table(doc, overrides)
    }

    /// A preset with overrides only.
    pub fn from_preset(name: &str, overrides: &[String]) -> Result<Self> {
        let mut doc = toml::Table::new();
        doc.insert("preset".into(), Value::String(name.into()));
        Self::from_table(doc, overrides)
    }

    fn from_table(mut doc: toml::Table, overrides: &[String]) -> Result<Self> {
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let name = match doc.get("preset") {
            None => "desk".to_string(),
            Some(Value::String(s)) => s.clone(),
            Some(_) => return Err(Error::config("preset", "must be a string")),
        };
        let base = Value::try_from(Self::preset(&name)?).map_err(|e| Error::config("preset", e.to_string()))?;
        let Value::Table(mut merged) = base else { unreachable!("config serializes to a table") };
        check_known(&doc, &merged, "")?;
        merge(&mut merged, doc);
        let cfg: RunConfig =
            Value::Table(merged).try_into().map_err(|e: toml::de::Error| Error::config("<document>", e.message()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Overrides the master seed: every stage seed is derived from it.
    pub fn apply_seed(&mut self, seed: u64) {
        // Keep seeds within 53 bits so the document stays TOML-representable.
        let d = |key: &str| rng::derive(seed, key) >> 11;
        self.synth.rng_seed = seed;
        self.pdfm.seed = d("pdfm");
        self.pdfm.sampler.seed = d("sampler");
        self.pdfm.export_seed = d("export");
        self.bench.seed = d("bench");
        self.forecast.seed = d("forecast");
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<document>", e.to_string()))
    }
}

fn check_known(doc: &toml::Table, base: &toml::Table, prefix: &str) -> Result<()> {
    for (k, v) in doc {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match base.get(k) {
            None => return Err(Error::config(path, "unknown key")),
            Some(Value::Table(b)) => {
                if let Value::Table(d) = v {
                    check_known(d, b, &path)?;
                }
            }
            Some(_) => {}
        }
    }
    Ok(())
}

fn merge(base: &mut toml::Table, doc: toml::Table) {
    for (k, v) in doc {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(d)) => merge(b, d),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// `a.b.c=value`, where `value` is any TOML value (bare words are strings).
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must look like key.path=value"))?;
    let key = key.trim();
    let parsed: toml::Table = format!("v = {}", raw.trim()).parse().unwrap_or_default();
    let value = parsed.get("v").cloned().unwrap_or_else(|| Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "empty key segment"));
    }
    let mut at = doc;
    for p in &parts[..parts.len() - 1] {
        let entry = at.entry(p.to_string()).or_insert_with(|| Value::Table(toml::Table::new()));
        at = match entry {
            Value::Table(t) => t,
            _ => return Err(Error::config(key, format!("`{p}` is not a table"))),
        };
    }
    at.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
