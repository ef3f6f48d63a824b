use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adapter::{train_adapter, AdapterSpec};
use super::base::{base_forecast, ForecasterSpec};
use super::series::SeriesPanel;
use crate::bench::{paired_t_test, TTest, MAPE_MIN_ABS};
use crate::error::{Error, Result};
use crate::pdfm::EmbeddingTable;
use crate::{io, par, rng};

pub const BASE_T: &str = "base_t";
pub const ARIMA_T: &str = "arima_t";
pub const BASE_T_MINUS_1: &str = "base_t_minus_1";
pub const BASE_T_MINUS_1_ADAPTER: &str = "base_t_minus_1_adapter";
pub const METHODS: [&str; 4] = [BASE_T, ARIMA_T, BASE_T_MINUS_1, BASE_T_MINUS_1_ADAPTER];

/// Context (part 1), adapter target steps (part 2) and test steps (part 3).
/// Part 2 starts where part 1 ends; part 3 may start after a gap.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThreePartSplit {
    pub part1: Range<usize>,
    pub part2: Range<usize>,
    pub part3: Range<usize>,
}

impl ThreePartSplit {
    pub fn validate(&self, n_steps: usize) -> Result<()> {
        let bad = |r: &str| Err(Error::config("forecast.split", r.to_string()));
        if self.part1.start != 0 || self.part1.is_empty() {
            return bad("part1 must start at 0 and be nonempty");
        }
        if self.part2.start != self.part1.end || self.part2.is_empty() {
            return bad("part2 must follow part1 directly and be nonempty");
        }
        if self.part3.start < self.part2.end || self.part3.is_empty() {
            return bad("part3 must follow part2 and be nonempty");
        }
        if self.part3.end > n_steps {
            return bad(&format!("part3 ends at {} but the panel has {n_steps} steps", self.part3.end));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastTaskConfig {
    pub task: String,
    pub split: ThreePartSplit,
    /// Defaults to [`ForecasterSpec::default_base`] for the panel frequency.
    #[serde(default)]
    pub base: Option<ForecasterSpec>,
    #[serde(default = "default_arima")]
    pub arima: ForecasterSpec,
}

fn default_arima() -> ForecasterSpec {
    ForecasterSpec::arima(1, 0, 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForecastConfig {
    pub tasks: Vec<ForecastTaskConfig>,
    pub adapter: AdapterSpec,
    pub seed: u64,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self { tasks: Vec::new(), adapter: AdapterSpec::default(), seed: 17 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub method: String,
    pub against: String,
    pub test: TTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastTaskReport {
    pub split: ThreePartSplit,
    pub base: ForecasterSpec,
    pub arima: ForecasterSpec,
    pub n_regions: usize,
    /// Region id → reason, for regions removed from every method.
    pub dropped: BTreeMap<String, String>,
    pub mape: BTreeMap<String, f64>,
    pub comparisons: Vec<Comparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub tasks: BTreeMap<String, ForecastTaskReport>,
    pub embedding_fingerprint: String,
}

/// Per-region forecasts and absolute percentage errors, index-aligned with
/// `regions` for every method.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskForecasts {
    pub regions: Vec<String>,
    pub steps: Range<usize>,
    pub forecasts: BTreeMap<String, Vec<Vec<f64>>>,
    pub ape: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct ForecastRun {
    pub report: ForecastReport,
    pub tasks: BTreeMap<String, TaskForecasts>,
}

struct RegionForecasts {
    base_t: Vec<f64>,
    arima_t: Vec<f64>,
    /// From part-1 context, covering part 2 then part 3.
    base_t1_part2: Vec<f64>,
    base_t1_part3: Vec<f64>,
}

fn region_forecasts(series: &[f64], split: &ThreePartSplit, base: &ForecasterSpec, arima: &ForecasterSpec) -> Result<RegionForecasts> {
    if split.part3.end > series.len() || series[..split.part3.end].iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("series has missing values inside the split".into()));
    }
    if let Some(v) = series[split.part2.start..split.part3.end].iter().find(|v| v.abs() < MAPE_MIN_ABS) {
        return Err(Error::Data(format!("actual {v} is too close to zero for percentage error")));
    }
    let p3 = split.part3.len();
    let gap_t = split.part3.start - split.part2.end;
    let ctx_t = &series[..split.part2.end];
    let base_t = base_forecast(ctx_t, base, gap_t + p3)?[gap_t..].to_vec();
    let arima_t = base_forecast(ctx_t, arima, gap_t + p3)?[gap_t..].to_vec();
    let ctx_t1 = &series[..split.part1.end];
    let h = split.part3.end - split.part1.end;
    let f = base_forecast(ctx_t1, base, h)?;
    let base_t1_part2 = f[..split.part2.len()].to_vec();
    let base_t1_part3 = f[split.part3.start - split.part1.end..].to_vec();
    Ok(RegionForecasts { base_t, arima_t, base_t1_part2, base_t1_part3 })
}

fn mean_ape(actual: &[f64], pred: &[f64]) -> f64 {
    actual.iter().zip(pred).map(|(a, p)| ((a - p) / a).abs()).sum::<f64>() / actual.len() as f64
}

/// Scores base(t), supervised ARIMA(t), base(t−1) and base(t−1) + adapter
/// by MAPE over regions for every configured task.
pub fn run_forecast_benchmark(
    panels: &BTreeMap<String, SeriesPanel>,
    embeddings: &EmbeddingTable,
    cfg: &ForecastConfig,
) -> Result<ForecastRun> {
    cfg.adapter.validate()?;
    let m = cfg.tasks.len();
    let mut report = ForecastReport { tasks: BTreeMap::new(), embedding_fingerprint: embeddings.fingerprint.clone() };
    let mut runs = BTreeMap::new();
    for tc in &cfg.tasks {
        let panel = panels.get(&tc.task).ok_or_else(|| Error::Lookup { kind: "series task", id: tc.task.clone() })?;
        tc.split.validate(panel.n_steps())?;
        let base = tc.base.clone().unwrap_or_else(|| ForecasterSpec::default_base(panel.frequency));
        base.validate()?;
        tc.arima.validate()?;
        let split = &tc.split;

        let results: Vec<Result<RegionForecasts>> =
            par::map_range(panel.ids.len(), |i| region_forecasts(panel.series(i), split, &base, &tc.arima));
        let mut dropped = BTreeMap::new();
        let mut kept: Vec<(usize, RegionForecasts)> = Vec::new();
        for (i, r) in results.into_iter().enumerate() {
            match r {
                Ok(f) => kept.push((i, f)),
                Err(e) => {
                    dropped.insert(panel.ids[i].clone(), e.to_string());
                }
            }
        }
        if kept.len() < 2 {
            return Err(Error::Forecast(format!("task `{}` has {} usable regions", tc.task, kept.len())));
        }
        let regions: Vec<String> = kept.iter().map(|(i, _)| panel.ids[*i].clone()).collect();
        let emb = embeddings.rows_for(&regions)?;

        let p2 = split.part2.len();
        let mut x_base = Vec::with_capacity(kept.len() * p2);
        let mut y = Vec::with_capacity(kept.len() * p2);
        let mut emb_rows = Vec::with_capacity(kept.len() * p2);
        for (k, (i, f)) in kept.iter().enumerate() {
            let s = panel.series(*i);
            for (j, t) in split.part2.clone().enumerate() {
                x_base.push(f.base_t1_part2[j]);
                y.push(s[t]);
                emb_rows.push(k);
            }
        }
        let seed = rng::derive(cfg.seed, &format!("adapter/{}", tc.task));
        let adapter = train_adapter(&x_base, &emb.select(ndarray::Axis(0), &emb_rows), &y, &cfg.adapter, seed)?;

        let p3 = split.part3.len();
        let mut test_base = Vec::with_capacity(kept.len() * p3);
        let mut test_rows = Vec::with_capacity(kept.len() * p3);
        for (k, (_, f)) in kept.iter().enumerate() {
            test_base.extend_from_slice(&f.base_t1_part3);
            test_rows.extend(std::iter::repeat_n(k, p3));
        }
        let corrected = adapter.predict(&test_base, &emb.select(ndarray::Axis(0), &test_rows))?;

        let mut forecasts: BTreeMap<String, Vec<Vec<f64>>> = METHODS.iter().map(|m| (m.to_string(), Vec::new())).collect();
        for (k, (_, f)) in kept.iter().enumerate() {
            forecasts.get_mut(BASE_T).expect("method").push(f.base_t.clone());
            forecasts.get_mut(ARIMA_T).expect("method").push(f.arima_t.clone());
            forecasts.get_mut(BASE_T_MINUS_1).expect("method").push(f.base_t1_part3.clone());
            forecasts.get_mut(BASE_T_MINUS_1_ADAPTER).expect("method").push(corrected[k * p3..(k + 1) * p3].to_vec());
        }
        let ape: BTreeMap<String, Vec<f64>> = forecasts
            .iter()
            .map(|(name, rows)| {
                let v = kept.iter().zip(rows).map(|((i, _), p)| mean_ape(&panel.series(*i)[split.part3.clone()], p)).collect();
                (name.clone(), v)
            })
            .collect();
        let mape = ape.iter().map(|(k, v)| (k.clone(), v.iter().sum::<f64>() / v.len() as f64)).collect();
        let comparisons = [(BASE_T_MINUS_1_ADAPTER, ARIMA_T), (BASE_T_MINUS_1_ADAPTER, BASE_T_MINUS_1)]
            .iter()
            .map(|(a, b)| {
                Ok(Comparison {
                    method: a.to_string(),
                    against: b.to_string(),
                    test: paired_t_test(&ape[*a], &ape[*b], m)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        report.tasks.insert(
            tc.task.clone(),
            ForecastTaskReport {
                split: split.clone(),
                base,
                arima: tc.arima.clone(),
                n_regions: regions.len(),
                dropped,
                mape,
                comparisons,
            },
        );
        runs.insert(tc.task.clone(), TaskForecasts { regions, steps: split.part3.clone(), forecasts, ape });
    }
    Ok(ForecastRun { report, tasks: runs })
}

/// `region_id,task,method,t<k>...` with one row per region and method.
pub fn write_forecasts_csv(path: &Path, run: &ForecastRun) -> Result<()> {
    let mut rows = Vec::new();
    let mut width = 0;
    for (task, tf) in &run.tasks {
        width = width.max(tf.steps.len());
        for (method, per_region) in &tf.forecasts {
            for (id, f) in tf.regions.iter().zip(per_region) {
                let mut row = vec![id.clone(), task.clone(), method.clone()];
                row.extend(f.iter().map(|v| v.to_string()));
                rows.push(row);
            }
        }
    }
    let steps: Vec<String> = (0..width).map(|k| format!("h{k}")).collect();
    let mut header = vec!["region_id", "task", "method"];
    header.extend(steps.iter().map(String::as_str));
    for r in rows.iter_mut() {
        r.resize(header.len(), String::new());
    }
    io::write_csv_table(path, &header, &rows)
}
