use std::collections::BTreeMap;
use std::sync::Mutex;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::metrics::{intra_county_pearson, paired_t_test, pearson_r, r_squared, IntraCounty, TTest};
use super::split::{
    candidates_from_regions, make_extrapolation_split, make_interpolation_split, make_superres_split,
    map_postal_to_county, SplitKind, SplitSpec,
};
use crate::baselines::{idw_fit, IdwConfig};
use crate::downstream::{fit_regressor, RegressorSpec};
use crate::error::{Error, Result};
use crate::graph::{LatLon, Region, RegionKind};
use crate::nn::Matrix;
use crate::pdfm::{EmbeddingTable, Partition};
use crate::synthgeo::LabelTable;
use crate::{io, par, rng};

pub const IDW_METHOD: &str = "idw";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Train,
    Validation,
    Test,
}

/// Label reads grouped by split, purpose and region level.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelRead {
    pub split: SplitKind,
    pub purpose: Purpose,
    pub level: RegionKind,
    pub reads: usize,
}

/// The only path through which the benchmark touches labels. Every read is
/// logged so callers can audit which levels fed which purpose.
pub struct LabelAccess<'a> {
    labels: &'a LabelTable,
    kinds: BTreeMap<&'a str, RegionKind>,
    log: Mutex<BTreeMap<(SplitKind, Purpose, RegionKind), usize>>,
}

impl<'a> LabelAccess<'a> {
    pub fn new(labels: &'a LabelTable, regions: &'a [Region]) -> Self {
        let kinds = regions.iter().map(|r| (r.id.as_str(), r.kind)).collect();
        Self { labels, kinds, log: Mutex::new(BTreeMap::new()) }
    }

    pub fn read(&self, task: &str, ids: &[String], split: SplitKind, purpose: Purpose) -> Result<Vec<f64>> {
        let table = self.labels.get(task).ok_or_else(|| Error::Lookup { kind: "task", id: task.into() })?;
        let mut out = Vec::with_capacity(ids.len());
        let mut counts: BTreeMap<RegionKind, usize> = BTreeMap::new();
        for id in ids {
            let kind = *self.kinds.get(id.as_str()).ok_or_else(|| Error::Lookup { kind: "region", id: id.clone() })?;
            let v = table
                .get(id)
                .ok_or_else(|| Error::Data(format!("task `{task}` has no {} label for `{id}`", kind.as_str())))?;
            *counts.entry(kind).or_default() += 1;
            out.push(*v);
        }
        let mut log = self.log.lock().expect("label log poisoned");
        for (kind, n) in counts {
            *log.entry((split, purpose, kind)).or_default() += n;
        }
        Ok(out)
    }

    pub fn reads(&self) -> Vec<LabelRead> {
        self.log
            .lock()
            .expect("label log poisoned")
            .iter()
            .map(|(&(split, purpose, level), &reads)| LabelRead { split, purpose, level, reads })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    /// Empty means every task in the label table.
    pub tasks: Vec<String>,
    pub splits: Vec<SplitKind>,
    pub regressors: Vec<RegressorSpec>,
    pub include_idw: bool,
    pub idw: IdwConfig,
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            tasks: Vec::new(),
            splits: SplitKind::ALL.to_vec(),
            regressors: vec![
                RegressorSpec::Ridge { lambda: 1.0 },
                RegressorSpec::default_for(crate::downstream::Family::Mlp),
                RegressorSpec::default_for(crate::downstream::Family::Gbdt),
            ],
            include_idw: true,
            idw: IdwConfig::default(),
            holdout_fraction: 0.2,
            seed: 11,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::config("bench.holdout_fraction", "must be in (0, 1)"));
        }
        if self.splits.is_empty() {
            return Err(Error::config("bench.splits", "must not be empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellOutcome {
    Ok {
        metrics: BTreeMap<String, f64>,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        intra_county: Option<IntraCounty>,
        n_train: usize,
        n_test: usize,
    },
    Failed {
        reason: String,
    },
}

impl CellOutcome {
    pub fn metric(&self, name: &str) -> Option<f64> {
        match self {
            CellOutcome::Ok { metrics, .. } => metrics.get(name).copied(),
            CellOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub task: String,
    pub split: SplitKind,
    pub method: String,
    pub baseline: String,
    pub test: TTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub manifest_hash: String,
    pub train_level: RegionKind,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    pub holdout_groups: Vec<String>,
}

/// Nested task → method → split results plus audit data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cells: BTreeMap<String, BTreeMap<String, BTreeMap<SplitKind, CellOutcome>>>,
    pub significance: Vec<Significance>,
    pub splits: BTreeMap<SplitKind, SplitSummary>,
    pub label_reads: Vec<LabelRead>,
    pub fingerprints: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn cell(&self, task: &str, method: &str, split: SplitKind) -> Option<&CellOutcome> {
        self.cells.get(task)?.get(method)?.get(&split)
    }
}

/// Test-set predictions of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellPredictions {
    pub task: String,
    pub method: String,
    pub split: SplitKind,
    pub ids: Vec<String>,
    pub actual: Vec<f64>,
    pub predicted: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BenchRun {
    pub report: EvalReport,
    pub splits: Vec<SplitSpec>,
    pub predictions: Vec<CellPredictions>,
}

/// Named feature table; methods are reported as `<name>/<family>`.
#[derive(Debug, Clone, Copy)]
pub struct NamedTable<'a> {
    pub name: &'a str,
    pub table: &'a EmbeddingTable,
}

#[derive(Debug, Clone)]
enum Method<'a> {
    Idw,
    Table { name: String, table: &'a EmbeddingTable, spec: &'a RegressorSpec },
}

impl Method<'_> {
    fn name(&self) -> String {
        match self {
            Method::Idw => IDW_METHOD.to_string(),
            Method::Table { name, spec, .. } => format!("{name}/{}", spec.family().as_str()),
        }
    }
}

/// Builds the three splits from region records.
pub fn build_splits(regions: &[Region], kinds: &[SplitKind], frac: f64, seed: u64) -> Result<Vec<SplitSpec>> {
    let postal_ids: Vec<String> =
        regions.iter().filter(|r| r.kind == RegionKind::Postal).map(|r| r.id.clone()).collect();
    let to_county = map_postal_to_county(&postal_ids, &candidates_from_regions(regions))?;
    let to_state: BTreeMap<String, String> = regions
        .iter()
        .filter(|r| r.kind == RegionKind::Postal)
        .map(|r| (r.id.clone(), r.state.clone()))
        .collect();
    let interp = make_interpolation_split(&to_county, frac, seed)?;
    let mut out = Vec::new();
    for kind in kinds {
        out.push(match kind {
            SplitKind::Interpolation => interp.clone(),
            SplitKind::Extrapolation => make_extrapolation_split(&to_state, frac, seed)?,
            SplitKind::Superres => make_superres_split(&interp, &to_county)?,
        });
    }
    Ok(out)
}

fn standardize_with_train(train: &Matrix, others: &[&Matrix]) -> (Matrix, Vec<Matrix>) {
    let n = train.nrows().max(1) as f64;
    let mean = train.sum_axis(ndarray::Axis(0)) / n;
    let mut std = train.map_axis(ndarray::Axis(0), |c| {
        let m = c.mean().unwrap_or(0.0);
        (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt()
    });
    std.mapv_inplace(|s| s.max(1e-8));
    let apply = |x: &Matrix| (x - &mean) / &std;
    (apply(train), others.iter().map(|x| apply(x)).collect())
}

struct Evaluated {
    outcome: CellOutcome,
    predictions: Option<CellPredictions>,
}

struct CellJob<'a> {
    task: &'a str,
    split: &'a SplitSpec,
    method: Method<'a>,
}

fn coords_for(coords: &BTreeMap<&str, LatLon>, ids: &[String]) -> Result<Vec<LatLon>> {
    ids.iter()
        .map(|id| coords.get(id.as_str()).copied().ok_or_else(|| Error::Lookup { kind: "region", id: id.clone() }))
        .collect()
}

fn run_cell(
    job: &CellJob<'_>,
    access: &LabelAccess<'_>,
    coords: &BTreeMap<&str, LatLon>,
    counties: &BTreeMap<String, String>,
    cfg: &BenchConfig,
) -> Result<(CellOutcome, CellPredictions)> {
    let split = job.split;
    let y_train = access.read(job.task, &split.train, split.kind, Purpose::Train)?;
    let y_test = access.read(job.task, &split.test, split.kind, Purpose::Test)?;
    let (train_pred, test_pred) = match &job.method {
        Method::Idw => {
            let model = idw_fit(&coords_for(coords, &split.train)?, &y_train, &cfg.idw)?;
            (model.predict(&coords_for(coords, &split.train)?), model.predict(&coords_for(coords, &split.test)?))
        }
        Method::Table { name, table, spec } => {
            let x_train = table.rows_for(&split.train)?;
            let x_test = table.rows_for(&split.test)?;
            let x_val = table.rows_for(&split.validation)?;
            let (x_train, rest) = standardize_with_train(&x_train, &[&x_test, &x_val]);
            let needs_validation = matches!(spec, RegressorSpec::Gbdt(g) if g.patience.is_some());
            let y_val = if needs_validation {
                access.read(job.task, &split.validation, split.kind, Purpose::Validation)?
            } else {
                Vec::new()
            };
            let validation = needs_validation.then_some((&rest[1], y_val.as_slice()));
            let seed = rng::derive(cfg.seed, &format!("{}/{}/{}", job.task, name, split.kind));
            let model = fit_regressor(spec, &x_train, &y_train, validation, seed)?;
            (model.predict(&x_train)?, model.predict(&rest[0])?)
        }
    };
    let mut metrics = BTreeMap::new();
    metrics.insert("r2".to_string(), r_squared(&y_test, &test_pred)?);
    metrics.insert("pearson".to_string(), pearson_r(&y_test, &test_pred)?);
    if let Ok(r2) = r_squared(&y_train, &train_pred) {
        metrics.insert("train_r2".to_string(), r2);
    }
    let intra_county = if split.kind == SplitKind::Superres {
        let groups = split
            .test
            .iter()
            .map(|p| counties.get(p).cloned().ok_or_else(|| Error::Data(format!("postal `{p}` has no county"))))
            .collect::<Result<Vec<_>>>()?;
        let ic = intra_county_pearson(&y_test, &test_pred, &groups)?;
        metrics.insert("intra_county_pearson".to_string(), ic.mean);
        Some(ic)
    } else {
        None
    };
    let outcome = CellOutcome::Ok { metrics, intra_county, n_train: split.train.len(), n_test: split.test.len() };
    let predictions = CellPredictions {
        task: job.task.to_string(),
        method: job.method.name(),
        split: split.kind,
        ids: split.test.clone(),
        actual: y_test,
        predicted: test_pred,
    };
    Ok((outcome, predictions))
}

/// Fits and scores every (task, method, split) cell. Cell failures are
/// recorded in the report and the run continues.
pub fn run_benchmark(
    regions: &[Region],
    labels: &LabelTable,
    tables: &[NamedTable<'_>],
    cfg: &BenchConfig,
) -> Result<BenchRun> {
    cfg.validate()?;
    let tasks: Vec<String> = if cfg.tasks.is_empty() { labels.keys().cloned().collect() } else { cfg.tasks.clone() };
    for t in &tasks {
        if !labels.contains_key(t) {
            return Err(Error::Lookup { kind: "task", id: t.clone() });
        }
    }
    let splits = build_splits(regions, &cfg.splits, cfg.holdout_fraction, cfg.seed)?;
    let mut fingerprints = BTreeMap::new();
    for t in tables {
        let needed: Vec<String> = regions.iter().map(|r| r.id.clone()).collect();
        t.table.rows_for(&needed)?;
        fingerprints.insert(format!("table/{}", t.name), t.table.fingerprint.clone());
    }
    fingerprints.insert("bench_config".into(), io::fingerprint(cfg));
    fingerprints.insert("labels".into(), io::fingerprint(labels));

    let mut methods = Vec::new();
    if cfg.include_idw {
        methods.push(Method::Idw);
    }
    for t in tables {
        for spec in &cfg.regressors {
            methods.push(Method::Table { name: t.name.to_string(), table: t.table, spec });
        }
    }
    let mut jobs = Vec::new();
    for task in &tasks {
        for method in &methods {
            for split in &splits {
                jobs.push(CellJob { task, split, method: method.clone() });
            }
        }
    }

    let access = LabelAccess::new(labels, regions);
    let coords: BTreeMap<&str, LatLon> = regions.iter().map(|r| (r.id.as_str(), r.centroid)).collect();
    let counties: BTreeMap<String, String> =
        regions.iter().filter_map(|r| r.county.as_ref().map(|c| (r.id.clone(), c.clone()))).collect();
    let results: Vec<Evaluated> = par::map_slice(&jobs, |job| match run_cell(job, &access, &coords, &counties, cfg) {
        Ok((outcome, preds)) => Evaluated { outcome, predictions: Some(preds) },
        Err(e) => {
            log::warn!("cell {}/{}/{} failed: {e}", job.task, job.method.name(), job.split.kind);
            Evaluated { outcome: CellOutcome::Failed { reason: e.to_string() }, predictions: None }
        }
    });

    let mut cells: BTreeMap<String, BTreeMap<String, BTreeMap<SplitKind, CellOutcome>>> = BTreeMap::new();
    let mut predictions = Vec::new();
    for (job, res) in jobs.iter().zip(results) {
        cells
            .entry(job.task.to_string())
            .or_default()
            .entry(job.method.name())
            .or_default()
            .insert(job.split.kind, res.outcome);
        predictions.extend(res.predictions);
    }
    let planned = methods.iter().filter(|m| !matches!(m, Method::Idw)).count();
    let significance = significance_tests(&predictions, cfg.include_idw, planned)?;
    let split_summaries = splits
        .iter()
        .map(|s| {
            (
                s.kind,
                SplitSummary {
                    manifest_hash: s.manifest_hash.clone(),
                    train_level: s.train_level,
                    n_train: s.train.len(),
                    n_validation: s.validation.len(),
                    n_test: s.test.len(),
                    holdout_groups: s.holdout_groups.clone(),
                },
            )
        })
        .collect();
    let report =
        EvalReport { cells, significance, splits: split_summaries, label_reads: access.reads(), fingerprints };
    Ok(BenchRun { report, splits, predictions })
}

/// Paired t-tests on absolute test errors of each method against IDW, with a
/// Bonferroni correction over the planned comparisons per (task, split),
/// failed cells included.
fn significance_tests(predictions: &[CellPredictions], have_idw: bool, planned: usize) -> Result<Vec<Significance>> {
    if !have_idw {
        return Ok(Vec::new());
    }
    let abs_err = |p: &CellPredictions| -> Vec<f64> {
        p.actual.iter().zip(&p.predicted).map(|(a, b)| (a - b).abs()).collect()
    };
    let mut out = Vec::new();
    let mut keys: Vec<(&str, SplitKind)> = predictions.iter().map(|p| (p.task.as_str(), p.split)).collect();
    keys.sort();
    keys.dedup();
    for (task, split) in keys {
        let group: Vec<&CellPredictions> = predictions.iter().filter(|p| p.task == task && p.split == split).collect();
        let Some(base) = group.iter().find(|p| p.method == IDW_METHOD) else { continue };
        let others: Vec<&&CellPredictions> = group.iter().filter(|p| p.method != IDW_METHOD).collect();
        let base_err = abs_err(base);
        for p in &others {
            let test = paired_t_test(&abs_err(p), &base_err, planned)?;
            out.push(Significance {
                task: task.to_string(),
                split,
                method: p.method.clone(),
                baseline: IDW_METHOD.to_string(),
                test,
            });
        }
    }
    Ok(out)
}

/// Raw latitude/longitude as a two-column table, usable as a non-embedding
/// feature source.
pub fn coordinate_table(regions: &[Region]) -> Result<EmbeddingTable> {
    let values = Array2::from_shape_fn((regions.len(), 2), |(i, j)| {
        if j == 0 {
            regions[i].centroid.lat
        } else {
            regions[i].centroid.lon
        }
    });
    let ids: Vec<String> = regions.iter().map(|r| r.id.clone()).collect();
    let fp = io::fingerprint(&(&ids, values.as_slice()));
    EmbeddingTable::new(ids, values, fp, vec![Partition::new("coordinates", &[], 0..2)])
}
