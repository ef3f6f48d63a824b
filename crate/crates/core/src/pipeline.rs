//! Stage runner over on-disk artifacts. Every stage writes a `stage.json`
//! record holding its fingerprint (derived from the configuration and the
//! upstream fingerprints) and the SHA-256 of each file it produced.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bench::{self, EvalReport, NamedTable, SplitKind};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::features::standardize;
use crate::forecast::{self, ForecastReport};
use crate::graph::{build_graph, export_graph, import_graph, Region};
use crate::nn::Checkpoint;
use crate::pdfm::{export_embeddings, train_pdfm, write_training_log, EmbeddingTable, PdfmModel};
use crate::sampling::SamplerConfig;
use crate::synthgeo::{generate_world, read_world, WorldBundle};
use crate::io;

pub const STAGE_RECORD: &str = "stage.json";
pub const OUTPUT_ENV: &str = "GEOFM_OUTPUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Synth,
    BuildGraph,
    Train,
    Embed,
    Eval,
    Forecast,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] =
        [Stage::Synth, Stage::BuildGraph, Stage::Train, Stage::Embed, Stage::Eval, Stage::Forecast, Stage::Report];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::BuildGraph => "build-graph",
            Stage::Train => "train",
            Stage::Embed => "embed",
            Stage::Eval => "eval",
            Stage::Forecast => "forecast",
            Stage::Report => "report",
        }
    }

    pub fn upstream(&self) -> &'static [Stage] {
        match self {
            Stage::Synth => &[],
            Stage::BuildGraph => &[Stage::Synth],
            Stage::Train => &[Stage::BuildGraph],
            Stage::Embed => &[Stage::Train],
            Stage::Eval | Stage::Forecast => &[Stage::Synth, Stage::Embed],
            Stage::Report => &[Stage::Eval, Stage::Forecast],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| Error::Lookup { kind: "stage", id: s.into() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub fingerprint: String,
    /// Upstream stage → hash of its file manifest at the time this stage ran.
    pub upstream: BTreeMap<Stage, String>,
    /// File name (relative to the stage directory) → SHA-256.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    Skipped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub stage: Stage,
    pub status: StageStatus,
    pub fingerprint: String,
    pub files: usize,
}

/// Final document: benchmark and forecast results plus stage fingerprints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub benchmark: EvalReport,
    pub forecast: ForecastReport,
    pub fingerprints: BTreeMap<Stage, String>,
}

pub struct Pipeline {
    cfg: RunConfig,
    root: PathBuf,
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(io::sha256_hex(&bytes))
}

fn hash_tree(dir: &Path, prefix: &str, out: &mut BTreeMap<String, String>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let name = e.file_name().to_string_lossy().to_string();
        let rel = if prefix.is_empty() { name.clone() } else { format!("{prefix}/{name}") };
        let path = e.path();
        if path.is_dir() {
            hash_tree(&path, &rel, out)?;
        } else if rel != STAGE_RECORD {
            out.insert(rel, hash_file(&path)?);
        }
    }
    Ok(())
}

impl StageRecord {
    pub fn content_hash(&self) -> String {
        io::fingerprint(&self.files)
    }
}

impl Pipeline {
    pub fn new(cfg: RunConfig, root: impl Into<PathBuf>) -> Self {
        Self { cfg, root: root.into() }
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.root.join(stage.as_str())
    }

    pub fn report_path(&self) -> PathBuf {
        self.stage_dir(Stage::Report).join(bench::REPORT_JSON)
    }

    /// Fingerprint a stage's artifacts must carry for the current config.
    pub fn expected_fingerprint(&self, stage: Stage) -> String {
        let up: Vec<String> = stage.upstream().iter().map(|s| self.expected_fingerprint(*s)).collect();
        let c = &self.cfg;
        let own = match stage {
            Stage::Synth => io::fingerprint(&c.synth),
            Stage::BuildGraph => io::fingerprint(&(&c.features, &c.graph)),
            Stage::Train => io::fingerprint(&c.pdfm),
            Stage::Embed => io::fingerprint(&(c.pdfm.export_seed, &c.pdfm.sampler)),
            Stage::Eval => io::fingerprint(&c.bench),
            Stage::Forecast => io::fingerprint(&c.forecast),
            Stage::Report => io::fingerprint(&c.report),
        };
        io::fingerprint(&(stage, own, up))
    }

    pub fn read_record(&self, stage: Stage) -> Result<Option<StageRecord>> {
        let path = self.stage_dir(stage).join(STAGE_RECORD);
        if !path.exists() {
            return Ok(None);
        }
        io::read_json(&path).map(Some)
    }

    /// Errors with [`Error::Stale`] unless `stage`'s artifacts are present,
    /// unmodified and built from the current configuration.
    pub fn check_current(&self, stage: Stage) -> Result<StageRecord> {
        let stale = |reason: String| Error::Stale { stage: stage.as_str().into(), reason };
        let rec = self.read_record(stage)?.ok_or_else(|| stale("artifacts missing".into()))?;
        if rec.fingerprint != self.expected_fingerprint(stage) {
            return Err(stale("built from a different configuration".into()));
        }
        for (name, hash) in &rec.files {
            let path = self.stage_dir(stage).join(name);
            if !path.exists() {
                return Err(stale(format!("`{name}` is missing")));
            }
            if &hash_file(&path)? != hash {
                return Err(stale(format!("`{name}` was modified")));
            }
        }
        for (up, hash) in &rec.upstream {
            let current = self.read_record(*up)?.map(|r| r.content_hash());
            if current.as_ref() != Some(hash) {
                return Err(stale(format!("upstream `{up}` changed since it ran")));
            }
        }
        Ok(rec)
    }

    /// Runs one stage after checking its inputs. With `resume`, a stage whose
    /// artifacts are already current is skipped.
    pub fn run_stage(&self, stage: Stage, resume: bool) -> Result<StageOutcome> {
        let fingerprint = self.expected_fingerprint(stage);
        if resume {
            if let Ok(rec) = self.check_current(stage) {
                return Ok(StageOutcome { stage, status: StageStatus::Skipped, fingerprint, files: rec.files.len() });
            }
        }
        let mut upstream = BTreeMap::new();
        for up in stage.upstream() {
            upstream.insert(*up, self.check_current(*up)?.content_hash());
        }
        let dir = self.stage_dir(stage);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        match stage {
            Stage::Synth => self.synth(&dir)?,
            Stage::BuildGraph => self.build_graph(&dir)?,
            Stage::Train => self.train(&dir)?,
            Stage::Embed => self.embed(&dir)?,
            Stage::Eval => self.eval(&dir)?,
            Stage::Forecast => self.forecast(&dir)?,
            Stage::Report => self.report(&dir)?,
        }
        let mut files = BTreeMap::new();
        hash_tree(&dir, "", &mut files)?;
        let rec = StageRecord { stage, fingerprint: fingerprint.clone(), upstream, files };
        io::write_json(&dir.join(STAGE_RECORD), &rec)?;
        Ok(StageOutcome { stage, status: StageStatus::Ran, fingerprint, files: rec.files.len() })
    }

    /// Every stage in order.
    pub fn run_all(&self, resume: bool, mut progress: impl FnMut(&StageOutcome)) -> Result<Vec<StageOutcome>> {
        let mut out = Vec::new();
        for stage in Stage::ALL {
            let o = self.run_stage(stage, resume)?;
            progress(&o);
            out.push(o);
        }
        Ok(out)
    }

    fn world(&self) -> Result<WorldBundle> {
        let series: Vec<_> = self.cfg.synth.series.iter().map(|s| (s.task.clone(), s.frequency)).collect();
        read_world(&self.stage_dir(Stage::Synth), &series)
    }

    fn embeddings(&self) -> Result<EmbeddingTable> {
        EmbeddingTable::load(&self.stage_dir(Stage::Embed))
    }

    fn synth(&self, dir: &Path) -> Result<()> {
        generate_world(&self.cfg.synth)?.write(dir)?;
        Ok(())
    }

    fn build_graph(&self, dir: &Path) -> Result<()> {
        let world = self.world()?;
        let f = &self.cfg.features;
        let blocks = world
            .blocks
            .values()
            .map(|b| standardize(b, f.clip, f.clip_order).map(|(s, _)| s))
            .collect::<Result<Vec<_>>>()?;
        let graph = build_graph(world.regions, blocks, &self.cfg.graph)?;
        export_graph(&graph, dir)
    }

    fn train(&self, dir: &Path) -> Result<()> {
        let graph = import_graph(&self.stage_dir(Stage::BuildGraph))?;
        let out = train_pdfm(&graph, &self.cfg.pdfm)?;
        out.model.to_checkpoint(&self.cfg.pdfm).save(&dir.join("checkpoint.json"))?;
        write_training_log(&dir.join("training_log.jsonl"), &out.history)
    }

    fn embed(&self, dir: &Path) -> Result<()> {
        let graph = import_graph(&self.stage_dir(Stage::BuildGraph))?;
        let ck = Checkpoint::load(&self.stage_dir(Stage::Train).join("checkpoint.json"))?;
        let (model, cfg) = PdfmModel::from_checkpoint(&ck)?;
        let sampler = SamplerConfig { seed: cfg.export_seed, ..cfg.sampler.clone() };
        export_embeddings(&model, &graph, &sampler)?.save(dir)
    }

    fn eval(&self, dir: &Path) -> Result<()> {
        let world = self.world()?;
        let emb = self.embeddings()?;
        let tables = [NamedTable { name: "pdfm", table: &emb }];
        let run = bench::run_benchmark(&world.regions, &world.labels, &tables, &self.cfg.bench)?;
        bench::write_reports(dir, &run)?;
        Ok(())
    }

    fn forecast(&self, dir: &Path) -> Result<()> {
        let world = self.world()?;
        let emb = self.embeddings()?;
        let run = forecast::run_forecast_benchmark(&world.series, &emb, &self.cfg.forecast)?;
        io::write_json(&dir.join("forecast_report.json"), &run.report)?;
        forecast::write_forecasts_csv(&dir.join("forecasts.csv"), &run)
    }

    fn report(&self, dir: &Path) -> Result<()> {
        let eval_dir = self.stage_dir(Stage::Eval);
        let benchmark: EvalReport = io::read_json(&eval_dir.join(bench::REPORT_JSON))?;
        let forecast: ForecastReport = io::read_json(&self.stage_dir(Stage::Forecast).join("forecast_report.json"))?;
        let fingerprints = Stage::ALL.iter().map(|s| (*s, self.expected_fingerprint(*s))).collect();
        let report = PipelineReport { benchmark, forecast, fingerprints };
        let mut text = serde_json::to_string_pretty(&report).map_err(|e| Error::Schema(e.to_string()))?;
        text.push('\n');
        io::write_string(&dir.join(bench::REPORT_JSON), &text)?;

        let mut rows = bench::report_rows(&report.benchmark);
        for (task, t) in &report.forecast.tasks {
            for (method, v) in &t.mape {
                rows.push(vec![task.clone(), method.clone(), "forecast".into(), "mape".into(), format!("{v}"), "ok".into()]);
            }
        }
        io::write_csv_table(&dir.join(bench::REPORT_CSV), &["task", "method", "split", "metric", "value", "status"], &rows)?;

        if self.cfg.report.choropleth {
            let preds = bench::read_predictions_csv(&eval_dir.join(bench::PREDICTIONS_CSV))?;
            let regions: Vec<Region> = self.world()?.regions;
            bench::write_choropleths(&dir.join("maps"), &preds, &regions, SplitKind::Interpolation)?;
        }
        Ok(())
    }
}

/// Output root: an explicit path, else `$GEOFM_OUTPUT`, else the config's
/// `output_dir`.
pub fn output_root(explicit: Option<&Path>, cfg: &RunConfig) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    match std::env::var_os(OUTPUT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => cfg.output_dir.clone(),
    }
}
