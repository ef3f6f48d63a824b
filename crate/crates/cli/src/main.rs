//! `geofm`: runs pipeline stages from a configuration document.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration error, 3 I/O
//! error, 4 stale or missing upstream artifact.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use geofm::config::RunConfig;
use geofm::pipeline::{output_root, Pipeline, Stage, StageOutcome, StageStatus};
use geofm::Error;

#[derive(Parser)]
#[command(name = "geofm", version, about = "Region-graph embedding pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic world.
    Synth(Common),
    /// Standardize features and build the region graph.
    BuildGraph(Common),
    /// Train the embedding model.
    Train(Common),
    /// Export one embedding per region.
    Embed(Common),
    /// Run the interpolation, extrapolation and super-resolution benchmark.
    Eval(Common),
    /// Run the forecasting benchmark.
    Forecast(Common),
    /// Assemble report.json, report.csv and maps.
    Report(Common),
    /// Run every stage in order.
    Run(Common),
    /// Print the resolved configuration as TOML.
    Config(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// Configuration document (TOML). Defaults to the selected preset.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Preset used when no document is given.
    #[arg(long, default_value = "desk")]
    preset: String,
    /// Override a key, e.g. `--set pdfm.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Master seed; every stage seed is derived from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (results do not depend on it).
    #[arg(long)]
    workers: Option<usize>,
    /// Skip stages whose artifacts are already current.
    #[arg(long)]
    resume: bool,
    /// Output root (else $GEOFM_OUTPUT, else `output_dir` from the config).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        Error::Io { .. } => 3,
        Error::Stale { .. } => 4,
        _ => 1,
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Config { .. } => "config",
        Error::Io { .. } => "io",
        Error::Stale { .. } => "stale",
        _ => "error",
    }
}

fn load(c: &Common) -> geofm::Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(path) => RunConfig::load_with(path, &c.overrides)?,
        None => RunConfig::from_preset(&c.preset, &c.overrides)?,
    };
    if let Some(seed) = c.seed {
        cfg.apply_seed(seed);
    }
    Ok(cfg)
}

fn report(o: &StageOutcome) {
    let status = match o.status {
        StageStatus::Ran => "ran",
        StageStatus::Skipped => "skipped (current)",
    };
    println!("{}: {status}, {} files, fingerprint {}", o.stage, o.files, o.fingerprint);
}

fn run(cli: Cli) -> geofm::Result<()> {
    let (common, stage) = match &cli.command {
        Command::Synth(c) => (c, Some(Stage::Synth)),
        Command::BuildGraph(c) => (c, Some(Stage::BuildGraph)),
        Command::Train(c) => (c, Some(Stage::Train)),
        Command::Embed(c) => (c, Some(Stage::Embed)),
        Command::Eval(c) => (c, Some(Stage::Eval)),
        Command::Forecast(c) => (c, Some(Stage::Forecast)),
        Command::Report(c) => (c, Some(Stage::Report)),
        Command::Run(c) | Command::Config(c) => (c, None),
    };
    let cfg = load(common)?;
    if let Command::Config(_) = cli.command {
        print!("{}", cfg.to_toml_string()?);
        return Ok(());
    }
    if common.workers == Some(0) {
        return Err(Error::config("--workers", "must be >= 1"));
    }
    let root = output_root(common.output.as_deref(), &cfg);
    let pipeline = Pipeline::new(cfg, root);
    let work = || -> geofm::Result<()> {
        match stage {
            Some(s) => report(&pipeline.run_stage(s, common.resume)?),
            None => {
                pipeline.run_all(common.resume, report)?;
            }
        }
        Ok(())
    };
    match common.workers {
        Some(n) => geofm::par::with_workers(n, work),
        None => work(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": kind(&e), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::from(exit_code(&e))
        }
    }
}
