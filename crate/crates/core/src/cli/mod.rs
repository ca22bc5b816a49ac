//! Experiment harness: config loading, named suites, report emission and exit codes.

mod config;
mod report;
mod suites;

pub use config::{
    ArchBlock, ArchChoice, ArchExtBlock, ConvBlock, DatasetBlock, EtaGrid, ExperimentConfig, InitBlock, LandscapeBlock,
    NtkBlock, ProbeBlock, ResidualBlock, StabilityBlock, Suite, TrainingBlock,
};
pub use report::{emit_plots_data, sha256_hex, CheckRow, ExperimentReport, GridArtifact, NamedTrace, SuiteReport};
pub use suites::{dataset_for, run_one, GRADIENT_TOL};

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::error::{Error, Result};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

pub const ENV_THREADS: &str = "OPL_THREADS";
pub const ENV_OUT: &str = "OPL_OUT";
pub const DEFAULT_OUT: &str = "opl-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Run(Suite),
    Validate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub command: Command,
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
}

/// Hash of the config with the output directory cleared, so the run location
/// does not change the report.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let mut c = cfg.clone();
    c.out = None;
    Ok(sha256_hex(serde_json::to_string(&c)?.as_bytes()))
}

/// Runs `suite` (every suite for `all`) and assembles the report. No files are written.
pub fn run_suite(cfg: &ExperimentConfig, suite: Suite) -> Result<ExperimentReport> {
    let warnings = cfg.validate()?;
    let list: Vec<Suite> = if suite == Suite::All { Suite::ALL.to_vec() } else { vec![suite] };
    let reports = list.into_iter().map(|s| run_one(cfg, s)).collect::<Result<Vec<_>>>()?;
    ExperimentReport::new(suite, config_hash(cfg)?, cfg.seed, warnings, reports)
}

#[derive(Serialize)]
struct Metadata {
    suite: String,
    started_unix: u64,
    finished_unix: u64,
    elapsed_secs: f64,
    threads: usize,
    version: &'static str,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `config.json`, `report.json` and the CSV artifacts into `dir`; returns the artifact list.
pub fn write_run(cfg: &ExperimentConfig, report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("config.json"), &cfg.to_json()?)?;
    write_file(&dir.join("report.json"), &report.to_json()?)?;
    emit_plots_data(report, dir)
}

fn resolve_out(inv: &Invocation, cfg: &ExperimentConfig) -> PathBuf {
    inv.out
        .clone()
        .or_else(|| cfg.out.clone())
        .or_else(|| std::env::var_os(ENV_OUT).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn resolve_threads(inv: &Invocation) -> Result<Option<usize>> {
    if let Some(t) = inv.threads {
        return if t == 0 { Err(Error::Config("--threads must be at least 1".into())) } else { Ok(Some(t)) };
    }
    match std::env::var(ENV_THREADS) {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(t) if t > 0 => Ok(Some(t)),
            _ => Err(Error::Config(format!("{ENV_THREADS} must be a positive integer, got '{s}'"))),
        },
        Err(_) => Ok(None),
    }
}

fn exit_for(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

/// Loads the config with command-line overrides applied.
pub fn load_config(inv: &Invocation) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&inv.config)?;
    if let Some(s) = inv.seed {
        cfg.seed = s;
    }
    if let Command::Run(s) = inv.command {
        cfg.suite = Some(s);
    }
    Ok(cfg)
}

/// Executes an invocation, printing one line per check; returns the process exit code.
pub fn execute(inv: &Invocation) -> i32 {
    let cfg = match load_config(inv) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_CONFIG;
        }
    };
    let warnings = match cfg.validate() {
        Ok(w) => w,
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_CONFIG;
        }
    };
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let suite = match inv.command {
        Command::Validate => {
            println!("config ok: {}", inv.config.display());
            return EXIT_PASS;
        }
        Command::Run(s) => s,
    };
    let threads = match resolve_threads(inv) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_CONFIG;
        }
    };
    let mut cfg = cfg;
    let dir = resolve_out(inv, &cfg);
    cfg.out = Some(dir.clone());

    let started = unix_now();
    let clock = Instant::now();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("runtime error: thread pool: {e}");
            return EXIT_RUNTIME;
        }
    };
    let report = match pool.install(|| run_suite(&cfg, suite)) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_for(&e);
        }
    };
    let files = match write_run(&cfg, &report, &dir) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_for(&e);
        }
    };
    let meta = Metadata {
        suite: suite.name().into(),
        started_unix: started,
        finished_unix: unix_now(),
        elapsed_secs: clock.elapsed().as_secs_f64(),
        threads: pool.current_num_threads(),
        version: env!("CARGO_PKG_VERSION"),
    };
    let meta_written = serde_json::to_string_pretty(&meta)
        .map_err(Error::from)
        .and_then(|t| write_file(&dir.join("metadata.json"), &t));
    if let Err(e) = meta_written {
        eprintln!("error: {e}");
        return exit_for(&e);
    }

    for s in &report.suites {
        for c in &s.checks {
            println!("{} {}/{}: {}", if c.pass { "PASS" } else { "FAIL" }, s.suite, c.name, c.detail);
        }
        for n in &s.notes {
            println!("note {}: {n}", s.suite);
        }
    }
    if files.is_empty() {
        println!("nothing to emit");
    }
    println!("report {} hash {}", dir.join("report.json").display(), report.hash);
    if report.pass {
        EXIT_PASS
    } else {
        EXIT_FAIL
    }
}
