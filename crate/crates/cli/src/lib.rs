//! Experiment runner for the `pssso` command line tool.
//!
//! Each command reads an [`ExperimentConfig`], resolves it against the
//! `desk` or `paper` preset, runs deterministically, and writes CSV curves,
//! JSON reports, optional SVG charts and a `manifest.json` into
//! `<out>/<command>/`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

pub mod config;
pub mod experiments;
pub mod output;

pub use config::ExperimentConfig;
pub use output::Check;

use output::{Artifact, Manifest};

/// Exit code for a run whose assertions failed.
pub const EXIT_ASSERTION: i32 = 2;
/// Exit code for an invalid config or command line.
pub const EXIT_CONFIG: i32 = 3;
/// Exit code for runtime failures (I/O, non-convergent reference runs).
pub const EXIT_RUNTIME: i32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] pssso_core::Error),
    #[error("cannot write {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    DegenerateL1,
    DegenerateNuclear,
    MinibatchLasso,
    SaaConsistency,
    ElasticNetBound,
    LocalUnionDemo,
    CalculusCheck,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::DegenerateL1,
        Command::DegenerateNuclear,
        Command::MinibatchLasso,
        Command::SaaConsistency,
        Command::ElasticNetBound,
        Command::LocalUnionDemo,
        Command::CalculusCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::DegenerateL1 => "degenerate-l1",
            Command::DegenerateNuclear => "degenerate-nuclear",
            Command::MinibatchLasso => "minibatch-lasso",
            Command::SaaConsistency => "saa-consistency",
            Command::ElasticNetBound => "elastic-net-bound",
            Command::LocalUnionDemo => "local-union-demo",
            Command::CalculusCheck => "calculus-check",
        }
    }
}

/// Everything a command produced, before anything is written.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub checks: Vec<Check>,
    pub artifacts: Vec<Artifact>,
    pub deviations: Vec<String>,
    pub tolerances: BTreeMap<String, f64>,
    /// Headline numbers, written to `summary.json`.
    pub summary: serde_json::Value,
    /// Parameters after resolving the config against its preset.
    pub settings: serde_json::Value,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub emit_svg: bool,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.seeds = Some(vec![s]);
        }
        if let Some(o) = &self.out {
            cfg.out_dir = Some(o.clone());
        }
        cfg.emit_svg |= self.emit_svg;
    }
}

/// Worker pool capped by `PSSSO_THREADS` when set.
pub fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("PSSSO_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| CliError::Config(format!("PSSSO_THREADS must be a positive integer, got {v:?}")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))
}

/// Runs a command without touching the file system.
pub fn execute(cmd: Command, cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    use experiments::*;
    cfg.check_experiment(cmd.name())?;
    cfg.validate_common()?;
    let svg = cfg.emit_svg;
    fn with<S: Serialize>(s: S, run: impl FnOnce(&S) -> Result<Outcome, CliError>) -> Result<Outcome, CliError> {
        let mut out = run(&s)?;
        out.settings = serde_json::to_value(&s).expect("settings serialize");
        Ok(out)
    }
    thread_pool()?.install(|| match cmd {
        Command::DegenerateL1 => with(degenerate::L1Settings::from_config(cfg)?, |s| degenerate::run_l1(s, svg)),
        Command::DegenerateNuclear => with(degenerate::NuclearSettings::from_config(cfg)?, |s| degenerate::run_nuclear(s, svg)),
        Command::MinibatchLasso => with(minibatch::Settings::from_config(cfg)?, |s| minibatch::run(s, svg)),
        Command::SaaConsistency => with(saa::Settings::from_config(cfg)?, |s| saa::run(s, svg)),
        Command::ElasticNetBound => with(elastic::Settings::from_config(cfg)?, |s| elastic::run(s, svg)),
        Command::LocalUnionDemo => with(union_demo::Settings::from_config(cfg)?, |s| union_demo::run(s, svg)),
        Command::CalculusCheck => with(calculus::Settings::from_config(cfg)?, calculus::run),
    })
}

#[derive(Debug)]
pub struct RunResult {
    pub outcome: Outcome,
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct Summary<'a> {
    command: &'a str,
    passed: bool,
    checks: &'a [Check],
    values: &'a serde_json::Value,
}

/// Runs a command and writes its results under `<out_dir>/<command>/`.
pub fn run(cmd: Command, mut cfg: ExperimentConfig, overrides: &Overrides) -> Result<RunResult, CliError> {
    overrides.apply(&mut cfg);
    let mut outcome = execute(cmd, &cfg)?;
    outcome.artifacts.push(Artifact::json(
        "summary.json",
        &Summary {
            command: cmd.name(),
            passed: outcome.passed(),
            checks: &outcome.checks,
            values: &outcome.summary,
        },
    ));
    let canonical = cfg.canonical_json();
    let mut manifest = Manifest {
        command: cmd.name().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: output::sha256_hex(canonical.as_bytes()),
        config: serde_json::from_str(&canonical).expect("canonical config is JSON"),
        settings: outcome.settings.clone(),
        tolerances: outcome.tolerances.clone(),
        deviations: outcome.deviations.clone(),
        checks: outcome.checks.clone(),
        passed: outcome.passed(),
        files: Vec::new(),
    };
    let dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("results")).join(cmd.name());
    let files = output::write_all(&dir, &outcome.artifacts, &mut manifest)?;
    Ok(RunResult { outcome, dir, files })
}
