use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use pssso_cli::{Command, ExperimentConfig, Overrides, EXIT_ASSERTION, EXIT_CONFIG};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Action {
    DegenerateL1,
    DegenerateNuclear,
    MinibatchLasso,
    SaaConsistency,
    ElasticNetBound,
    LocalUnionDemo,
    CalculusCheck,
    /// Print the JSON Schema of the config file.
    Schema,
}

impl Action {
    fn command(self) -> Option<Command> {
        Some(match self {
            Action::DegenerateL1 => Command::DegenerateL1,
            Action::DegenerateNuclear => Command::DegenerateNuclear,
            Action::MinibatchLasso => Command::MinibatchLasso,
            Action::SaaConsistency => Command::SaaConsistency,
            Action::ElasticNetBound => Command::ElasticNetBound,
            Action::LocalUnionDemo => Command::LocalUnionDemo,
            Action::CalculusCheck => Command::CalculusCheck,
            Action::Schema => return None,
        })
    }
}

/// Identification experiments for partly smooth operators.
#[derive(Debug, Parser)]
#[command(name = "pssso", version)]
struct Args {
    action: Action,
    /// TOML config; the desk preset is used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured ones.
    #[arg(long)]
    seed: Option<u64>,
    /// Output root; results go to `<out>/<command>/`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    emit_svg: bool,
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(u8::try_from(c).unwrap_or(1))
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { code(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    let Some(cmd) = args.action.command() else {
        println!("{}", ExperimentConfig::schema());
        return ExitCode::SUCCESS;
    };
    let cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    };
    let overrides = Overrides {
        seed: args.seed,
        out: args.out,
        emit_svg: args.emit_svg,
    };
    let result = cfg.and_then(|cfg| pssso_cli::run(cmd, cfg, &overrides));
    match result {
        Ok(r) => {
            for c in &r.outcome.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            println!("wrote {} files to {}", r.files.len(), r.dir.display());
            if r.outcome.passed() {
                ExitCode::SUCCESS
            } else {
                code(EXIT_ASSERTION)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            code(e.exit_code())
        }
    }
}
