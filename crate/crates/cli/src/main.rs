use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mamp_cli::output::write_atomic;
use mamp_cli::{run_experiment, validate_config, Kind, RunError};

#[derive(Parser)]
#[command(name = "mamp", version, about = "Multi-terminal AMP experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Information dimensions of the configured source
    Rid(Common),
    /// State-evolution fixed points over a rate grid
    SeSweep(Common),
    /// MAMP on synthetic instances next to its state evolution
    MampRun(Common),
    /// Block state evolution (and optionally block MAMP) on a coupled ensemble
    CoupledRun(Common),
    /// Bisection for the coupled recovery boundary
    PhaseBoundary(Common),
    /// Fresh-matrix check of the state-evolution prediction
    FreshSeCheck(Common),
    /// Validate a configuration and print it with every default filled in
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration
    #[arg(long)]
    config: PathBuf,
    /// output directory
    #[arg(long)]
    out: PathBuf,
    /// replaces the configured master seed
    #[arg(long)]
    seed: Option<u64>,
    /// worker threads (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
}

fn fail(err: &RunError, out: Option<&Path>) -> ExitCode {
    let record = err.to_json();
    eprintln!("{record}");
    if let Some(dir) = out {
        if fs::create_dir_all(dir).is_ok() {
            let _ = write_atomic(&dir.join("error.json"), record.to_string().as_bytes());
        }
    }
    ExitCode::from(err.exit_code() as u8)
}

fn load(path: &Path) -> Result<mamp_cli::ExperimentConfig, RunError> {
    let raw = fs::read_to_string(path).map_err(|e| RunError::Io(format!("{}: {e}", path.display())))?;
    validate_config(&raw).map_err(RunError::Config)
}

fn execute(kind: Kind, c: &Common) -> Result<(), RunError> {
    let mut cfg = load(&c.config)?;
    if cfg.kind != kind {
        return Err(RunError::Config(vec![mamp_cli::Diagnostic {
            field: "kind".into(),
            message: format!("file describes '{}' but the subcommand is '{}'", cfg.kind, kind),
        }]));
    }
    if let Some(seed) = c.seed {
        cfg.override_seed(seed);
    }
    if let Some(t) = c.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| RunError::Io(e.to_string()))?;
    }
    let manifest = run_experiment(&cfg, &c.out)?;
    println!("{}", serde_json::to_string_pretty(&manifest["results"]).unwrap_or_default());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common) = match &cli.command {
        Command::Rid(c) => (Kind::Rid, c),
        Command::SeSweep(c) => (Kind::SeSweep, c),
        Command::MampRun(c) => (Kind::MampRun, c),
        Command::CoupledRun(c) => (Kind::CoupledRun, c),
        Command::PhaseBoundary(c) => (Kind::PhaseBoundary, c),
        Command::FreshSeCheck(c) => (Kind::FreshSeCheck, c),
        Command::Validate { config } => {
            return match load(config) {
                Ok(cfg) => {
                    print!("{}", cfg.to_toml());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e, None),
            };
        }
    };
    match execute(kind, common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e, Some(&common.out)),
    }
}
