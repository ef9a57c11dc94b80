use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use resilience_core::config::{BackendKind, RunConfig};
use resilience_core::interventions::ArmConfig;
use resilience_core::{pipeline, Error, Result};

#[derive(Parser)]
#[command(name = "resim", version, about = "Misinformation resilience simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML). The bundled desk configuration if absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seed values, overriding `simulation.seeds`.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Arm id (repeatable), e.g. `control`, `persuasion_neutral`, `fact_check@3`.
    #[arg(long = "arm")]
    arms: Vec<String>,
    /// Backend kind: `reference` or `remote`.
    #[arg(long)]
    backend: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured sweep and write logs plus a manifest.
    Simulate(Common),
    /// Compute one metrics row per run log or trajectory.
    Analyze {
        /// Log files, trajectory CSVs, or directories containing them.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Metrics CSV path; printed to stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build resilience maps and intervention movement from a metrics CSV.
    Report {
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run logs (or directories) for per-seed stance deltas.
        #[arg(long)]
        logs: Vec<PathBuf>,
    },
    /// Calibrate the persona template on the desk cohort.
    Calibrate(Common),
    /// Score every claim of a pool with the configured backend.
    ScorePool {
        #[command(flatten)]
        common: Common,
        /// Claim pool JSON; `claims.pool` or the bundled pool if absent.
        #[arg(long)]
        pool: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::desk(),
    };
    if let Some(out) = &common.out {
        config.output_dir = absolute(out)?.display().to_string();
    }
    if let Some(seeds) = &common.seeds {
        config.simulation.seeds = seeds.clone();
    }
    if !common.arms.is_empty() {
        config.arms = common
            .arms
            .iter()
            .map(|id| ArmConfig::from_id(id).ok_or_else(|| Error::Config(format!("unknown arm {id}"))))
            .collect::<Result<_>>()?;
    }
    if let Some(kind) = &common.backend {
        config.backend.kind =
            BackendKind::parse(kind).ok_or_else(|| Error::Config(format!("unknown backend {kind}")))?;
    }
    config.validate()?;
    Ok(config)
}

fn absolute(path: &Path) -> Result<PathBuf> {
    std::path::absolute(path).map_err(|e| Error::io(path, e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(common) => {
            let config = load_config(&common)?;
            let backend = config.backend.build()?;
            let summary = pipeline::simulate(&config, backend.as_ref())?;
            eprintln!(
                "wrote {} logs to {} ({} failed agent-rounds)",
                summary.logs.len(),
                summary.out_dir.display(),
                summary.manifest.failed_agent_rounds
            );
        }
        Command::Analyze { inputs, out } => {
            let summary = pipeline::analyze(&inputs, out.as_deref())?;
            for (path, reason) in &summary.failed {
                eprintln!("skipped {}: {reason}", path.display());
            }
            match out {
                Some(out) => eprintln!("wrote {} rows to {}", summary.rows.len(), out.display()),
                None => print!("{}", summary.csv),
            }
        }
        Command::Report { metrics, out, logs } => {
            let report = pipeline::report(&metrics, &logs, &out)?;
            for bm in &report.maps {
                let first = bm.map.entries.first().map(|e| e.community_id.as_str()).unwrap_or("-");
                let last = bm.map.entries.last().map(|e| e.community_id.as_str()).unwrap_or("-");
                eprintln!("{}: most resilient {first}, least resilient {last}", bm.backend_id);
            }
            eprintln!("wrote report to {}", out.display());
        }
        Command::Calibrate(common) => {
            let config = load_config(&common)?;
            let backend = config.backend.build()?;
            let report = pipeline::calibrate(&config, backend.as_ref(), &config.output_path())?;
            eprintln!(
                "selected iteration {} with loss {:.4}; mean RMSE {:.3}, accuracy {:.3}",
                report.selected_iteration, report.selected_loss, report.alignment.mean.rmse, report.alignment.mean.accuracy
            );
        }
        Command::ScorePool { common, pool } => {
            let config = load_config(&common)?;
            let backend = config.backend.build()?;
            let claims = match pool {
                Some(path) => resilience_core::claims::load_pool(&path)?,
                None => config.pool()?,
            };
            let out = config.output_path().join("scored_pool.json");
            let scored = pipeline::score_pool(&claims, backend.as_ref(), config.simulation.attempts, &out)?;
            eprintln!("scored {} claims into {}", scored.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
