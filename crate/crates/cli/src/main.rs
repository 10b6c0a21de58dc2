use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hallu_core::experiments::{self, ExperimentConfig, ExperimentKind, Overrides, Preset};
use hallu_core::runtime::{init_threads, tune_allocator};
use hallu_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "hallu",
    version,
    about = "Seeded hallucination experiments and closed-form bounds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one head and write its checkpoint and loss curve.
    Train(Common),
    /// Hallucination rate vs number of modes and gap width.
    Topology(Common),
    /// Distance-to-manifold curves and Jacobian conditioning vs steps.
    Precision(Common),
    /// Evaluate the bound requests listed in the config.
    Bounds(Common),
    /// Compare amplification schedules on the simulated planner.
    Plansim(Common),
    /// Latent-grid classification map of a band head.
    SeamMap(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config; omitted fields take the preset defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["desk", "paper"])]
    preset: Option<String>,
    /// Output directory (default: runs/<subcommand>).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// Resolve the config and write the manifest without running anything.
    #[arg(long)]
    dry_run: bool,
}

impl Command {
    fn split(self) -> (ExperimentKind, Common) {
        match self {
            Command::Train(c) => (ExperimentKind::Train, c),
            Command::Topology(c) => (ExperimentKind::Topology, c),
            Command::Precision(c) => (ExperimentKind::Precision, c),
            Command::Bounds(c) => (ExperimentKind::Bounds, c),
            Command::Plansim(c) => (ExperimentKind::Plansim, c),
            Command::SeamMap(c) => (ExperimentKind::SeamMap, c),
        }
    }
}

fn execute(kind: ExperimentKind, args: Common) -> Result<bool, Error> {
    if let Some(t) = args.threads {
        if t == 0 {
            return Err(Error::config("--threads must be at least 1"));
        }
        init_threads(t)?;
    }
    let ov = Overrides {
        kind: Some(kind),
        seed: args.seed,
        preset: args.preset.as_deref().map(str::parse::<Preset>).transpose()?,
    };
    let config = match &args.config {
        Some(p) => ExperimentConfig::load(p, &ov)?,
        None => ExperimentConfig::resolve(&serde_json::json!({}), &ov)?,
    };
    let out = args.out.unwrap_or_else(|| PathBuf::from("runs").join(kind.name()));
    let manifest = experiments::run(config, &out, args.dry_run)?;
    for f in &manifest.outputs {
        println!("{}", out.join(&f.path).display());
    }
    println!("{}", out.join(experiments::MANIFEST_FILE).display());
    for c in &manifest.failed_cells {
        eprintln!("failed cell {}: {}", c.cell, c.error);
    }
    Ok(manifest.failed_cells.is_empty())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    tune_allocator();
    let (kind, args) = Cli::parse().command.split();
    match execute(kind, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_NUMERICAL),
        Err(e) => {
            log::error!("{e}");
            if e.is_config() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::from(EXIT_NUMERICAL)
            }
        }
    }
}
