use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use activerange::eval::load_aggregate_csv;
use activerange::experiment::export_world;
use activerange::{render_map_chart, run_on_world, write_outputs, ExperimentConfig, World};

#[derive(Parser)]
#[command(version, about = "Active learning of species ranges from candidate range models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        /// Comma-separated strategy names, e.g. `WA_HSS+,LR_uncertain`.
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<String>>,
    },
    /// Write the configured world (grid, features, models, species) as CSV.
    ExportWorld {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Redraw the MAP chart from an aggregate CSV.
    Chart {
        #[arg(long)]
        aggregate: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "experiment")]
        title: String,
    },
}

fn load_config(path: Option<&PathBuf>) -> anyhow::Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            threads,
            strategies,
        } => {
            let mut cfg = load_config(config.as_ref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(t) = threads {
                cfg.threads = Some(t);
            }
            if let Some(s) = strategies {
                cfg.strategies = s;
            }
            if let Some(t) = cfg.threads {
                rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
            }
            cfg.validate()?;
            let out_dir = out
                .or_else(|| cfg.out_dir.clone())
                .unwrap_or_else(|| PathBuf::from("results"));
            log::info!("building world");
            let world = World::build(&cfg)?;
            log::info!(
                "{} cells, {} candidate models, {} species",
                world.grid.len(),
                world.set.len(),
                world.species.len()
            );
            let outcome = run_on_world(&world, &cfg)?;
            for f in write_outputs(&outcome, &out_dir, &cfg.name)? {
                log::info!("wrote {}", f.display());
            }
            if outcome.failures.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                log::error!("{} runs aborted", outcome.failures.len());
                Ok(ExitCode::from(1))
            }
        }
        Command::ExportWorld { config, out } => {
            let cfg = load_config(config.as_ref())?;
            cfg.validate()?;
            let world = World::build(&cfg)?;
            export_world(&world, &out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Chart { aggregate, out, title } => {
            let curves = load_aggregate_csv(&aggregate)?;
            match render_map_chart(&curves, &title) {
                Some(svg) => std::fs::write(&out, svg)?,
                None => log::warn!("aggregate is empty, nothing to draw"),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
