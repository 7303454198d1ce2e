use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use conman_core::bench::{self, ExperimentConfig};
use conman_core::Result;

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser)]
#[command(name = "conman", version, about = "GNN + deep Q-learning connection management for dense cellular networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write training deployments and a manifest.
    Generate(Common),
    /// Train a model; writes the model JSON and the per-episode log CSV.
    Train(Common),
    /// Compare a trained model with max-RSRP; writes the gain report CSVs.
    Eval(Common),
    /// Answer NDJSON handover requests on stdin/stdout or a TCP endpoint.
    Serve(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON); missing fields take defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Model file; defaults to `<out>/model.json`.
    #[arg(long, value_name = "PATH")]
    model: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(model) = &self.model {
            cfg.model_path = Some(model.clone());
        }
        Ok(cfg)
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate(c) => {
            let cfg = c.resolve()?;
            let manifest = bench::cmd_generate(&cfg)?;
            eprintln!("wrote {} deployments to {}", manifest.deployments.len(), cfg.out_dir.display());
        }
        Command::Train(c) => {
            let cfg = c.resolve()?;
            let out = bench::cmd_train(&cfg)?;
            eprintln!(
                "trained on {} episodes; model {}, log {}",
                out.log.episodes.len(),
                out.model_path.display(),
                out.log_path.display()
            );
        }
        Command::Eval(c) => {
            let cfg = c.resolve()?;
            let report = bench::cmd_eval(&cfg)?;
            for s in report.summaries() {
                eprintln!(
                    "{:?} N={} M={} {:.1}/km2 {:?}: median {:+.2}% mean {:+.2}% ({} rows, {} excluded)",
                    s.sweep, s.n_cells, s.n_ues, s.density_per_km2, s.metric, s.median_gain_pct, s.mean_gain_pct, s.n_rows, s.n_excluded
                );
            }
        }
        Command::Serve(c) => bench::cmd_serve(&c.resolve()?)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
