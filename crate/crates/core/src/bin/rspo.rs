//! Command-line front end: `run`, `eval`, `oracle` and `metrics`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rspo::oracle::{overall_status, Status};
use rspo::runner::{cmd_eval, cmd_metrics, cmd_oracle, cmd_run, RunConfig};
use rspo::{Error, Result};

#[derive(Parser)]
#[command(name = "rspo", version, about = "Reward-switching policy optimization experiments")]
struct Cli {
    /// Rayon threads for rollouts and gradients; results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an archive of policies for every seed in the config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Replace the config's seed list with this single seed.
        #[arg(long)]
        seed_override: Option<u64>,
        /// Replace the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify modes and compute diversity metrics for a run directory.
    Eval {
        run_dir: PathBuf,
        #[arg(long)]
        n_eval: Option<usize>,
    },
    /// Check the filtering and switching theorems on a tabular instance.
    Oracle {
        instance: PathBuf,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize training curves of a run directory into metrics.csv.
    Metrics { run_dir: PathBuf },
}

fn execute(cli: Cli) -> Result<()> {
    if let Some(w) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build_global()
            .map_err(|e| Error::Usage(format!("cannot start {w} workers: {e}")))?;
    }
    match cli.command {
        Command::Run { config, seed_override, out } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed_override {
                cfg.seeds = vec![s];
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            let report = cmd_run(&cfg)?;
            for s in &report.seeds {
                let labels: Vec<&str> = s.modes.iter().map(|m| m.label.as_str()).collect();
                println!("seed {}: {} distinct modes [{}]", s.seed, s.distinct_modes, labels.join(", "));
            }
            println!("mean distinct modes: {:.2} ({})", report.mean_distinct_modes, cfg.out_dir.display());
        }
        Command::Eval { run_dir, n_eval } => {
            let report = cmd_eval(&run_dir, n_eval)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Oracle { instance, out } => {
            let reports = cmd_oracle(&instance)?;
            let json = serde_json::to_string_pretty(&reports)?;
            match out {
                Some(p) => std::fs::write(&p, json).map_err(|e| Error::Io { path: p, source: e })?,
                None => println!("{json}"),
            }
            let status = overall_status(&reports);
            eprintln!("{}", serde_json::to_value(status)?.as_str().unwrap_or("?"));
            if status == Status::Fail {
                return Err(Error::Usage("theorem check failed on this instance".into()));
            }
        }
        Command::Metrics { run_dir } => print!("{}", cmd_metrics(&run_dir)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
