use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use swarmcap::config::ExperimentConfig;
use swarmcap::harness::{self, exit, HarnessError};

/// Simulate BitTorrent swarms packed onto a cluster and check experiment
/// plans against node capacities.
#[derive(Debug, Parser)]
#[command(name = "swarmcap", version)]
struct Cli {
    /// Override the RNG seed of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the traffic matrix and capacity verdicts (exit 1 when violated).
    Plan {
        config: PathBuf,
        /// Also write plan_report.txt into this directory.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run one simulation and write the metric streams.
    Simulate {
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run one simulation per peer count.
    Sweep {
        config: PathBuf,
        /// Peers per group, as `peers=start:end:step` or `peers=a,b,c`.
        #[arg(long)]
        vary: String,
        #[arg(short, long)]
        output: PathBuf,
        /// Points simulated in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, HarnessError> {
    let cfg = ExperimentConfig::load(path)?;
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn run(cli: Cli) -> Result<i32, HarnessError> {
    match cli.command {
        Command::Plan { config, output } => {
            let cfg = load(&config, cli.seed)?;
            let outcome = harness::cmd_plan(&cfg, output.as_deref())?;
            print!("{}", outcome.text);
            Ok(outcome.exit_code())
        }
        Command::Simulate { config, output } => {
            let cfg = load(&config, cli.seed)?;
            let outcome = harness::cmd_simulate(&cfg, &output)?;
            print!("{}", outcome.text);
            Ok(exit::OK)
        }
        Command::Sweep {
            config,
            vary,
            output,
            jobs,
        } => {
            let points = harness::parse_vary(&vary)?;
            if jobs == 0 {
                return Err(HarnessError::Usage("--jobs must be at least 1".into()));
            }
            let cfg = load(&config, cli.seed)?;
            let results = harness::cmd_sweep(&cfg, &points, &output, jobs)?;
            for p in &results {
                match &p.result {
                    Ok(r) => println!(
                        "{:>5} peers/group: avg {} MB/s, native connections {}",
                        p.peers_per_node,
                        r.avg_dl.map_or("n/a".into(), |x| format!("{:.3}", x / 1e6)),
                        r.native_conn_frac.map_or("n/a".into(), |x| format!("{x:.3}")),
                    ),
                    Err(e) => println!("{:>5} peers/group: failed: {e}", p.peers_per_node),
                }
            }
            let failed = results.iter().filter(|p| p.result.is_err()).count();
            if failed > 0 {
                return Err(HarnessError::SweepFailures {
                    failed,
                    total: results.len(),
                });
            }
            Ok(exit::OK)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli).context("swarmcap failed") {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<HarnessError>().map_or(exit::RUNTIME, HarnessError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
