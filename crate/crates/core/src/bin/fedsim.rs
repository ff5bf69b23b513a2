use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use fedsim::cli::{self, CliError, RunOptions};
use fedsim::StrategyKind;

#[derive(Parser)]
#[command(name = "fedsim", version, about = "Serverless federated learning simulator")]
struct Args {
    #[command(subcommand)]
    command: Command,
    /// Suppress per-run output.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(clap::Args)]
struct Common {
    /// Scenario file, or the name of a bundled scenario.
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Replaces the seeds listed in the scenario.
    #[arg(long, value_delimiter = ',', alias = "seed")]
    seeds: Option<Vec<u64>>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario once per seed.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        strategy: Option<StrategyKind>,
    },
    /// Run several strategies on identical pools and seeds.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long = "strategy", value_delimiter = ',', required = true)]
        strategies: Vec<StrategyKind>,
    },
    /// Vary one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        strategy: Option<StrategyKind>,
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
}

fn options(common: &Common, strategy: Option<StrategyKind>) -> RunOptions {
    RunOptions {
        seeds: common.seeds.clone(),
        strategy,
    }
}

fn execute(args: Args) -> Result<(), CliError> {
    match args.command {
        Command::Run { common, strategy } => {
            let runs = cli::cmd_run(&common.scenario, &common.out, &options(&common, strategy))?;
            if !args.quiet {
                for r in runs {
                    let ttt = r.summary.time_to_target.map(|t| format!("{t:.1}s")).unwrap_or("unreached".into());
                    println!(
                        "{} seed {}: loss {:.6e}, time to target {ttt}, cost {:.6}, cold {:.3} -> {}",
                        r.strategy,
                        r.seed,
                        r.summary.final_loss,
                        r.summary.cost,
                        r.summary.cold_start_ratio,
                        r.dir.display()
                    );
                }
            }
        }
        Command::Compare { common, strategies } => {
            let cmp = cli::cmd_compare(&common.scenario, &strategies, &common.out, &options(&common, None))?;
            if !args.quiet {
                print!("{}", cmp.table);
            }
        }
        Command::Sweep {
            common,
            strategy,
            param,
            values,
        } => {
            let sweep = cli::cmd_sweep(&common.scenario, &param, &values, &common.out, &options(&common, strategy))?;
            if !args.quiet {
                print!("{}", sweep.table);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(args) => args,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
