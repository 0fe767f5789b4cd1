use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dsr_cli::plot::{cmd_plot, PlotKind};
use dsr_cli::run::{cmd_evaluate, cmd_train, EvalOptions};
use dsr_cli::sweep::cmd_sweep;
use dsr_cli::CliResult;

#[derive(Parser)]
#[command(name = "dsr", version, about = "Train, sweep, evaluate and plot dynamic sight-range runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one training job and write metrics.csv, checkpoint.bin and manifest.json.
    Train {
        config: PathBuf,
        /// Overrides train.seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a grid of configurations over several seeds and write summary.csv.
    Sweep {
        config: PathBuf,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        /// `key=v1,v2,...`; repeat for a cross product. Use `;` between
        /// values of dsr.sight_set or train.schedule.
        #[arg(long)]
        grid: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw an SVG chart from one or more run directories.
    Plot {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "return")]
        kind: PlotKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reload a run's checkpoint and report its mean return.
    Evaluate {
        run: PathBuf,
        /// Sight range; defaults to the run's final choice.
        #[arg(long)]
        d: Option<u32>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "none".into())
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Train { config, seed, out } => {
            let m = cmd_train(&config, seed, &out)?;
            println!("final d* = {}", m.final_d);
            println!("final eval return = {}", fmt_opt(m.final_eval_return));
            println!("wrote {}", out.display());
        }
        Command::Sweep {
            config,
            seeds,
            grid,
            out,
        } => {
            let report = cmd_sweep(&config, seeds, &grid, &out)?;
            for row in &report.summary {
                let failed = if row.failed > 0 {
                    format!(" ({} of {} runs failed and are excluded)", row.failed, row.runs)
                } else {
                    String::new()
                };
                println!("{:<30} {}{failed}", row.config, row.cell());
            }
            for p in &report.problems {
                eprintln!("warning: {p}");
            }
            println!("wrote {}", out.join("summary.csv").display());
        }
        Command::Plot { runs, kind, out } => {
            cmd_plot(&runs, kind, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Evaluate {
            run,
            d,
            episodes,
            eps,
            seed,
        } => {
            let (d, mean) = cmd_evaluate(
                &run,
                &EvalOptions {
                    d,
                    episodes,
                    epsilon: eps,
                    seed,
                },
            )?;
            println!("mean return at d = {d}: {mean:.4}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
