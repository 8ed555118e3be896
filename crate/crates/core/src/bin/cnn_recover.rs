use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cnn_recover::cli::{
    cmd_check_derivatives, cmd_fig_a, cmd_fig_b, cmd_moments_table, cmd_pipeline,
    ExperimentConfig,
};
use cnn_recover::{Error, Result};

#[derive(Parser)]
#[command(name = "cnn-recover", about = "patch-convolutional recovery experiments", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config file ([experiment] section, key = value lines).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides out_dir from the config (default ".").
    #[arg(long)]
    out: Option<PathBuf>,
    /// Single seed; overrides the config's seeds list.
    #[arg(long)]
    seed: Option<u64>,
    /// Rayon thread count (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Hessian spectrum at the planted weights across sample sizes.
    FigA(CommonArgs),
    /// Gradient descent loss traces from random initializations.
    FigB(CommonArgs),
    /// Tensor initialization followed by gradient descent, per seed.
    Pipeline(CommonArgs),
    /// Activation moment table: closed forms vs quadrature.
    MomentsTable(CommonArgs),
    /// Finite-difference validation of gradients and Hessians.
    CheckDerivatives(CommonArgs),
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::FigA(a)
            | Command::FigB(a)
            | Command::Pipeline(a)
            | Command::MomentsTable(a)
            | Command::CheckDerivatives(a) => a,
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let args = cli.command.common();
    if let Some(threads) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot configure thread pool: {e}")))?;
    }
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seeds = Some(vec![seed]);
    }
    let out_dir = args
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));

    match &cli.command {
        Command::FigA(_) => {
            let rows = cmd_fig_a(&cfg, &out_dir)?;
            println!("fig-a: wrote {} rows to {}", rows.len(), out_dir.join("fig_a.csv").display());
        }
        Command::FigB(_) => {
            let runs = cmd_fig_b(&cfg, &out_dir)?;
            for (seed, report) in &runs {
                let last = report.trace.last().expect("trace is never empty");
                println!(
                    "seed {seed}: final loss {:.3e} at iteration {}{}",
                    last.loss,
                    last.iter,
                    if report.converged { " (converged)" } else { "" }
                );
            }
            println!("fig-b: wrote {}", out_dir.join("fig_b.csv").display());
        }
        Command::Pipeline(_) => {
            let rows = cmd_pipeline(&cfg, &out_dir)?;
            println!(
                "pipeline: wrote {} rows to {}",
                rows.len(),
                out_dir.join("pipeline.csv").display()
            );
        }
        Command::MomentsTable(_) => {
            let rows = cmd_moments_table(&cfg, &out_dir)?;
            println!(
                "moments-table: wrote {} rows to {}",
                rows.len(),
                out_dir.join("moments_table.csv").display()
            );
        }
        Command::CheckDerivatives(_) => {
            cmd_check_derivatives(&cfg)?;
            println!("all derivative checks passed");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
