//! `workstat`: reconstruct transition matrices from noisy means and test work fluctuation relations.

mod commands;
mod config;
mod error;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::config::ConfigArgs;
use crate::error::{CliError, EXIT_VALIDATION};

#[derive(Parser, Debug)]
#[command(name = "workstat", version, about, allow_negative_numbers = true)]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate noisy measurement means for every preparation and direction
    Simulate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct transition matrices from a dataset
    Invert {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Work distributions for each reconstructed matrix and preparation
    Workdist {
        #[arg(long)]
        inversion: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Fit ln(P_F(W) / P_B(-W)) against W
    Crooks {
        #[arg(long)]
        forward: PathBuf,
        #[arg(long)]
        backward: PathBuf,
        /// Monte Carlo table used to weight the fit
        #[arg(long)]
        uncertainty: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Tab-separated points, fitted line and prediction band
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Monte Carlo error propagation
    Propagate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Text summary of existing output files
    Report {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        inversion: PathBuf,
        #[arg(long, num_args = 1..)]
        workdist: Vec<PathBuf>,
        #[arg(long, num_args = 1..)]
        fit: Vec<PathBuf>,
        #[arg(long)]
        uncertainty: Option<PathBuf>,
        /// Write here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Every stage in sequence, writing all outputs into one directory
    Run {
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let ctx = Context {
        config: cli.config.resolve()?,
        exec: cli.config.execution(),
    };
    match cli.command {
        Command::Simulate { out } => {
            ctx.simulate(&out)?;
        }
        Command::Invert { dataset, out } => {
            ctx.invert(&dataset, &out)?;
        }
        Command::Workdist {
            inversion,
            dataset,
            out_dir,
        } => {
            for path in ctx.workdist(&inversion, &dataset, &out_dir)? {
                println!("{}", path.display());
            }
        }
        Command::Crooks {
            forward,
            backward,
            uncertainty,
            out,
            plot,
        } => {
            let doc = ctx.crooks(&forward, &backward, uncertainty.as_deref(), &out, plot.as_deref())?;
            match (doc.fit.kt_pev, doc.fit.kt_stderr_pev) {
                (Some(k), Some(e)) => println!("kT = {k:.4} +/- {e:.4} peV"),
                _ => println!("kT undefined (slope {:.6})", doc.fit.slope),
            }
        }
        Command::Propagate { out } => {
            let table = ctx.propagate(&out)?;
            for r in &table.recovery {
                let median = r.median_pev.map(|m| format!("{m:.4}")).unwrap_or_else(|| "-".into());
                println!("kT {:.3}: median fitted {median}", r.kt_pev);
            }
        }
        Command::Report {
            dataset,
            inversion,
            workdist,
            fit,
            uncertainty,
            out,
        } => {
            let text = report::render(
                &ctx,
                &report::Inputs {
                    dataset,
                    inversion,
                    workdist,
                    fits: fit,
                    uncertainty,
                },
            )?;
            match out {
                Some(path) => std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?,
                None => print!("{text}"),
            }
        }
        Command::Run { out_dir } => {
            for path in ctx.run(&out_dir)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
