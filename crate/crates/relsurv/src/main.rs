use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use relsurv::commands::{self, SummarizeOptions};
use relsurv::config::RunConfig;
use relsurv::study::StudyConfig;
use relsurv::AppResult;

/// Bayesian tree-ensemble models for relative survival.
///
/// Times are read in the cohort's own unit (for example years); life-table
/// rates and `--times` values must use that same unit.
#[derive(Parser)]
#[command(name = "relsurv", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a PH or NPH model and write a draws directory.
    Fit {
        /// Run configuration (TOML).
        config: PathBuf,
        /// Override the configured output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Net-survival curves for the rows of a CSV file.
    Predict {
        /// Draws directory written by `fit`.
        #[arg(long)]
        draws: PathBuf,
        /// CSV with the fitted covariate columns.
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated evaluation times.
        #[arg(long, value_delimiter = ',', required = true)]
        times: Vec<f64>,
        /// Keep only rows with `column=value`.
        #[arg(long)]
        filter: Option<String>,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        /// Output CSV.
        #[arg(long, default_value = "curves.csv")]
        out: PathBuf,
    },
    /// Additive-projection R², partial effects and a subgroup tree.
    Summarize {
        #[arg(long)]
        draws: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Evaluation times for net-survival summaries (needed for NPH).
        #[arg(long, value_delimiter = ',')]
        times: Vec<f64>,
        /// Covariates to draw partial-effect curves for.
        #[arg(long, value_delimiter = ',')]
        variables: Vec<String>,
        /// Use at most this many evenly spaced draws.
        #[arg(long, default_value_t = 200)]
        max_draws: usize,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long, default_value = "summary")]
        out: PathBuf,
    },
    /// Leave-one-out ELPD of fits on the same data.
    Compare {
        /// Draws directories.
        #[arg(required = true)]
        draws: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a simulation study.
    Simulate {
        /// Study configuration (TOML).
        config: PathBuf,
        /// Also write every simulated cohort and its truth record.
        #[arg(long)]
        keep_data: bool,
    },
}

fn execute(cli: Cli) -> AppResult<()> {
    match cli.command {
        Command::Fit { config, output } => {
            let mut c = RunConfig::load(&config)?;
            if let Some(o) = output {
                c.output = o;
            }
            let report = commands::fit(&c)?;
            println!(
                "fit {} subjects ({} events), {} bins, {} chain(s) -> {}",
                report.subjects,
                report.events,
                report.grid.len() + 1,
                report.chains.len(),
                c.output.display()
            );
            for ch in &report.chains {
                let a = &ch.acceptance;
                println!(
                    "chain {}: {} draws; acceptance birth {:.3} death {:.3} change {:.3} swap {:.3}",
                    ch.chain, ch.retained, a.birth, a.death, a.change, a.swap
                );
                if let Some(w) = &ch.omega {
                    println!("  omega mean {:.3} [{:.3}, {:.3}]", w.mean, w.lower, w.upper);
                }
            }
        }
        Command::Predict {
            draws,
            data,
            times,
            filter,
            level,
            out,
        } => {
            let p = commands::predict(&draws, &data, &times, filter.as_deref(), level, Some(&out))?;
            println!("{} curve(s) -> {}", p.subjects.len(), out.display());
            for k in 0..p.population.times.len() {
                println!(
                    "t = {}: S_E = {:.4} [{:.4}, {:.4}]",
                    p.population.times[k], p.population.mean[k], p.population.lower[k], p.population.upper[k]
                );
            }
        }
        Command::Summarize {
            draws,
            data,
            times,
            variables,
            max_draws,
            level,
            out,
        } => {
            let opts = SummarizeOptions {
                times: &times,
                variables: &variables,
                max_draws,
                level,
                out: Some(&out),
            };
            let sets = commands::summarize(&draws, &data, &opts)?;
            println!("{} summary set(s) -> {}", sets.len(), out.display());
        }
        Command::Compare { draws, out } => {
            let cmp = commands::compare(&draws, out.as_deref())?;
            for m in &cmp.models {
                println!("{}: ELPD {:.1} (SE {:.1})", m.model, m.elpd, m.se);
            }
            for d in &cmp.differences {
                println!("{} - {}: {:.1} (SE {:.1})", d.first, d.second, d.difference, d.se);
            }
        }
        Command::Simulate { config, keep_data } => {
            let mut c = StudyConfig::load(&config)?;
            c.keep_data |= keep_data;
            let report = commands::simulate(&c)?;
            for a in &report.aggregate {
                println!(
                    "{}: {} replicates, avg RMSE {:.4}, avg coverage {:.3}, avg length {:.4}",
                    a.model, a.replicates, a.rmse, a.coverage, a.length
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
