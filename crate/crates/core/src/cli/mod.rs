//! The `pba` command line.

pub mod commands;
pub mod config;
pub mod files;
pub mod persist;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{cmd_gen_testbed, cmd_report, cmd_run_analysis, cmd_run_pba, RunOptions, RunOutcome, TestbedOptions};
pub use config::{RunConfig, WORKERS_ENV};

#[derive(Debug, Parser)]
#[command(name = "pba", version, about = "Posterior belief assessment over alternative Bayesian calibrations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct ConfigArgs {
    /// Run configuration (TOML).
    #[arg(long, short)]
    pub config: PathBuf,
    /// Override a config value, e.g. `--set pba.replicates=200`. Repeatable.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one calibration analysis on the observations.
    RunAnalysis {
        #[command(flatten)]
        config: ConfigArgs,
        /// `J0` for the baseline or `C<class>-M<member>` for a class member.
        #[arg(long, short, default_value = "J0")]
        judgement: String,
    },
    /// Run the full assessment, resuming from completed replicates.
    RunPba {
        #[command(flatten)]
        config: ConfigArgs,
        /// Stop after this many new replicates (testing interrupted runs).
        #[arg(long, hide = true)]
        stop_after: Option<usize>,
    },
    /// Regenerate the report from an output directory.
    Report {
        output_dir: PathBuf,
    },
    /// Write a synthetic ensemble, observations and config to a directory.
    GenTestbed {
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Ensemble size.
        #[arg(long, default_value_t = 40)]
        n: usize,
        /// Number of Latin hypercube sub-designs.
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value_t = 2000)]
        replicates: usize,
        /// Members per judgement class instead of the default sizes.
        #[arg(long)]
        class_size: Option<usize>,
    },
}

fn execute(cli: Cli) -> crate::Result<()> {
    match cli.command {
        Command::RunAnalysis { config, judgement } => {
            let cfg = RunConfig::load(&config.config, &config.overrides)?;
            let s = cmd_run_analysis(&cfg, &judgement)?;
            println!(
                "{judgement}: E[y] = {:.6}, Var[y] = {:.4e}, mcse = {:.2e}, acceptance = {:.3}",
                s.expectation, s.variance, s.mcse, s.acceptance_rate
            );
        }
        Command::RunPba { config, stop_after } => {
            let cfg = RunConfig::load(&config.config, &config.overrides)?;
            let outcome = cmd_run_pba(&cfg, &RunOptions { stop_after })?;
            print!("{}", report::render_text(&outcome.report));
        }
        Command::Report { output_dir } => {
            print!("{}", cmd_report(&output_dir)?);
        }
        Command::GenTestbed { out, seed, n, k, replicates, class_size } => {
            cmd_gen_testbed(&out, &TestbedOptions { seed, n, k, replicates, class_size })?;
            println!("wrote testbed to {}", out.display());
        }
    }
    Ok(())
}

/// Parses `args` (program name first) and runs the command. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
