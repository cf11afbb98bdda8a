use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use transmix::sim::{BootstrapMode, ScenarioName};
use transmix_cli::pipeline::error_record;
use transmix_cli::{run_pipeline, CliError, Command, InputFormat, RunConfig};

#[derive(Parser)]
#[command(
    name = "transmix",
    version,
    about = "Cluster CpG sites by parent-to-offspring methylation transmission"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit the mixture at a fixed number of clusters.
    Fit(Opts),
    /// Fit a range of cluster counts and select one from the BIC curve.
    Sweep(Opts),
    /// Cluster random site subsets and combine them.
    Subsets(Opts),
    /// Run a Monte Carlo study of a built-in scenario.
    Simulate(Opts),
    /// Fit at a fixed number of clusters and add bootstrap standard errors.
    Bootstrap(Opts),
    /// Repeat a run from its manifest.
    Rerun {
        manifest: PathBuf,
        /// Write to this directory instead of the one in the manifest.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Opts {
    /// Long-format CSV of methylation values.
    #[arg(long)]
    input: Option<PathBuf>,
    /// `beta` (site_id,role,subject_id,value) or `intensity` (...,M,U).
    #[arg(long, default_value = "beta")]
    format: String,
    /// Offset c in beta = M / (c + M + U).
    #[arg(long, default_value_t = 100.0)]
    intensity_offset: f64,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 1)]
    k_min: usize,
    #[arg(long, default_value_t = 8)]
    k_max: usize,
    /// Minimum mother-child and father-child correlation; 0 disables screening.
    #[arg(long, default_value_t = 0.5)]
    cutoff: f64,
    #[arg(long)]
    subset_size: Option<usize>,
    /// Expected percentage of sites left out of every subset.
    #[arg(long, default_value_t = 1.0)]
    miss_budget: f64,
    /// Use exactly this many subsets instead of the miss budget.
    #[arg(long)]
    n_subsets: Option<usize>,
    #[arg(long, default_value = "S0")]
    scenario: String,
    #[arg(long, default_value_t = 100)]
    replicates: usize,
    #[arg(long, default_value_t = 100)]
    bootstrap_reps: usize,
    /// Refit the whole mixture on every bootstrap resample.
    #[arg(long)]
    full_refit: bool,
}

impl Opts {
    fn into_config(self, command: Command) -> Result<RunConfig, CliError> {
        let scenario: ScenarioName = self.scenario.parse()?;
        let format: InputFormat = self.format.parse()?;
        Ok(RunConfig {
            command,
            input: self.input,
            format,
            intensity_offset: self.intensity_offset,
            output: self.output,
            k: self.k,
            k_min: self.k_min,
            k_max: self.k_max,
            tol: self.tol,
            max_iter: self.max_iter,
            restarts: self.restarts,
            seed: self.seed,
            cutoff: self.cutoff,
            subset_size: self.subset_size,
            miss_budget: self.miss_budget,
            n_subsets: self.n_subsets,
            scenario,
            replicates: self.replicates,
            bootstrap_reps: self.bootstrap_reps,
            bootstrap_mode: if self.full_refit {
                BootstrapMode::FullRefit
            } else {
                BootstrapMode::FixedAssignments
            },
        })
    }
}

fn build_config(cmd: Cmd) -> Result<RunConfig, CliError> {
    match cmd {
        Cmd::Fit(o) => o.into_config(Command::Fit),
        Cmd::Sweep(o) => o.into_config(Command::Sweep),
        Cmd::Subsets(o) => o.into_config(Command::Subsets),
        Cmd::Simulate(o) => o.into_config(Command::Simulate),
        Cmd::Bootstrap(o) => o.into_config(Command::Bootstrap),
        Cmd::Rerun { manifest, output } => {
            let text =
                std::fs::read_to_string(&manifest).map_err(|e| CliError::Io(format!("{}: {e}", manifest.display())))?;
            let mut config = RunConfig::from_manifest(&text)?;
            if let Some(o) = output {
                config.output = o;
            }
            Ok(config)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let config = match build_config(cli.command) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{}", error_record(None, &e));
            return ExitCode::from(2);
        }
    };
    match run_pipeline(&config) {
        Ok(summary) => {
            for f in &summary.files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_record(Some(&config.output), &e));
            ExitCode::FAILURE
        }
    }
}
