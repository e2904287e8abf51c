//! Command-line front end for the variational engines: dataset generation,
//! mixture and source-separation structure sweeps, and predictive queries.
//!
//! Exit codes: 0 success, 1 compute failure, 2 usage or input error.
//! Log verbosity is controlled by the RUST_LOG environment variable.

mod commands;
mod genspec;
mod kv;
mod model_file;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use varbayes::vbbss::AlphaMode;

use commands::{cmd_fit_bss, cmd_fit_gmm, cmd_gen, cmd_predict};

#[derive(Parser)]
#[command(
    name = "varbayes",
    about = "Variational Bayes mixture modeling and blind source separation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a generator-spec file
    Gen(GenCli),
    /// Fit mixtures for every component count up to K and report q(m)
    FitGmm(FitGmmCli),
    /// Fit separation models for every source count up to K and report q(m)
    FitBss(FitBssCli),
    /// Log predictive density of query points under a fitted mixture model
    Predict(PredictCli),
}

#[derive(Args)]
struct GenCli {
    /// Generator-spec file (key = value text)
    #[arg(long)]
    spec: PathBuf,
    /// Output dataset CSV
    #[arg(long)]
    out: PathBuf,
    /// Override the seed in the spec file
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the true component label per instance (gmm kind)
    #[arg(long)]
    labels_out: Option<PathBuf>,
    /// Also write the true sources (bss-mix kind)
    #[arg(long)]
    sources_out: Option<PathBuf>,
    /// Also write the true mixing matrix (bss-mix kind)
    #[arg(long)]
    mixing_out: Option<PathBuf>,
    /// Also write the per-sensor noise variances (bss-mix kind)
    #[arg(long)]
    noise_out: Option<PathBuf>,
}

#[derive(Args)]
struct FitGmmCli {
    /// Training dataset CSV
    #[arg(long)]
    data: PathBuf,
    /// Maximal number of components K
    #[arg(long, default_value_t = 10)]
    max_structures: usize,
    /// Report directory
    #[arg(long)]
    out_dir: PathBuf,
    /// Initialization seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Relative free-energy convergence tolerance
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Iteration budget per structure
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// Scale of the auto-generated weak priors
    #[arg(long, default_value_t = 1e-3)]
    prior_eps: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlphaModeCli {
    Printed,
    Stationary,
}

#[derive(Args)]
struct FitBssCli {
    /// Training dataset CSV (omit in --snr-sweep mode)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Maximal number of sources K
    #[arg(long, default_value_t = 8)]
    max_structures: usize,
    /// Report directory
    #[arg(long)]
    out_dir: PathBuf,
    /// Relative free-energy convergence tolerance
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Iteration budget per structure
    #[arg(long, default_value_t = 5000)]
    max_iter: usize,
    /// Which stationary condition the mixing-prior precision update solves
    #[arg(long, value_enum, default_value = "stationary")]
    alpha_mode: AlphaModeCli,
    /// Re-estimate the per-sensor noise precisions during the fit
    #[arg(long)]
    lambda_update: bool,
    /// Known per-sensor noise variances (comma-separated)
    #[arg(long, value_delimiter = ',')]
    noise_vars: Option<Vec<f64>>,
    /// Ground-truth sources CSV for alignment-error reporting
    #[arg(long)]
    sources: Option<PathBuf>,
    /// Sweep the SNR of a generated scenario instead of fitting one dataset
    #[arg(long)]
    snr_sweep: bool,
    /// bss-mix generator spec for --snr-sweep
    #[arg(long)]
    gen_spec: Option<PathBuf>,
    /// SNR grid in dB for --snr-sweep
    #[arg(long, value_delimiter = ',', default_value = "0,10,20,30")]
    snr_list: Vec<f64>,
}

#[derive(Args)]
struct PredictCli {
    /// Fitted mixture model file
    #[arg(long)]
    model: PathBuf,
    /// Query points CSV
    #[arg(long)]
    query: PathBuf,
    /// Output CSV (query columns + log_density)
    #[arg(long)]
    out: PathBuf,
    /// Large-sample shortcut instead of the full augmented refit
    #[arg(long)]
    fast: bool,
    /// Refit convergence tolerance
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Refit iteration budget
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(args) => cmd_gen(&commands::GenArgs {
            spec: args.spec,
            out: args.out,
            seed: args.seed,
            labels_out: args.labels_out,
            sources_out: args.sources_out,
            mixing_out: args.mixing_out,
            noise_out: args.noise_out,
        }),
        Command::FitGmm(args) => cmd_fit_gmm(&commands::FitGmmArgs {
            data: args.data,
            max_structures: args.max_structures,
            out_dir: args.out_dir,
            seed: args.seed,
            tol: args.tol,
            max_iter: args.max_iter,
            prior_eps: args.prior_eps,
        }),
        Command::FitBss(args) => cmd_fit_bss(&commands::FitBssArgs {
            data: args.data,
            max_structures: args.max_structures,
            out_dir: args.out_dir,
            tol: args.tol,
            max_iter: args.max_iter,
            alpha_mode: match args.alpha_mode {
                AlphaModeCli::Printed => AlphaMode::Printed,
                AlphaModeCli::Stationary => AlphaMode::Stationary,
            },
            lambda_update: args.lambda_update,
            noise_vars: args.noise_vars,
            sources: args.sources,
            snr_sweep: args.snr_sweep,
            gen_spec: args.gen_spec,
            snr_list: args.snr_list,
        }),
        Command::Predict(args) => cmd_predict(&commands::PredictArgs {
            model: args.model,
            query: args.query,
            out: args.out,
            fast: args.fast,
            tol: args.tol,
            max_iter: args.max_iter,
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if err.is_input_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
