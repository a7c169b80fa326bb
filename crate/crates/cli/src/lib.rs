//! Command-line front end for the `heavytail` model.
//!
//! Every command reads one JSON configuration, takes a master seed, and writes
//! CSV files (17 significant digits, header row) plus an echo of the resolved
//! configuration into the output directory. Exit codes: 0 success, 1 usage or
//! configuration error, 2 invalid data or model, 3 non-convergence with results
//! still written.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::Status;
use crate::config::RunConfig;
use crate::error::CliError;
use crate::io::OutDir;

#[derive(Debug, Parser)]
#[command(
    name = "heavytail",
    version,
    about = "Heavy-tail latent model: sample, fit and diagnose"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw samples from a model given in the config.
    Sample(CommonArgs),
    /// Fit marginal and pairwise joint parameters to a data CSV.
    Fit(CommonArgs),
    /// Recovery error against sample size.
    Convergence(CommonArgs),
    /// Correlation and tail-dependence curves while sweeping one parameter.
    Taildep(CommonArgs),
    /// Joint-quantile discrepancy of the fitted model and copula baselines.
    Discrepancy(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// JSON configuration file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Input CSV with a header row.
    #[arg(long, value_name = "PATH")]
    data: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Master seed, overrides the config.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, value_name = "N", env = "HEAVYTAIL_THREADS")]
    threads: Option<usize>,
}

/// Parse arguments, run the command and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(Status::Ok) => 0,
        Ok(Status::NotConverged) => {
            eprintln!("warning: some fits did not converge; results were written");
            3
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<Status, CliError> {
    let (name, args) = match &cli.command {
        Command::Sample(a) => ("sample", a),
        Command::Fit(a) => ("fit", a),
        Command::Convergence(a) => ("convergence", a),
        Command::Taildep(a) => ("taildep", a),
        Command::Discrepancy(a) => ("discrepancy", a),
    };
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = Some(s);
    }
    cfg.master_seed()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    let out = OutDir::create(&args.out)?;
    out.write_json("config.json", &cfg)?;
    log::info!("running {name}");
    let data = args.data.as_deref();
    pool.install(|| match &cli.command {
        Command::Sample(_) => commands::cmd_sample(&cfg, &out),
        Command::Fit(_) => commands::cmd_fit(&cfg, data, &out),
        Command::Convergence(_) => commands::cmd_convergence(&cfg, &out),
        Command::Taildep(_) => commands::cmd_taildep(&cfg, &out),
        Command::Discrepancy(_) => commands::cmd_discrepancy(&cfg, data, &out),
    })
}
