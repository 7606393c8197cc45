use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use polyfeed::cli::{cmd_basis_info, cmd_eval, cmd_sweep, cmd_train, load_config, LoadedConfig};
use polyfeed::{Error, Result};

#[derive(Parser)]
#[command(name = "polyfeed", version, about = "Learn polynomial value-function feedback laws")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; falls back to POLYFEED_WORKERS, then all cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Override the test-set size (e.g. 500 for the full evaluation).
    #[arg(long)]
    test_size: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Print index-set cardinalities before and after filtering.
    BasisInfo(Common),
    /// Train a surrogate and write its coefficients.
    Train(Common),
    /// Evaluate stored coefficients against open-loop references.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Coefficient file; defaults to `<out>/coefficients.json`.
        #[arg(long)]
        coefficients: Option<PathBuf>,
    },
    /// Train and evaluate over a grid of penalty weights and degrees.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated penalty weights; defaults to the config's sweep section.
        #[arg(long, value_delimiter = ',')]
        gammas: Vec<f64>,
        /// Comma-separated spatial degrees.
        #[arg(long, value_delimiter = ',')]
        degrees: Vec<u32>,
    },
}

fn prepare(common: &Common) -> Result<(LoadedConfig, PathBuf)> {
    let workers = match common.workers {
        Some(k) => Some(k),
        None => match std::env::var("POLYFEED_WORKERS") {
            Ok(v) => Some(
                v.parse()
                    .map_err(|_| Error::Config(format!("POLYFEED_WORKERS is not a count: {v}")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(k) = workers {
        if k == 0 {
            return Err(Error::Config("worker count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let mut loaded = load_config(&common.config)?;
    if let Some(n) = common.test_size {
        loaded.config.test_size = n;
        loaded.config.validate()?;
    }
    let out = common
        .out
        .clone()
        .or_else(|| loaded.config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok((loaded, out))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BasisInfo(common) => {
            let (loaded, _) = prepare(&common)?;
            print!("{}", cmd_basis_info(&loaded.config)?);
        }
        Command::Train(common) => {
            let (loaded, out) = prepare(&common)?;
            let path = cmd_train(&loaded, &out)?;
            println!("wrote {}", path.display());
        }
        Command::Eval { common, coefficients } => {
            let (loaded, out) = prepare(&common)?;
            let coef = coefficients.unwrap_or_else(|| out.join("coefficients.json"));
            let path = cmd_eval(&loaded, &coef, &out)?;
            println!("wrote {}", path.display());
        }
        Command::Sweep { common, gammas, degrees } => {
            let (loaded, out) = prepare(&common)?;
            let grid = loaded.config.sweep.clone();
            let gammas = if gammas.is_empty() {
                grid.as_ref().map(|s| s.gammas.clone()).unwrap_or_default()
            } else {
                gammas
            };
            let degrees = if degrees.is_empty() {
                grid.as_ref().map(|s| s.degrees.clone()).unwrap_or_default()
            } else {
                degrees
            };
            if gammas.is_empty() || degrees.is_empty() {
                return Err(Error::Config("sweep needs gammas and degrees".into()));
            }
            let path = cmd_sweep(&loaded, &gammas, &degrees, &out)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
