//! Command-line front end: runs presets, sweeps them along one axis and
//! checks KKT candidates, writing self-describing result bundles.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

pub mod config;
pub mod experiment;
pub mod kkt;
pub mod output;
pub mod plot;
pub mod sweep;

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("degenerate problem: {0}")]
    Degenerate(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 3,
            CliError::Degenerate(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl From<ncf_core::Error> for CliError {
    fn from(e: ncf_core::Error) -> Self {
        match e {
            ncf_core::Error::Degenerate(m) => CliError::Degenerate(m),
            other => CliError::Config(other.to_string()),
        }
    }
}

/// Exit code when every check passed.
pub const EXIT_OK: i32 = 0;
/// Exit code when a check failed or a flow could not finish.
pub const EXIT_FAILED: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "ncf-flow", version, about = "Small-initialisation gradient flow experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run one preset and write its result bundle.
    Run {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Leave the generation time out of the SVG files.
        #[arg(long)]
        no_timestamp: bool,
    },
    /// Check KKT candidates and print a JSON report.
    Kkt {
        config: PathBuf,
        /// Use a closed-form oracle instead of candidates from a config.
        #[arg(long, value_enum)]
        oracle: Option<Oracle>,
        /// Leaky slope for the oracles when the config has no model.
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
    },
    /// Run a preset at every value of its sweep axis.
    Sweep {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        no_timestamp: bool,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Oracle {
    SymSqrelu,
    SymRelu,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("NCF_FLOW_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("NCF_FLOW_THREADS must be a positive integer, got {v:?}")))?;
    // a pool built earlier in the process wins; that is fine
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 3,
            };
        }
    };
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Run {
            config,
            out,
            seed,
            no_timestamp,
        } => output::run_command(&config, &out, seed, !no_timestamp),
        Command::Kkt {
            config,
            oracle,
            alpha,
        } => kkt::kkt_command(&config, oracle, alpha),
        Command::Sweep {
            config,
            out,
            no_timestamp,
        } => sweep::sweep_command(&config, &out, !no_timestamp),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
