mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::ProposerKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

/// Turns incomplete articulated assets into simulation-ready ones and
/// scores assets for interaction readiness.
#[derive(Debug, Parser)]
#[command(name = "artready", version)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (refine) or CSV path (report).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub proposer: Option<ProposerKind>,
    /// Chat endpoint for the remote proposer.
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Seed for the fallback search.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse an asset and print per-link mesh analysis.
    Analyze {
        urdf: PathBuf,
        #[arg(long)]
        semantics: Option<PathBuf>,
    },
    /// Run the full pipeline over every asset in a manifest.
    Refine {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Score one asset as given, without changing it.
    Evaluate {
        urdf: PathBuf,
        #[arg(long)]
        semantics: Option<PathBuf>,
    },
    /// Sim-to-real correlation per method from success-rate tables.
    Srcc {
        #[arg(required = true)]
        tables: Vec<PathBuf>,
    },
    /// Aggregate the reports under a directory.
    Report { dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(out) => {
            print!("{}", out.stdout);
            ExitCode::from(out.code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
