//! Command-line driver: `floc localize | track | cluster | evaluate | synth`.

pub mod commands;
pub mod config;
mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::RunConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "floc", version, about = "Floorplan localization, tracking and style clustering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run config; flags override its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub floorplan: Option<PathBuf>,
    #[arg(long, global = true)]
    pub scans: Option<PathBuf>,
    #[arg(long, global = true)]
    pub motions: Option<PathBuf>,
    #[arg(long, global = true)]
    pub features: Option<PathBuf>,
    #[arg(long, global = true)]
    pub meta: Option<PathBuf>,
    /// Same-room probability CSV for loss reporting.
    #[arg(long, global = true)]
    pub probs: Option<PathBuf>,
    /// Ground-truth trajectory CSV.
    #[arg(long, global = true)]
    pub truth: Option<PathBuf>,
    /// Predicted trajectory CSV.
    #[arg(long, global = true)]
    pub pred: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads, 0 for all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Single-scan pose posterior.
    Localize,
    /// Histogram-filter tracking over a scan sequence.
    Track,
    /// Constrained style clustering of image features.
    Cluster,
    /// Recall and RMSE of a predicted trajectory.
    Evaluate,
    /// Synthetic floorplan, trajectory, scans and motions.
    Synth,
}

impl Cli {
    /// Loads the config file, if any, then applies flag overrides.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let paths = &mut cfg.paths;
        let set = |slot: &mut Option<PathBuf>, flag: &Option<PathBuf>| {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        };
        set(&mut paths.floorplan, &self.floorplan);
        set(&mut paths.scans, &self.scans);
        set(&mut paths.motions, &self.motions);
        set(&mut paths.features, &self.features);
        set(&mut paths.metadata, &self.meta);
        set(&mut paths.pair_probs, &self.probs);
        set(&mut paths.truth, &self.truth);
        set(&mut paths.pred, &self.pred);
        set(&mut cfg.out, &self.out);
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Validation(e.to_string().trim().replace('\n', " ")))?;
    let cfg = cli.resolve()?;
    commands::execute(cli.command, &cfg)
}

/// Process entry point; returns the exit code.
pub fn main_entry() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let err = CliError::Validation(e.to_string().trim().replace('\n', " "));
            eprintln!("{}", err.to_json());
            return err.exit_code();
        }
    };
    match cli.resolve().and_then(|cfg| commands::execute(cli.command, &cfg)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}
