//! `shellgibbs`: sampling, integration and verification runs from a flat
//! configuration file.
//!
//! Exit codes: 0 pass, 1 verification failure, 2 configuration error,
//! 3 I/O error, 4 blow-up.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("verification failed: {0}")]
    Failed(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("blow-up: {0}")]
    Blowup(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Blowup(_) => 4,
        }
    }
}

impl From<shellgibbs::Error> for CliError {
    fn from(e: shellgibbs::Error) -> Self {
        use shellgibbs::Error as E;
        match e {
            E::Blowup { .. } | E::StepFailure { .. } => CliError::Blowup(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "shellgibbs", version, about = "Gibbs-measure invariance toolkit for GOY and SABRA shell models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override of a configuration key, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root; the run directory is created below it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker count or `auto`.
    #[arg(long, global = true)]
    threads: Option<String>,
    #[arg(long, global = true, value_parser = ["csv", "json", "both"])]
    format: Option<String>,
    /// Flow override (`ou`, `viscous`, `inviscid`, `eps`).
    #[arg(long, global = true)]
    flow: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw Gibbs samples and test them against the measure.
    SampleGibbs,
    /// Integrate one trajectory from a Gibbs initial state.
    Run,
    /// Run a verification experiment.
    Verify {
        #[arg(value_enum)]
        experiment: Experiment,
    },
    /// Print every configuration key with its default.
    Keys,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    Invariance,
    Generators,
    BmConvergence,
    EpsLimit,
    MRefinement,
    Energy,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Invariance => "invariance",
            Experiment::Generators => "generators",
            Experiment::BmConvergence => "bm-convergence",
            Experiment::EpsLimit => "eps-limit",
            Experiment::MRefinement => "m-refinement",
            Experiment::Energy => "energy",
        }
    }
}

fn resolve(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    for kv in &common.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = common.seed {
        cfg.set("seed", &s.to_string())?;
    }
    if let Some(o) = &common.out {
        cfg.set("out", &o.to_string_lossy())?;
    }
    if let Some(t) = &common.threads {
        cfg.set("threads", t)?;
    }
    if let Some(f) = &common.format {
        cfg.set("format", f)?;
    }
    if let Some(f) = &common.flow {
        cfg.set("flow", f)?;
    }
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> Result<String, CliError> {
    if let Command::Keys = cli.command {
        let mut s = String::new();
        for (k, v, d) in config::KEYS {
            s.push_str(&format!("{k:<18} {v:<22} {d}\n"));
        }
        return Ok(s);
    }
    let cfg = resolve(&cli.common)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.threads()? {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::SampleGibbs => commands::sample_gibbs(&cfg),
        Command::Run => commands::run(&cfg),
        Command::Verify { experiment } => commands::verify(&cfg, experiment),
        Command::Keys => unreachable!(),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("shellgibbs: {e}");
            ExitCode::from(e.code())
        }
    }
}
