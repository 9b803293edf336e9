//! `sbsde`: command-line driver for the singular BSDE solver.
//!
//! Exit codes: 0 success, 1 configuration/input error, 2 numerical failure.

mod config;
mod output;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde_json::json;

use config::RunConfig;
use output::OutputDir;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SBSDE_OUT_DIR";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{context}: {source}")]
    Numeric {
        context: &'static str,
        #[source]
        source: singular_bsde::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Wraps a library error with the module it came from. Configuration
    /// problems detected inside the library keep exit code 1.
    pub fn numeric(context: &'static str) -> impl Fn(singular_bsde::Error) -> CliError {
        move |source| match source {
            singular_bsde::Error::Config(_) | singular_bsde::Error::UnsupportedExpansion(_) => {
                CliError::Config(format!("{context}: {source}"))
            }
            source => CliError::Numeric { context, source },
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 1,
            CliError::Numeric { .. } => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sbsde", version, about = "Singular BSDE solver with terminal expansions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// TOML run configuration.
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory; falls back to the config's `output_dir`, then
    /// $SBSDE_OUT_DIR, then `./sbsde-out`.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Caps the number of worker threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Progress on stderr (repeat for more).
    #[arg(short, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one problem and write the Ȳ summary.
    Solve(Common),
    /// Convergence sweep over (h, Δ) levels with the error-bound decomposition.
    Sweep(Common),
    /// Extract H near maturity and compare it with its envelope.
    ExpansionCheck(Common),
    /// Optimal liquidation: value, trajectories and Monte-Carlo cost.
    Liquidate(Common),
    /// Empirical audit of the growth assumptions on the driver.
    AuditAssumptions(Common),
}

impl Command {
    fn parts(&self) -> (&'static str, &Common) {
        match self {
            Command::Solve(c) => ("solve", c),
            Command::Sweep(c) => ("sweep", c),
            Command::ExpansionCheck(c) => ("expansion-check", c),
            Command::Liquidate(c) => ("liquidate", c),
            Command::AuditAssumptions(c) => ("audit-assumptions", c),
        }
    }
}

fn resolve_out(common: &Common, cfg: &RunConfig) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("sbsde-out"))
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let (name, common) = cli.command.parts();
    let text = std::fs::read_to_string(&common.config).map_err(|e| CliError::io(&common.config, e))?;
    let mut cfg = config::parse(&text)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::Config("--threads: must be at least 1".into()));
        }
        // Only fails if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let out_dir = resolve_out(common, &cfg);
    let mut out = OutputDir::create(&out_dir)?;
    if common.verbose > 0 {
        eprintln!("sbsde {name}: seed {}, output {}", cfg.seed, out_dir.display());
    }

    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let clock = Instant::now();
    let outcome = match cli.command {
        Command::Solve(_) => run::solve(&cfg, &mut out),
        Command::Sweep(_) => run::sweep(&cfg, &mut out),
        Command::ExpansionCheck(_) => run::expansion_check(&cfg, &mut out),
        Command::Liquidate(_) => run::liquidate(&cfg, &mut out),
        Command::AuditAssumptions(_) => run::audit(&cfg, &mut out),
    }?;
    let elapsed = clock.elapsed().as_secs_f64();

    let resolved = toml::to_string(&cfg).expect("config serializes");
    out.write("resolved.toml", resolved.as_bytes())?;
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": name,
        "seed": cfg.seed,
        "threads": rayon::current_num_threads(),
        "started_unix": started,
        "wall_clock_seconds": elapsed,
        "config_file": common.config.display().to_string(),
        "resolved_config": cfg,
        "outputs": out.written(),
        "diagnostics": outcome.diagnostics,
    });
    out.json("manifest.json", &manifest)?;
    for line in &outcome.stdout {
        println!("{line}");
    }
    if common.verbose > 0 {
        eprintln!("sbsde {name}: done in {elapsed:.3}s");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
