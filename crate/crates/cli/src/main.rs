//! `pogo`: run scenarios, turn depth frames into clouds and heightmaps,
//! replay observation logs through the filter, register clouds and score
//! results.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

mod depth2cloud;
mod fuse;
mod metrics;
mod register;
mod simulate;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use pogo_core::sim::{ConfigError, ScenarioConfig};

#[derive(Debug, Parser)]
#[command(name = "pogo", version, about = "Depth, BLE localization and mapping pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write trajectory, observations, map and metrics.
    Simulate(simulate::SimulateArgs),
    /// Back-project a 16-bit PGM depth frame to a PLY cloud, optionally with a floor heightmap.
    Depth2cloud(depth2cloud::Depth2CloudArgs),
    /// Replay an observation log through the EKF offline.
    Fuse(fuse::FuseArgs),
    /// Align one PLY cloud onto another with ICP.
    Register(register::RegisterArgs),
    /// Score a trajectory against ground truth, or a map against the scenario world.
    Metrics(metrics::MetricsArgs),
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Scenario config (TOML); defaults to the built-in scenario.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory; nothing is written outside it.
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
    /// Master seed, overriding the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Config override as a dotted key, e.g. `rates.ble_hz=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl Common {
    pub fn scenario(&self) -> Result<ScenarioConfig> {
        if let Some(p) = &self.config {
            require_file(p)?;
        }
        Ok(ScenarioConfig::load(
            self.config.as_deref(),
            &self.overrides,
            self.seed,
        )?)
    }

    /// Creates the output directory and opens `name` inside it.
    pub fn create(&self, name: &str) -> Result<BufWriter<File>> {
        std::fs::create_dir_all(&self.out)
            .with_context(|| format!("cannot create output directory {}", self.out.display()))?;
        let path = self.out.join(name);
        let f = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
        Ok(BufWriter::new(f))
    }
}

/// Bad invocation: missing inputs or malformed flag values.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(UsageError(format!("input file not found: {}", path.display())).into());
    }
    Ok(())
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    require_file(path)?;
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(f))
}

/// Parses `x,y,z,roll,pitch,yaw` (meters, radians).
pub fn parse_pose6(flag: &str, text: &str) -> Result<[f64; 6]> {
    let vals: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| {
            UsageError(format!(
                "--{flag}: expected six numbers x,y,z,roll,pitch,yaw, got {text:?}"
            ))
        })?;
    let arr: [f64; 6] = vals.try_into().map_err(|v: Vec<f64>| {
        UsageError(format!(
            "--{flag}: expected six numbers x,y,z,roll,pitch,yaw, got {}",
            v.len()
        ))
    })?;
    if arr.iter().any(|v| !v.is_finite()) {
        return Err(UsageError(format!("--{flag}: values must be finite")).into());
    }
    Ok(arr)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() || err.downcast_ref::<UsageError>().is_some() {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => simulate::run(a),
        Command::Depth2cloud(a) => depth2cloud::run(a),
        Command::Fuse(a) => fuse::run(a),
        Command::Register(a) => register::run(a),
        Command::Metrics(a) => metrics::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
