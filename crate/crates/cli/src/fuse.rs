use std::io::Read;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use pogo_core::ble::io::{read_beacons, read_observations, write_estimates, ObservationLog};
use pogo_core::ble::{EkfState, Localizer};

use crate::{open, Common};

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Observation log CSV, as written by `simulate`.
    pub observations: PathBuf,
    /// Beacon map CSV.
    pub beacons: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

/// Replays the log from its `init` row and writes `fused.csv`. Filter noise
/// and receiver height come from the scenario config, so replaying a
/// `simulate` run needs that run's `config.toml` when it differed from the
/// defaults.
pub fn run(args: &FuseArgs) -> Result<()> {
    let c = &args.common;
    let cfg = c.scenario()?;
    let mut text = String::new();
    open(&args.observations)?
        .read_to_string(&mut text)
        .with_context(|| format!("cannot read {}", args.observations.display()))?;
    let log = if text.trim().is_empty() {
        ObservationLog::default()
    } else {
        read_observations(text.as_bytes()).with_context(|| format!("in {}", args.observations.display()))?
    };
    let beacons = read_beacons(open(&args.beacons)?).with_context(|| format!("in {}", args.beacons.display()))?;
    if let Some(id) = log
        .observations
        .iter()
        .filter_map(|o| o.beacon_id())
        .find(|id| beacons.get(id).is_err())
    {
        bail!("unknown beacon id {id:?} in {}", args.observations.display());
    }
    let rows = match log.init {
        Some(init) => {
            let state = EkfState::new(init.pose, init.covariance()?, 0.0);
            Localizer::new(state, beacons, cfg.ekf_noise(), cfg.receiver_height)?.replay(&log.observations)?
        }
        None if log.observations.is_empty() => Vec::new(),
        None => bail!("{} has no init row", args.observations.display()),
    };
    write_estimates(c.create("fused.csv")?, &rows)?;
    println!(
        "fused {} observations into {} estimates",
        log.observations.len(),
        rows.len()
    );
    Ok(())
}
