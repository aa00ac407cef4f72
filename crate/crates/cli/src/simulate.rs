use std::io::Write;

use anyhow::Result;
use clap::Args;
use pogo_core::ble::io::{write_beacons, write_observations};
use pogo_core::sim::run_scenario;

use crate::Common;

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
}

/// Writes `trajectory.csv`, `observations.csv`, `beacons.csv`,
/// `metrics.toml` and the resolved `config.toml`; with mapping enabled also
/// `map.ply` and `map_poses.csv`.
pub fn run(args: &SimulateArgs) -> Result<()> {
    let c = &args.common;
    let cfg = c.scenario()?;
    let log = run_scenario(&cfg)?;

    let mut w = c.create("trajectory.csv")?;
    log.write_trajectory_csv(&mut w)?;
    w.flush()?;
    write_observations(c.create("observations.csv")?, &log.log)?;
    write_beacons(c.create("beacons.csv")?, log.world.beacons())?;
    if let Some(map) = &log.map {
        let mut w = c.create("map.ply")?;
        map.write_ply(&mut w)?;
        w.flush()?;
        let mut w = c.create("map_poses.csv")?;
        map.write_poses_csv(&mut w)?;
        w.flush()?;
    }
    let metrics = log.metrics_toml();
    let mut w = c.create("metrics.toml")?;
    w.write_all(metrics.as_bytes())?;
    w.flush()?;
    let mut w = c.create("config.toml")?;
    w.write_all(cfg.to_toml_string().as_bytes())?;
    w.flush()?;
    print!("{metrics}");
    Ok(())
}
