use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use pogo_core::geometry::Pose2;
use pogo_core::mapping::surface_error;
use pogo_core::sim::{pose_rmse, TimedPose};
use pogo_core::PointCloud;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::{open, Common};

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Estimated trajectory CSV: `est_x,est_y,est_theta` or `x,y,theta`
    /// columns plus `t`. A `simulate` trajectory also carries its own truth.
    #[arg(required_unless_present = "map", conflicts_with = "map")]
    pub estimated: Option<PathBuf>,
    /// Ground-truth trajectory CSV: `truth_*` or plain `x,y,theta` columns.
    #[arg(long, value_name = "FILE")]
    pub truth: Option<PathBuf>,
    /// Map PLY scored against the configured world's surfaces.
    #[arg(long, value_name = "FILE")]
    pub map: Option<PathBuf>,
    /// Print JSON instead of TOML.
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub common: Common,
}

/// Reads `t` and the first `{prefix}x,{prefix}y,{prefix}theta` column set
/// present, in the order given. Times must increase strictly.
fn read_track(path: &Path, prefixes: &[&str]) -> Result<Vec<TimedPose>> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let Some(it) = col("t").or_else(|| col("timestamp")) else {
        bail!("{}: no t column", path.display());
    };
    let Some((ix, iy, ith)) = prefixes.iter().find_map(|p| {
        Some((
            col(&format!("{p}x"))?,
            col(&format!("{p}y"))?,
            col(&format!("{p}theta"))?,
        ))
    }) else {
        bail!("{}: no pose columns (tried prefixes {prefixes:?})", path.display());
    };
    let mut out: Vec<TimedPose> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |i: usize| -> Result<f64> {
            let s = rec.get(i).unwrap_or("").trim();
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => bail!("{} line {line}: bad number {s:?}", path.display()),
            }
        };
        let tp = TimedPose {
            t: num(it)?,
            pose: Pose2::new(num(ix)?, num(iy)?, num(ith)?),
        };
        if let Some(prev) = out.last() {
            if !(tp.t > prev.t) {
                bail!("{} line {line}: timestamp {} does not increase", path.display(), tp.t);
            }
        }
        out.push(tp);
    }
    Ok(out)
}

fn emit<T: Serialize>(value: &T, json: bool) -> Result<()> {
    if json {
        println!("{}", serde_json::to_string_pretty(value)?);
    } else {
        print!("{}", toml::to_string(value)?);
    }
    Ok(())
}

pub fn run(args: &MetricsArgs) -> Result<()> {
    let c = &args.common;
    let cfg = c.scenario()?;
    if let Some(map) = &args.map {
        let cloud = PointCloud::read_ply(open(map)?).with_context(|| format!("in {}", map.display()))?;
        let world = cfg.build_world(&mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
        let stats = surface_error(cloud.points(), &world, 3.0 * cfg.mapping.voxel_size)?;
        return emit(&stats.rounded(), args.json);
    }
    let est_path = args.estimated.as_ref().expect("clap requires estimated or map");
    let estimated = read_track(est_path, &["est_", ""])?;
    let truth = match &args.truth {
        Some(p) => read_track(p, &["truth_", "", "est_"])?,
        None => read_track(est_path, &["truth_"])?,
    };
    let errors = pose_rmse(&estimated, &truth).context("timestamp mismatch between estimate and truth")?;
    emit(&errors.rounded(), args.json)
}
