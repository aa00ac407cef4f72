use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use nalgebra::Vector3;
use pogo_core::fmt::round9;
use pogo_core::{PointCloud, RigidTransform3};
use serde::Serialize;

use crate::{open, parse_pose6, Common};

#[derive(Debug, Args)]
pub struct RegisterArgs {
    /// Cloud to move (ASCII PLY).
    pub source: PathBuf,
    /// Reference cloud (ASCII PLY).
    pub target: PathBuf,
    /// Initial transform `x,y,z,roll,pitch,yaw` (m, rad); defaults to identity.
    #[arg(long, value_name = "POSE", allow_hyphen_values = true)]
    pub initial: Option<String>,
    /// Print JSON instead of TOML.
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Serialize)]
struct Summary {
    converged: bool,
    iterations: usize,
    rmse: f64,
    inlier_rmse: f64,
    correspondences: usize,
    /// Row-major 4x4 target-from-source transform.
    transform: [[f64; 4]; 4],
}

fn read_cloud(path: &Path) -> Result<PointCloud> {
    PointCloud::read_ply(open(path)?).with_context(|| format!("in {}", path.display()))
}

/// ICP with the config's `mapping.icp` parameters. Writes the aligned
/// source as `registered.ply` and prints the result.
pub fn run(args: &RegisterArgs) -> Result<()> {
    let c = &args.common;
    let cfg = c.scenario()?;
    let initial = match &args.initial {
        Some(text) => {
            let [x, y, z, roll, pitch, yaw] = parse_pose6("initial", text)?;
            RigidTransform3::from_euler(Vector3::new(x, y, z), roll, pitch, yaw)
        }
        None => RigidTransform3::identity(),
    };
    let source = read_cloud(&args.source)?;
    let target = read_cloud(&args.target)?;
    let result = pogo_core::mapping::icp_register(&source, &target, &initial, &cfg.mapping.icp)?;

    let mut w = c.create("registered.ply")?;
    source.transformed(&result.transform).write_ply(&mut w)?;
    w.flush()?;

    let (r, t) = (result.transform.rotation(), result.transform.translation());
    let mut transform = [[0.0, 0.0, 0.0, 1.0]; 4];
    for (i, row) in transform.iter_mut().take(3).enumerate() {
        *row = [round9(r[(i, 0)]), round9(r[(i, 1)]), round9(r[(i, 2)]), round9(t[i])];
    }
    let summary = Summary {
        converged: result.converged,
        iterations: result.iterations,
        rmse: round9(result.rmse),
        inlier_rmse: round9(result.inlier_rmse),
        correspondences: result.correspondences,
        transform,
    };
    if args.json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        print!("{}", toml::to_string(&summary)?);
    }
    Ok(())
}
