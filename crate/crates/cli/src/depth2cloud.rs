use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use nalgebra::Vector3;
use pogo_core::depth::pnm::{parse_intrinsics, read_depth_pgm, read_ppm, sidecar_path, write_height_pgm};
use pogo_core::depth::{back_project, fit_floor_plane, height_map, FloorFitParams};
use pogo_core::fmt::sig9;
use pogo_core::sim::camera_mount;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{open, parse_pose6, Common};

#[derive(Debug, Args)]
pub struct Depth2CloudArgs {
    /// 16-bit PGM depth frame in millimeters (0 = invalid).
    pub depth: PathBuf,
    /// Intrinsics file; defaults to the `.intr` sidecar next to the depth frame.
    #[arg(long, value_name = "FILE")]
    pub intrinsics: Option<PathBuf>,
    /// 8-bit PPM color image of the same size.
    #[arg(long, value_name = "FILE")]
    pub color: Option<PathBuf>,
    /// Fit the floor plane and write `heightmap.pgm`.
    #[arg(long)]
    pub heightmap: bool,
    /// Camera mount `x,y,z,roll,pitch,yaw` (m, rad; positive pitch looks
    /// down). Defaults to the config's camera mount.
    #[arg(long, value_name = "POSE", allow_hyphen_values = true)]
    pub mount: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

/// Writes `cloud.ply` in the robot frame given by the mount. With
/// `--heightmap` also writes `heightmap.pgm` (millimeters above the fitted
/// floor) and prints the plane in the robot frame.
pub fn run(args: &Depth2CloudArgs) -> Result<()> {
    let c = &args.common;
    let cfg = c.scenario()?;
    let mount = match &args.mount {
        Some(text) => {
            let [x, y, z, roll, pitch, yaw] = parse_pose6("mount", text)?;
            camera_mount(Vector3::new(x, y, z), roll, pitch, yaw)
        }
        None => cfg.camera.mount.transform(),
    };
    let intr_path = args.intrinsics.clone().unwrap_or_else(|| sidecar_path(&args.depth));
    let mut intr_text = String::new();
    std::io::Read::read_to_string(&mut open(&intr_path)?, &mut intr_text)?;
    let intr = parse_intrinsics(&intr_text).with_context(|| format!("in {}", intr_path.display()))?;
    let depth =
        read_depth_pgm(open(&args.depth)?, intr.max_depth).with_context(|| format!("in {}", args.depth.display()))?;
    let color = match &args.color {
        Some(p) => Some(read_ppm(open(p)?).with_context(|| format!("in {}", p.display()))?),
        None => None,
    };
    let cloud = back_project(&depth, &intr, color.as_ref())?;
    if cloud.is_empty() {
        bail!("empty cloud: {} has no valid depth pixels", args.depth.display());
    }
    let mut w = c.create("cloud.ply")?;
    cloud.transformed(&mount).write_ply(&mut w)?;
    w.flush()?;
    println!("points = {}", cloud.len());

    if args.heightmap {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let plane = fit_floor_plane(&cloud, &FloorFitParams::default(), &mut rng)?;
        let hm = height_map(&depth, &intr, &plane)?;
        let mut w = c.create("heightmap.pgm")?;
        write_height_pgm(&mut w, &hm)?;
        w.flush()?;
        let p = plane.transformed(&mount);
        println!(
            "normal = [{}, {}, {}]",
            sig9(p.normal.x),
            sig9(p.normal.y),
            sig9(p.normal.z)
        );
        println!("offset = {}", sig9(p.offset));
    }
    Ok(())
}
