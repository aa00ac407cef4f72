//! Scan registration and global map assembly.
//!
//! Each scan is placed at its odometry/BLE pose estimate, refined by
//! point-to-point ICP against the map built so far, and merged into a voxel
//! grid whose cells keep the centroid of every point they received.

mod icp;
mod kdtree;
mod voxel;

pub use icp::{best_fit_transform, icp_register, IcpParams, IcpResult};
pub use kdtree::KdTree;
pub use voxel::{voxel_downsample, voxel_key, VoxelCell, VoxelKey};

use std::io::Write;

use nalgebra::{Matrix3, Rotation3, SymmetricEigen, Vector3};
use serde::Serialize;
use thiserror::Error;

use crate::cloud::{CloudError, PointCloud};
use crate::fmt::{round9, sig9};
use crate::geometry::{pose2_to_transform3, wrap, Covariance3, Point3, Pose2, RigidTransform3};
use crate::sim::World;

#[derive(Debug, Error)]
pub enum MappingError {
    #[error("icp needs at least 3 points per cloud (source {source_points}, target {target_points})")]
    TooFewPoints { source_points: usize, target_points: usize },
    #[error("iteration {iteration}: {found} correspondences, need {required}")]
    CorrespondenceStarvation {
        iteration: usize,
        found: usize,
        required: usize,
    },
    #[error("scan has no points")]
    EmptyScan,
    #[error("map has no points")]
    EmptyMap,
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A sensor-frame cloud together with the pose estimate used to seed it.
#[derive(Debug, Clone)]
pub struct Scan {
    pub cloud: PointCloud,
    pub seed_pose: Pose2,
    pub seed_cov: Covariance3,
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InsertOutcome {
    Refined(IcpResult),
    /// Inserted at the seed: the map had too little overlap, or ICP starved.
    SeededOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Insertion {
    /// Sensor-to-world transform the scan was merged with.
    pub refined: RigidTransform3,
    pub outcome: InsertOutcome,
}

/// Robot pose the map used for one scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapPose {
    pub timestamp: f64,
    pub pose: Pose2,
    /// `None` for scans inserted at their seed.
    pub converged: Option<bool>,
    pub rmse: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MapErrorStats {
    pub mean_abs_m: f64,
    pub p95_abs_m: f64,
    pub outlier_fraction: f64,
    pub points: usize,
}

impl MapErrorStats {
    /// Statistics rounded to the nine digits used in text output.
    pub fn rounded(&self) -> MapErrorStats {
        MapErrorStats {
            mean_abs_m: round9(self.mean_abs_m),
            p95_abs_m: round9(self.p95_abs_m),
            outlier_fraction: round9(self.outlier_fraction),
            points: self.points,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GlobalMap {
    voxel_size: f64,
    cells: voxel::CellMap,
    poses: Vec<MapPose>,
}

impl GlobalMap {
    pub fn new(voxel_size: f64) -> Result<Self, MappingError> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(MappingError::InvalidParams(format!(
                "voxel_size must be positive, got {voxel_size}"
            )));
        }
        Ok(Self {
            voxel_size,
            cells: voxel::CellMap::default(),
            poses: Vec::new(),
        })
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell(&self, key: &VoxelKey) -> Option<&VoxelCell> {
        self.cells.get(key)
    }

    pub fn poses(&self) -> &[MapPose] {
        &self.poses
    }

    /// Representative points ordered by voxel index.
    pub fn points(&self) -> Vec<Point3> {
        voxel::sorted_centroids(&self.cells)
    }

    /// Representatives inside the box `[lo, hi]`, ordered by voxel index.
    fn points_within(&self, lo: &Point3, hi: &Point3) -> Vec<Point3> {
        let klo = voxel_key(lo, self.voxel_size);
        let khi = voxel_key(hi, self.voxel_size);
        voxel::sorted_centroids(
            self.cells
                .iter()
                .filter(|(k, _)| (0..3).all(|a| klo[a] <= k[a] && k[a] <= khi[a])),
        )
    }

    /// Registers `scan` against the map and merges it.
    pub fn insert_scan(
        &mut self,
        scan: &Scan,
        mount: &RigidTransform3,
        icp: &IcpParams,
    ) -> Result<Insertion, MappingError> {
        if scan.cloud.is_empty() {
            return Err(MappingError::EmptyScan);
        }
        icp.validate()?;
        let seed = pose2_to_transform3(&scan.seed_pose, mount);

        let seeded = || {
            let placed: Vec<Point3> = scan.cloud.points().iter().map(|p| seed.apply(p)).collect();
            voxel::accumulate(&placed, self.voxel_size)
        };
        let mut seeded_cells = None;
        let mut refined = seed;
        let mut outcome = InsertOutcome::SeededOnly;
        if !self.cells.is_empty() {
            let mut source = registration_points(scan.cloud.points(), 2.0 * self.voxel_size);
            let prior = SeedPrior::new(scan, &source, mount, self.voxel_size);
            let icp = &IcpParams {
                max_correspondence_m: prior.radius(self.voxel_size).min(icp.max_correspondence_m),
                ..*icp
            };
            let placed: Vec<Point3> = source.iter().map(|p| seed.apply(p)).collect();
            let (lo, hi) = bounds(&placed);
            let margin = Vector3::repeat(icp.max_correspondence_m);
            let target = self.points_within(&(lo - margin), &(hi + margin));
            if source.len() >= 3 && target.len() >= icp.min_correspondences {
                let tree = KdTree::build(&target);
                // Unless the seed already reproduces the map's representatives,
                // in which case resampling would only add jitter.
                let on_grid = voxel::sorted_cell_centroids(seeded_cells.get_or_insert_with(seeded));
                let identity = RigidTransform3::identity();
                if icp::rmse_below(
                    &on_grid,
                    &tree,
                    &identity,
                    icp.max_correspondence_m,
                    icp.convergence_eps,
                ) {
                    let inverse = seed.inverse();
                    source = on_grid.iter().map(|p| inverse.apply(p)).collect();
                }
                match icp::register(&source, &target, &tree, &seed, icp) {
                    Ok(result) => {
                        // Gains below the convergence threshold are sampling
                        // noise, and corrections the seed's uncertainty cannot
                        // explain are registration failures; either way the
                        // seed is kept exactly.
                        let pose = Pose2::from_transform3(&result.transform.compose(&mount.inverse()));
                        if result.rmse_history[0] - result.rmse >= icp.convergence_eps
                            && prior.admits(&scan.seed_pose, &pose)
                        {
                            refined = result.transform;
                        }
                        outcome = InsertOutcome::Refined(result);
                    }
                    Err(MappingError::CorrespondenceStarvation { .. } | MappingError::TooFewPoints { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
        }

        let merged = match seeded_cells {
            Some(cells) if refined == seed => cells,
            _ if refined == seed => seeded(),
            _ => {
                let placed: Vec<Point3> = scan.cloud.points().iter().map(|p| refined.apply(p)).collect();
                voxel::accumulate(&placed, self.voxel_size)
            }
        };
        for (k, c) in merged {
            self.cells.entry(k).and_modify(|m| m.merge(&c)).or_insert(c);
        }

        let (converged, rmse) = match &outcome {
            InsertOutcome::Refined(r) => (Some(r.converged), Some(r.rmse)),
            InsertOutcome::SeededOnly => (None, None),
        };
        self.poses.push(MapPose {
            timestamp: scan.timestamp,
            pose: Pose2::from_transform3(&refined.compose(&mount.inverse())),
            converged,
            rmse,
        });
        Ok(Insertion { refined, outcome })
    }

    pub fn to_cloud(&self) -> PointCloud {
        PointCloud::from_points(self.points()).expect("map points are finite")
    }

    pub fn write_ply<W: Write>(&self, w: W) -> Result<(), MappingError> {
        Ok(self.to_cloud().write_ply(w)?)
    }

    /// CSV with header `timestamp,x,y,theta,converged,rmse`. Seeded-only
    /// scans leave `converged` and `rmse` empty.
    pub fn write_poses_csv<W: Write>(&self, mut w: W) -> Result<(), MappingError> {
        writeln!(w, "timestamp,x,y,theta,converged,rmse")?;
        for p in &self.poses {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                sig9(p.timestamp),
                sig9(p.pose.x),
                sig9(p.pose.y),
                sig9(p.pose.theta),
                p.converged.map_or(String::new(), |c| c.to_string()),
                p.rmse.map_or(String::new(), sig9),
            )?;
        }
        Ok(())
    }
}

/// 99% quantile of the chi-square distribution with 3 degrees of freedom.
const CORRECTION_GATE: f64 = 11.345;

/// Seed pose uncertainty, floored at a quarter voxel of displacement at the
/// scan's typical range so that exact seeds still admit sampling-level
/// corrections.
struct SeedPrior {
    cov: Matrix3<f64>,
    /// RMS horizontal distance of the scan points from the robot origin.
    reach: f64,
}

impl SeedPrior {
    fn new(scan: &Scan, source: &[Point3], mount: &RigidTransform3, voxel_size: f64) -> Self {
        let reach = (source.iter().map(|p| mount.apply(p).xy().norm_squared()).sum::<f64>()
            / source.len().max(1) as f64)
            .sqrt()
            .max(voxel_size);
        let floor = voxel_size / 4.0;
        let cov = scan.seed_cov.matrix()
            + Matrix3::from_diagonal(&Vector3::new(floor * floor, floor * floor, (floor / reach).powi(2)));
        Self { cov, reach }
    }

    /// Three standard deviations of the seed's displacement at the typical
    /// range, plus two voxels of sampling slack.
    fn radius(&self, voxel_size: f64) -> f64 {
        let sigma_xy = SymmetricEigen::new(self.cov.fixed_view::<2, 2>(0, 0).into_owned())
            .eigenvalues
            .max()
            .sqrt();
        3.0 * (sigma_xy + self.reach * self.cov[(2, 2)].sqrt()) + 2.0 * voxel_size
    }

    fn admits(&self, seed: &Pose2, refined: &Pose2) -> bool {
        let d = Vector3::new(refined.x - seed.x, refined.y - seed.y, wrap(refined.theta - seed.theta));
        self.cov
            .try_inverse()
            .is_some_and(|inv| (d.transpose() * inv * d)[0] <= CORRECTION_GATE)
    }
}

/// Voxel centroids on a grid tilted against every axis the scan or the map
/// is likely to share. Centroids of a grid aligned with the map's would sit
/// on the map's own lattice (or half a cell off it) and pin ICP to that
/// alignment instead of the geometry. The grid is coarser than the map's to
/// keep registration within the frame budget.
fn registration_points(points: &[Point3], cell: f64) -> Vec<Point3> {
    let tilt = Rotation3::from_euler_angles(0.61, 0.37, 0.83);
    let tilted: Vec<Point3> = points.iter().map(|p| tilt * p).collect();
    let inverse = tilt.inverse();
    voxel::sorted_cell_centroids(&voxel::accumulate(&tilted, cell))
        .into_iter()
        .map(|p| inverse * p)
        .collect()
}

fn bounds(points: &[Point3]) -> (Point3, Point3) {
    points.iter().fold(
        (Point3::repeat(f64::INFINITY), Point3::repeat(f64::NEG_INFINITY)),
        |(lo, hi), p| (lo.inf(p), hi.sup(p)),
    )
}

/// Distance statistics of `points` to the nearest surface of `world`.
/// Outliers are points farther than `outlier_threshold`.
pub fn surface_error(points: &[Point3], world: &World, outlier_threshold: f64) -> Result<MapErrorStats, MappingError> {
    if points.is_empty() {
        return Err(MappingError::EmptyMap);
    }
    let mut d: Vec<f64> = points.iter().map(|p| world.surface_distance(p)).collect();
    let n = d.len();
    let mean = d.iter().sum::<f64>() / n as f64;
    let outliers = d.iter().filter(|&&x| x > outlier_threshold).count();
    d.sort_unstable_by(f64::total_cmp);
    let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1;
    Ok(MapErrorStats {
        mean_abs_m: mean,
        p95_abs_m: d[rank],
        outlier_fraction: outliers as f64 / n as f64,
        points: n,
    })
}

/// [`surface_error`] over the map representatives, with outliers beyond
/// three voxels.
pub fn map_error(map: &GlobalMap, world: &World) -> Result<MapErrorStats, MappingError> {
    surface_error(&map.points(), world, 3.0 * map.voxel_size)
}
