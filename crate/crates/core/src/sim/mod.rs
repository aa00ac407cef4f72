//! Ground-truthed synthetic retail floor: raycast depth, shadowed RSSI,
//! bearings and noisy odometry over a box world, plus the closed-loop
//! scenario runner that feeds them through localization and mapping.

mod config;
mod raycast;
mod scenario;
mod sensors;
mod trajectory;
mod world;

pub use config::{
    apply_override, BeaconConfig, CameraConfig, ConfigError, EkfConfig, MappingConfig, MountConfig, NoiseConfig, Rates,
    ScenarioConfig, SeedSource, WorldConfig,
};
pub use raycast::{raycast_depth, DepthNoise, SimulatedDepth};
pub use scenario::{
    pose_rmse, run_scenario, run_scenario_with, DepthFrame, FrameStats, PoseErrors, RunOptions, SimLog, SimMetrics,
    TrajectoryRow, TRAJECTORY_HEADER,
};
pub use sensors::{decompose_motion, simulate_bearing, simulate_odometry, simulate_rssi};
pub use trajectory::{sample_trajectory, TimedPose, Trajectory, TrajectorySpec};
pub use world::{Aabb, FloorRect, World};

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::ble::BleError;
use crate::depth::DepthError;
use crate::geometry::{GeometryError, RigidTransform3};
use crate::mapping::MappingError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid world: {0}")]
    InvalidWorld(String),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("no estimate timestamp matches the reference trajectory")]
    NoMatchedTimestamps,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ble(#[from] BleError),
    #[error(transparent)]
    Depth(#[from] DepthError),
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Robot-from-camera transform for a camera at `position` (robot frame:
/// x forward, y left, z up). With zero angles the optical axis points along
/// robot +x, image x to the right and image y down; `roll`, `pitch` and `yaw`
/// then rotate the camera about robot x, y and z. Positive pitch looks down.
pub fn camera_mount(position: Vector3<f64>, roll: f64, pitch: f64, yaw: f64) -> RigidTransform3 {
    #[rustfmt::skip]
    let optical = Matrix3::new(
        0.0, 0.0, 1.0,
        -1.0, 0.0, 0.0,
        0.0, -1.0, 0.0,
    );
    let body = RigidTransform3::from_euler(position, roll, pitch, yaw);
    RigidTransform3::new(body.rotation() * optical, position).expect("product of rotations is a rotation")
}
