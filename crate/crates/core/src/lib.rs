//! Perception and localization stack for a low-cost retail robot.
//!
//! - [`depth`]: depth maps to point clouds and floor heightmaps, plus depth-quality metrics.
//! - [`ble`]: BLE RSSI path-loss ranging, bearing observations and an EKF over planar pose.
//! - [`mapping`]: EKF-seeded ICP registration into a voxel-centroid global map.
//! - [`sim`]: a ground-truthed box-world simulator that drives the whole pipeline.

pub mod ble;
pub mod cloud;
pub mod depth;
pub mod fmt;
pub mod geometry;
pub mod mapping;
pub mod sim;

pub use cloud::PointCloud;
pub use geometry::{CameraIntrinsics, Covariance3, Pose2, RigidTransform3};
