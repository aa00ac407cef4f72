//! BLE beacon ranging and EKF localization over planar pose.
//!
//! RSSI measurements are fused in the dBm domain, where log-normal shadowing
//! is Gaussian. Bearings to beacons are consumed as an abstract observation
//! stream. Odometry arrives as rot-trans-rot increments.

mod ekf;
pub mod io;
mod pathloss;
mod trilateration;

pub use ekf::{
    dead_reckon, ekf_predict, ekf_update_bearing, ekf_update_rssi, EkfNoise, EkfState, EstimateRow, Localizer,
    UpdateOutcome,
};
pub use pathloss::{expected_rssi, rssi_jacobian, rssi_to_distance, PathLossParams, D_MIN};
pub use trilateration::{trilaterate_grid, GridFix, GridSpec};

use std::collections::HashMap;

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::GeometryError;

#[derive(Debug, Error)]
pub enum BleError {
    #[error("timestamp {got} precedes last update at {last}")]
    TimestampRegression { last: f64, got: f64 },
    #[error("observation for beacon {got} applied with beacon {expected}")]
    BeaconMismatch { expected: String, got: String },
    #[error("unknown beacon id {0}")]
    UnknownBeacon(String),
    #[error("duplicate beacon id {0}")]
    DuplicateBeacon(String),
    #[error("need observations of at least 3 distinct beacons, got {0}")]
    TooFewBeacons(usize),
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Beacon {
    pub id: String,
    pub position: Vector3<f64>,
    pub path_loss: PathLossParams,
}

/// Beacons with unique ids, kept in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BeaconMap {
    beacons: Vec<Beacon>,
    index: HashMap<String, usize>,
}

impl BeaconMap {
    pub fn new(beacons: Vec<Beacon>) -> Result<Self, BleError> {
        let mut index = HashMap::with_capacity(beacons.len());
        for (i, b) in beacons.iter().enumerate() {
            b.path_loss.validate()?;
            if index.insert(b.id.clone(), i).is_some() {
                return Err(BleError::DuplicateBeacon(b.id.clone()));
            }
        }
        Ok(Self { beacons, index })
    }

    pub fn get(&self, id: &str) -> Result<&Beacon, BleError> {
        self.index
            .get(id)
            .map(|&i| &self.beacons[i])
            .ok_or_else(|| BleError::UnknownBeacon(id.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Beacon> {
        self.beacons.iter()
    }

    pub fn len(&self) -> usize {
        self.beacons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beacons.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RssiObservation {
    pub beacon_id: String,
    pub rssi: f64,
    pub timestamp: f64,
}

/// Bearing from the robot to a beacon, in the robot frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BearingObservation {
    pub beacon_id: String,
    pub bearing: f64,
    pub timestamp: f64,
    pub sigma: f64,
}

/// Rot-trans-rot odometry increment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdometryDelta {
    pub d_rot1: f64,
    pub d_trans: f64,
    pub d_rot2: f64,
    pub timestamp: f64,
}

impl OdometryDelta {
    pub fn zero(timestamp: f64) -> Self {
        Self {
            d_rot1: 0.0,
            d_trans: 0.0,
            d_rot2: 0.0,
            timestamp,
        }
    }
}

/// One entry of a localization stream.
#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    Odometry(OdometryDelta),
    Rssi(RssiObservation),
    Bearing(BearingObservation),
}

impl Observation {
    pub fn timestamp(&self) -> f64 {
        match self {
            Observation::Odometry(o) => o.timestamp,
            Observation::Rssi(o) => o.timestamp,
            Observation::Bearing(o) => o.timestamp,
        }
    }

    /// Tie-break rank among events sharing a timestamp.
    pub fn rank(&self) -> u8 {
        match self {
            Observation::Odometry(_) => 0,
            Observation::Rssi(_) => 1,
            Observation::Bearing(_) => 2,
        }
    }

    pub fn beacon_id(&self) -> Option<&str> {
        match self {
            Observation::Odometry(_) => None,
            Observation::Rssi(o) => Some(&o.beacon_id),
            Observation::Bearing(o) => Some(&o.beacon_id),
        }
    }
}

/// Canonical processing order: timestamp, then odometry < rssi < bearing,
/// then beacon id. The sort is stable for otherwise equal entries.
pub fn sort_observations(obs: &mut [Observation]) {
    obs.sort_by(|a, b| {
        a.timestamp()
            .total_cmp(&b.timestamp())
            .then(a.rank().cmp(&b.rank()))
            .then(a.beacon_id().cmp(&b.beacon_id()))
    });
}
