use nalgebra::{RowVector3, Vector3};
use serde::{Deserialize, Serialize};

use super::{Beacon, BleError};
use crate::geometry::Pose2;

/// Distances below this are clamped before the log, so the model stays finite
/// when the robot passes under a beacon.
pub const D_MIN: f64 = 0.1;

/// Log-distance path loss with log-normal shadowing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathLossParams {
    /// RSSI at the reference distance, dBm.
    pub p0_dbm: f64,
    /// Path-loss exponent.
    pub n: f64,
    /// Reference distance, meters.
    pub d0: f64,
    /// Shadowing standard deviation, dB.
    pub sigma_sh: f64,
}

impl Default for PathLossParams {
    fn default() -> Self {
        Self {
            p0_dbm: -59.0,
            n: 2.0,
            d0: 1.0,
            sigma_sh: 2.0,
        }
    }
}

impl PathLossParams {
    pub fn validate(&self) -> Result<(), BleError> {
        if !(self.n > 0.0 && self.n.is_finite())
            || !(self.d0 > 0.0 && self.d0.is_finite())
            || !(self.sigma_sh >= 0.0 && self.sigma_sh.is_finite())
            || !self.p0_dbm.is_finite()
        {
            return Err(BleError::InvalidParams(format!(
                "path loss requires n > 0, d0 > 0, sigma_sh >= 0: {self:?}"
            )));
        }
        Ok(())
    }

    /// Model RSSI at distance `d` (clamped to [`D_MIN`]).
    pub fn rssi_at(&self, d: f64) -> f64 {
        self.p0_dbm - 10.0 * self.n * (d.max(D_MIN) / self.d0).log10()
    }
}

/// Inverts the path-loss model: `d0 · 10^((p0 − rssi) / (10 n))`.
pub fn rssi_to_distance(rssi: f64, pl: &PathLossParams) -> f64 {
    pl.d0 * 10f64.powf((pl.p0_dbm - rssi) / (10.0 * pl.n))
}

fn receiver_offset(pose: &Pose2, beacon: &Beacon, receiver_height: f64) -> Vector3<f64> {
    Vector3::new(pose.x, pose.y, receiver_height) - beacon.position
}

/// Model RSSI for a receiver at `(x, y, receiver_height)`.
pub fn expected_rssi(pose: &Pose2, beacon: &Beacon, receiver_height: f64) -> f64 {
    let d = receiver_offset(pose, beacon, receiver_height).norm();
    beacon.path_loss.rssi_at(d)
}

/// ∂h/∂(x, y, θ) of [`expected_rssi`]. Zero inside the `D_MIN` clamp.
pub fn rssi_jacobian(pose: &Pose2, beacon: &Beacon, receiver_height: f64) -> RowVector3<f64> {
    let off = receiver_offset(pose, beacon, receiver_height);
    let d2 = off.norm_squared();
    if d2 < D_MIN * D_MIN {
        return RowVector3::zeros();
    }
    let k = -10.0 * beacon.path_loss.n / std::f64::consts::LN_10 / d2;
    RowVector3::new(k * off.x, k * off.y, 0.0)
}
