use nalgebra::{Matrix3, RowVector3, Vector3};
use serde::{Deserialize, Serialize};

use super::pathloss::{expected_rssi, rssi_jacobian};
use super::{Beacon, BeaconMap, BearingObservation, BleError, Observation, OdometryDelta, RssiObservation};
use crate::geometry::{wrap, Covariance3, Pose2};

/// Horizontal separation below which a bearing is undefined.
const BEARING_MIN_RANGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfState {
    pub mean: Pose2,
    pub cov: Covariance3,
    pub last_update: f64,
}

impl EkfState {
    pub fn new(mean: Pose2, cov: Covariance3, last_update: f64) -> Self {
        Self { mean, cov, last_update }
    }

    fn check_time(&self, t: f64) -> Result<(), BleError> {
        if !(t >= self.last_update) {
            return Err(BleError::TimestampRegression {
                last: self.last_update,
                got: t,
            });
        }
        Ok(())
    }
}

/// Odometry noise coefficients (rot-trans-rot model) and the innovation gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EkfNoise {
    pub alphas: [f64; 4],
    pub gate_chi2: f64,
}

impl Default for EkfNoise {
    fn default() -> Self {
        Self {
            alphas: [0.05, 0.02, 0.02, 0.01],
            gate_chi2: 6.63,
        }
    }
}

impl EkfNoise {
    pub fn validate(&self) -> Result<(), BleError> {
        if self.alphas.iter().any(|a| !(*a >= 0.0 && a.is_finite())) || !(self.gate_chi2 > 0.0) {
            return Err(BleError::InvalidParams("alphas must be >= 0 and gate_chi2 > 0".into()));
        }
        Ok(())
    }
}

/// Noise-free odometry motion model.
pub fn dead_reckon(pose: &Pose2, odo: &OdometryDelta) -> Pose2 {
    let heading = pose.theta + odo.d_rot1;
    Pose2::new(
        pose.x + odo.d_trans * heading.cos(),
        pose.y + odo.d_trans * heading.sin(),
        heading + odo.d_rot2,
    )
}

/// Rot-trans-rot prediction with covariance `G·P·Gᵀ + V·M·Vᵀ`.
pub fn ekf_predict(state: &EkfState, odo: &OdometryDelta, noise: &EkfNoise) -> Result<EkfState, BleError> {
    state.check_time(odo.timestamp)?;
    let [a1, a2, a3, a4] = noise.alphas;
    let (r1, t, r2) = (odo.d_rot1, odo.d_trans, odo.d_rot2);
    let heading = state.mean.theta + r1;
    let (s, c) = heading.sin_cos();

    let g = Matrix3::new(1.0, 0.0, -t * s, 0.0, 1.0, t * c, 0.0, 0.0, 1.0);
    let v = Matrix3::new(-t * s, c, 0.0, t * c, s, 0.0, 1.0, 0.0, 1.0);
    let m = Matrix3::from_diagonal(&Vector3::new(
        a1 * r1 * r1 + a2 * t * t,
        a3 * t * t + a4 * (r1 * r1 + r2 * r2),
        a1 * r2 * r2 + a2 * t * t,
    ));
    let p = state.cov.matrix();
    let cov = g * p * g.transpose() + v * m * v.transpose();
    Ok(EkfState {
        mean: dead_reckon(&state.mean, odo),
        cov: Covariance3::symmetrized(cov),
        last_update: odo.timestamp,
    })
}

/// Scalar EKF correction with chi-square gating and a Joseph-form covariance update.
/// Returns `None` when the measurement is gated or carries no information.
fn scalar_update(
    state: &EkfState,
    innovation: f64,
    h: &RowVector3<f64>,
    variance: f64,
    gate_chi2: f64,
    timestamp: f64,
) -> Option<EkfState> {
    let p = state.cov.matrix();
    let pht: Vector3<f64> = p * h.transpose();
    let s = (h * pht)[0] + variance;
    if !(s > f64::EPSILON * (1.0 + variance)) {
        return None;
    }
    if innovation * innovation / s > gate_chi2 {
        return None;
    }
    let k = pht / s;
    let i_kh = Matrix3::identity() - k * h;
    let cov = i_kh * p * i_kh.transpose() + k * k.transpose() * variance;
    let dx = k * innovation;
    Some(EkfState {
        mean: Pose2::new(state.mean.x + dx[0], state.mean.y + dx[1], state.mean.theta + dx[2]),
        cov: Covariance3::symmetrized(cov),
        last_update: timestamp,
    })
}

/// dBm-domain RSSI correction. Returns the new state and whether the
/// measurement was gated (state returned unchanged).
pub fn ekf_update_rssi(
    state: &EkfState,
    obs: &RssiObservation,
    beacon: &Beacon,
    receiver_height: f64,
    gate_chi2: f64,
) -> Result<(EkfState, bool), BleError> {
    if obs.beacon_id != beacon.id {
        return Err(BleError::BeaconMismatch {
            expected: beacon.id.clone(),
            got: obs.beacon_id.clone(),
        });
    }
    state.check_time(obs.timestamp)?;
    let innovation = obs.rssi - expected_rssi(&state.mean, beacon, receiver_height);
    let h = rssi_jacobian(&state.mean, beacon, receiver_height);
    let variance = beacon.path_loss.sigma_sh * beacon.path_loss.sigma_sh;
    Ok(
        match scalar_update(state, innovation, &h, variance, gate_chi2, obs.timestamp) {
            Some(s) => (s, false),
            None => (*state, true),
        },
    )
}

/// Bearing correction with `h = wrap(atan2(by − y, bx − x) − θ)`.
pub fn ekf_update_bearing(
    state: &EkfState,
    obs: &BearingObservation,
    beacon: &Beacon,
    gate_chi2: f64,
) -> Result<(EkfState, bool), BleError> {
    if obs.beacon_id != beacon.id {
        return Err(BleError::BeaconMismatch {
            expected: beacon.id.clone(),
            got: obs.beacon_id.clone(),
        });
    }
    if !(obs.sigma > 0.0) {
        return Err(BleError::InvalidParams("bearing sigma must be positive".into()));
    }
    state.check_time(obs.timestamp)?;
    let qx = beacon.position.x - state.mean.x;
    let qy = beacon.position.y - state.mean.y;
    let q2 = qx * qx + qy * qy;
    if q2 < BEARING_MIN_RANGE * BEARING_MIN_RANGE {
        return Ok((*state, true));
    }
    let predicted = wrap(qy.atan2(qx) - state.mean.theta);
    let innovation = wrap(obs.bearing - predicted);
    let h = RowVector3::new(qy / q2, -qx / q2, -1.0);
    Ok(
        match scalar_update(state, innovation, &h, obs.sigma * obs.sigma, gate_chi2, obs.timestamp) {
            Some(s) => (s, false),
            None => (*state, true),
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateOutcome {
    Predicted,
    Applied,
    Gated,
}

/// Estimated pose after all observations sharing timestamp `t` were applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateRow {
    pub t: f64,
    pub pose: Pose2,
    pub cov: Covariance3,
}

/// Single owner of an EKF state, applying observations against a beacon map.
#[derive(Debug, Clone)]
pub struct Localizer {
    state: EkfState,
    beacons: BeaconMap,
    noise: EkfNoise,
    receiver_height: f64,
    pub gated_rssi: usize,
    pub gated_bearing: usize,
}

impl Localizer {
    pub fn new(initial: EkfState, beacons: BeaconMap, noise: EkfNoise, receiver_height: f64) -> Result<Self, BleError> {
        noise.validate()?;
        Ok(Self {
            state: initial,
            beacons,
            noise,
            receiver_height,
            gated_rssi: 0,
            gated_bearing: 0,
        })
    }

    pub fn state(&self) -> &EkfState {
        &self.state
    }

    pub fn beacons(&self) -> &BeaconMap {
        &self.beacons
    }

    pub fn apply(&mut self, obs: &Observation) -> Result<UpdateOutcome, BleError> {
        let gated = match obs {
            Observation::Odometry(o) => {
                self.state = ekf_predict(&self.state, o, &self.noise)?;
                return Ok(UpdateOutcome::Predicted);
            }
            Observation::Rssi(o) => {
                let beacon = self.beacons.get(&o.beacon_id)?;
                let (s, gated) = ekf_update_rssi(&self.state, o, beacon, self.receiver_height, self.noise.gate_chi2)?;
                self.state = s;
                self.gated_rssi += usize::from(gated);
                gated
            }
            Observation::Bearing(o) => {
                let beacon = self.beacons.get(&o.beacon_id)?;
                let (s, gated) = ekf_update_bearing(&self.state, o, beacon, self.noise.gate_chi2)?;
                self.state = s;
                self.gated_bearing += usize::from(gated);
                gated
            }
        };
        Ok(if gated {
            UpdateOutcome::Gated
        } else {
            UpdateOutcome::Applied
        })
    }

    pub fn row(&self, t: f64) -> EstimateRow {
        EstimateRow {
            t,
            pose: self.state.mean,
            cov: self.state.cov,
        }
    }

    /// Applies a time-ordered stream, emitting the initial row and then one
    /// row per distinct timestamp once every observation at that time is in.
    pub fn replay(&mut self, obs: &[Observation]) -> Result<Vec<EstimateRow>, BleError> {
        let mut rows = vec![self.row(self.state.last_update)];
        for (k, o) in obs.iter().enumerate() {
            self.apply(o)?;
            if closes_group(obs, k) {
                rows.push(self.row(o.timestamp()));
            }
        }
        Ok(rows)
    }
}

/// True when `obs[k]` is the last observation carrying its timestamp.
pub(crate) fn closes_group(obs: &[Observation], k: usize) -> bool {
    obs.get(k + 1).is_none_or(|next| next.timestamp() != obs[k].timestamp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ble::PathLossParams;
    use std::f64::consts::FRAC_PI_2;

    fn beacon(id: &str, x: f64, y: f64, z: f64) -> Beacon {
        Beacon {
            id: id.into(),
            position: Vector3::new(x, y, z),
            path_loss: PathLossParams::default(),
        }
    }

    fn state(x: f64, y: f64, theta: f64, var: f64) -> EkfState {
        EkfState::new(
            Pose2::new(x, y, theta),
            Covariance3::from_diagonal(var, var, var).unwrap(),
            0.0,
        )
    }

    #[test]
    fn zero_motion_zero_noise_is_identity() {
        let s = state(1.0, 2.0, 0.3, 0.1);
        let noise = EkfNoise {
            alphas: [0.0; 4],
            gate_chi2: 6.63,
        };
        let out = ekf_predict(&s, &OdometryDelta::zero(0.5), &noise).unwrap();
        assert_eq!(out.mean, s.mean);
        assert_eq!(out.cov, s.cov);
        assert_eq!(out.last_update, 0.5);
    }

    #[test]
    fn zero_motion_with_noise_keeps_mean() {
        let s = state(1.0, 2.0, 0.3, 0.1);
        let out = ekf_predict(&s, &OdometryDelta::zero(0.1), &EkfNoise::default()).unwrap();
        assert_eq!(out.mean, s.mean);
        for i in 0..3 {
            assert!(out.cov.matrix()[(i, i)] >= s.cov.matrix()[(i, i)]);
        }
    }

    #[test]
    fn straight_line_motion() {
        let s = state(1.0, 2.0, 0.0, 0.0);
        let odo = OdometryDelta {
            d_rot1: 0.0,
            d_trans: 1.0,
            d_rot2: 0.0,
            timestamp: 1.0,
        };
        let out = ekf_predict(&s, &odo, &EkfNoise::default()).unwrap();
        assert_eq!(out.mean, Pose2::new(2.0, 2.0, 0.0));
        // translation noise shows up along x only
        assert!(out.cov.matrix()[(0, 0)] > 0.0);
    }

    #[test]
    fn predict_rejects_time_regression() {
        let mut s = state(0.0, 0.0, 0.0, 0.1);
        s.last_update = 2.0;
        assert!(matches!(
            ekf_predict(&s, &OdometryDelta::zero(1.0), &EkfNoise::default()),
            Err(BleError::TimestampRegression { .. })
        ));
    }

    #[test]
    fn predict_jacobians_match_finite_differences() {
        let s = state(0.5, -1.0, 0.7, 0.0);
        let odo = OdometryDelta {
            d_rot1: 0.2,
            d_trans: 0.8,
            d_rot2: -0.1,
            timestamp: 0.0,
        };
        // Propagate a small state perturbation through the mean model and compare
        // against G·δ, with G extracted from a zero-noise covariance push.
        let h = 1e-6;
        for axis in 0..3 {
            let mut d = [0.0; 3];
            d[axis] = h;
            let p = Pose2::new(s.mean.x + d[0], s.mean.y + d[1], s.mean.theta + d[2]);
            let m = Pose2::new(s.mean.x - d[0], s.mean.y - d[1], s.mean.theta - d[2]);
            let (a, b) = (dead_reckon(&p, &odo), dead_reckon(&m, &odo));
            let col = Vector3::new(a.x - b.x, a.y - b.y, wrap(a.theta - b.theta)) / (2.0 * h);
            let mut e = Matrix3::zeros();
            e[(axis, axis)] = 1.0;
            let pushed = ekf_predict(
                &EkfState::new(s.mean, Covariance3::new(e).unwrap(), 0.0),
                &odo,
                &EkfNoise {
                    alphas: [0.0; 4],
                    gate_chi2: 1.0,
                },
            )
            .unwrap();
            // G e Gᵀ = col colᵀ for a unit axis
            let expected = col * col.transpose();
            assert!((pushed.cov.matrix() - expected).amax() < 1e-6);
        }
    }

    #[test]
    fn zero_innovation_rssi_shrinks_covariance() {
        let b = beacon("a", 4.0, 3.0, 2.5);
        let s = state(0.0, 0.0, 0.0, 1.0);
        let obs = RssiObservation {
            beacon_id: "a".into(),
            rssi: expected_rssi(&s.mean, &b, 0.3),
            timestamp: 0.0,
        };
        let (out, gated) = ekf_update_rssi(&s, &obs, &b, 0.3, 6.63).unwrap();
        assert!(!gated);
        assert_eq!(out.mean, s.mean);
        assert!(out.cov.trace() < s.cov.trace());
    }

    #[test]
    fn outlier_rssi_is_gated() {
        let b = beacon("a", 4.0, 3.0, 2.5);
        let s = state(0.0, 0.0, 0.0, 0.01);
        let obs = RssiObservation {
            beacon_id: "a".into(),
            rssi: expected_rssi(&s.mean, &b, 0.3) + 50.0 * 2.0,
            timestamp: 0.0,
        };
        let (out, gated) = ekf_update_rssi(&s, &obs, &b, 0.3, 6.63).unwrap();
        assert!(gated);
        assert_eq!(out, s);
    }

    #[test]
    fn rssi_beacon_mismatch() {
        let b = beacon("a", 4.0, 3.0, 2.5);
        let obs = RssiObservation {
            beacon_id: "zz".into(),
            rssi: -60.0,
            timestamp: 0.0,
        };
        assert!(matches!(
            ekf_update_rssi(&state(0.0, 0.0, 0.0, 1.0), &obs, &b, 0.3, 6.63),
            Err(BleError::BeaconMismatch { .. })
        ));
    }

    fn bearing(id: &str, value: f64) -> BearingObservation {
        BearingObservation {
            beacon_id: id.into(),
            bearing: value,
            timestamp: 0.0,
            sigma: 0.05,
        }
    }

    #[test]
    fn bearing_geometry() {
        let b = beacon("a", 0.0, 5.0, 2.5);
        let s = state(0.0, 0.0, 0.0, 0.5);
        let (out, gated) = ekf_update_bearing(&s, &bearing("a", FRAC_PI_2), &b, 6.63).unwrap();
        assert!(!gated);
        assert!((out.mean.x - s.mean.x).abs() < 1e-15);
        assert!((out.mean.y - s.mean.y).abs() < 1e-15);
        assert!((out.mean.theta - s.mean.theta).abs() < 1e-15);
        assert!(out.cov.trace() < s.cov.trace());
    }

    #[test]
    fn bearing_contracts_heading() {
        let b = beacon("a", 10.0, 0.0, 2.5);
        let s = EkfState::new(
            Pose2::new(0.0, 0.0, 0.0),
            Covariance3::from_diagonal(1e-6, 1e-6, 0.04).unwrap(),
            0.0,
        );
        // Robot believes it faces +x; the beacon appears 0.1 rad to the right,
        // so the heading should rotate left.
        let obs = bearing("a", -0.1);
        let before = wrap(obs.bearing - 0.0);
        let (out, _) = ekf_update_bearing(&s, &obs, &b, 100.0).unwrap();
        assert!(out.mean.theta > 0.0);
        let after =
            wrap(obs.bearing - wrap((b.position.y - out.mean.y).atan2(b.position.x - out.mean.x) - out.mean.theta));
        assert!(after.abs() < before.abs());
    }

    #[test]
    fn bearing_coincident_with_beacon_is_skipped() {
        let b = beacon("a", 1.0, 1.0, 2.5);
        let s = state(1.0, 1.0 + 1e-7, 0.0, 0.5);
        let (out, gated) = ekf_update_bearing(&s, &bearing("a", 0.3), &b, 6.63).unwrap();
        assert!(gated);
        assert_eq!(out, s);
    }

    #[test]
    fn localizer_reports_unknown_beacons() {
        let map = BeaconMap::new(vec![beacon("a", 0.0, 0.0, 2.5)]).unwrap();
        let mut loc = Localizer::new(state(1.0, 1.0, 0.0, 1.0), map, EkfNoise::default(), 0.3).unwrap();
        let obs = Observation::Rssi(RssiObservation {
            beacon_id: "nope".into(),
            rssi: -60.0,
            timestamp: 0.1,
        });
        assert!(matches!(loc.apply(&obs), Err(BleError::UnknownBeacon(id)) if id == "nope"));
    }

    #[test]
    fn replay_emits_one_row_per_timestamp() {
        let map = BeaconMap::new(vec![beacon("a", 0.0, 0.0, 2.5), beacon("b", 5.0, 0.0, 2.5)]).unwrap();
        let mut loc = Localizer::new(state(1.0, 1.0, 0.0, 1.0), map, EkfNoise::default(), 0.3).unwrap();
        let r = |id: &str, t| {
            Observation::Rssi(RssiObservation {
                beacon_id: id.into(),
                rssi: -65.0,
                timestamp: t,
            })
        };
        let obs = vec![
            Observation::Odometry(OdometryDelta::zero(0.1)),
            r("a", 0.1),
            r("b", 0.1),
            r("a", 0.2),
        ];
        let rows = loc.replay(&obs).unwrap();
        let ts: Vec<f64> = rows.iter().map(|r| r.t).collect();
        assert_eq!(ts, vec![0.0, 0.1, 0.2]);
        assert_eq!(rows[2].pose, loc.state().mean);
    }
}
