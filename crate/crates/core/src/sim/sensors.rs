use rand::Rng;
use rand_distr::StandardNormal;

use crate::ble::{expected_rssi, Beacon, BearingObservation, OdometryDelta, RssiObservation};
use crate::geometry::{wrap, Pose2};

/// Below this translation the first rotation is folded into the second.
const MIN_TRANSLATION: f64 = 1e-9;

fn gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    sigma * rng.sample::<f64, _>(StandardNormal)
}

/// Noise-free RSSI plus log-normal shadowing.
pub fn simulate_rssi<R: Rng + ?Sized>(
    pose: &Pose2,
    beacon: &Beacon,
    receiver_height: f64,
    timestamp: f64,
    rng: &mut R,
) -> RssiObservation {
    RssiObservation {
        beacon_id: beacon.id.clone(),
        rssi: expected_rssi(pose, beacon, receiver_height) + gaussian(rng, beacon.path_loss.sigma_sh),
        timestamp,
    }
}

/// Robot-frame bearing to `beacon` with Gaussian noise of standard deviation `sigma`.
pub fn simulate_bearing<R: Rng + ?Sized>(
    pose: &Pose2,
    beacon: &Beacon,
    sigma: f64,
    timestamp: f64,
    rng: &mut R,
) -> BearingObservation {
    let truth = (beacon.position.y - pose.y).atan2(beacon.position.x - pose.x) - pose.theta;
    BearingObservation {
        beacon_id: beacon.id.clone(),
        bearing: wrap(truth + gaussian(rng, sigma)),
        timestamp,
        sigma,
    }
}

/// Exact rot-trans-rot decomposition of the motion `prev → curr`.
pub fn decompose_motion(prev: &Pose2, curr: &Pose2) -> (f64, f64, f64) {
    let (dx, dy) = (curr.x - prev.x, curr.y - prev.y);
    let d_trans = dx.hypot(dy);
    let d_rot1 = if d_trans < MIN_TRANSLATION {
        0.0
    } else {
        wrap(dy.atan2(dx) - prev.theta)
    };
    let d_rot2 = wrap(curr.theta - prev.theta - d_rot1);
    (d_rot1, d_trans, d_rot2)
}

/// Odometry increment between consecutive true poses, each component
/// perturbed with the variance of the alpha model used by the filter.
pub fn simulate_odometry<R: Rng + ?Sized>(
    prev: &Pose2,
    curr: &Pose2,
    alphas: &[f64; 4],
    timestamp: f64,
    rng: &mut R,
) -> OdometryDelta {
    let (r1, t, r2) = decompose_motion(prev, curr);
    let [a1, a2, a3, a4] = *alphas;
    let var_r1 = a1 * r1 * r1 + a2 * t * t;
    let var_t = a3 * t * t + a4 * (r1 * r1 + r2 * r2);
    let var_r2 = a1 * r2 * r2 + a2 * t * t;
    OdometryDelta {
        d_rot1: r1 + gaussian(rng, var_r1.sqrt()),
        d_trans: t + gaussian(rng, var_t.sqrt()),
        d_rot2: r2 + gaussian(rng, var_r2.sqrt()),
        timestamp,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ble::{dead_reckon, PathLossParams};
    use nalgebra::Vector3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn beacon(x: f64, y: f64, z: f64, sigma_sh: f64) -> Beacon {
        Beacon {
            id: "b".into(),
            position: Vector3::new(x, y, z),
            path_loss: PathLossParams {
                sigma_sh,
                ..Default::default()
            },
        }
    }

    #[test]
    fn noise_free_rssi() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let at_d0 = simulate_rssi(
            &Pose2::new(1.0, 0.0, 0.0),
            &beacon(0.0, 0.0, 0.3, 0.0),
            0.3,
            0.0,
            &mut rng,
        );
        assert_eq!(at_d0.rssi, -59.0);
        let at_10 = simulate_rssi(
            &Pose2::new(10.0, 0.0, 0.0),
            &beacon(0.0, 0.0, 0.3, 0.0),
            0.3,
            0.0,
            &mut rng,
        );
        assert!((at_10.rssi - (-79.0)).abs() < 1e-12);
    }

    #[test]
    fn rssi_sample_mean_matches_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let b = beacon(3.0, 4.0, 2.5, 2.0);
        let pose = Pose2::new(0.0, 0.0, 0.0);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| simulate_rssi(&pose, &b, 0.3, 0.0, &mut rng).rssi)
            .sum::<f64>()
            / n as f64;
        let truth = expected_rssi(&pose, &b, 0.3);
        assert!((mean - truth).abs() < 3.0 * 2.0 / (n as f64).sqrt());
    }

    #[test]
    fn odometry_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = Pose2::new(1.0, 1.0, 0.4);
        let still = simulate_odometry(&p, &p, &[0.0; 4], 0.1, &mut rng);
        assert_eq!((still.d_rot1, still.d_trans, still.d_rot2), (0.0, 0.0, 0.0));
        let moved = simulate_odometry(
            &Pose2::new(0.0, 0.0, 0.0),
            &Pose2::new(1.0, 0.0, 0.0),
            &[0.0; 4],
            0.1,
            &mut rng,
        );
        assert_eq!((moved.d_rot1, moved.d_trans, moved.d_rot2), (0.0, 1.0, 0.0));
    }

    #[test]
    fn decomposition_inverts_motion_model() {
        let prev = Pose2::new(0.3, -1.0, 2.9);
        let curr = Pose2::new(-0.2, -0.6, -2.8);
        let (r1, t, r2) = decompose_motion(&prev, &curr);
        let back = dead_reckon(
            &prev,
            &OdometryDelta {
                d_rot1: r1,
                d_trans: t,
                d_rot2: r2,
                timestamp: 0.0,
            },
        );
        assert!(back.distance_to(&curr) < 1e-12);
        assert!(wrap(back.theta - curr.theta).abs() < 1e-12);
    }

    #[test]
    fn dead_reckoning_drift_grows_with_path_length() {
        // Mean end-point error over seeds, for a straight path of increasing length.
        let alphas = [0.05, 0.02, 0.02, 0.01];
        let drift = |steps: usize| {
            (0..200u64)
                .map(|seed| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let mut est = Pose2::identity();
                    for k in 0..steps {
                        let a = Pose2::new(k as f64 * 0.1, 0.0, 0.0);
                        let b = Pose2::new((k + 1) as f64 * 0.1, 0.0, 0.0);
                        est = dead_reckon(&est, &simulate_odometry(&a, &b, &alphas, 0.0, &mut rng));
                    }
                    est.distance_to(&Pose2::new(steps as f64 * 0.1, 0.0, 0.0))
                })
                .sum::<f64>()
                / 200.0
        };
        let d: Vec<f64> = [50, 200, 800].iter().map(|&s| drift(s)).collect();
        assert!(d[0] < d[1] && d[1] < d[2], "{d:?}");
    }

    #[test]
    fn bearing_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = beacon(0.0, 5.0, 2.5, 2.0);
        let obs = simulate_bearing(
            &Pose2::new(0.0, 0.0, std::f64::consts::FRAC_PI_2),
            &b,
            0.0,
            1.0,
            &mut rng,
        );
        assert_eq!(obs.bearing, 0.0);
    }
}
