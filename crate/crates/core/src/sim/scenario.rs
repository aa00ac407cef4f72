use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{ScenarioConfig, SeedSource};
use super::raycast::SimulatedDepth;
use super::sensors::{simulate_bearing, simulate_odometry, simulate_rssi};
use super::trajectory::{interpolate, sample_trajectory, TimedPose, Trajectory};
use super::{SimError, World};
use crate::ble::io::{InitialEstimate, ObservationLog};
use crate::ble::{
    dead_reckon, sort_observations, BearingObservation, EkfState, EstimateRow, Localizer, Observation, OdometryDelta,
    RssiObservation,
};
use crate::depth::{back_project, DepthMap, DepthProvider};
use crate::fmt::{round9, sig9};
use crate::geometry::{pose2_to_transform3, wrap, Covariance3, Pose2, RigidTransform3};
use crate::mapping::{map_error, voxel_downsample, GlobalMap, InsertOutcome, MapErrorStats, Scan};

/// Truth is sampled this finely and interpolated at event times.
const TRUTH_DT: f64 = 0.01;

// Independent noise streams per channel, derived from the master seed.
const STREAM_WORLD: u64 = 0;
const STREAM_ODOMETRY: u64 = 1;
const STREAM_RSSI: u64 = 2;
const STREAM_BEARING: u64 = 3;
const STREAM_DEPTH: u64 = 4;

fn stream(seed: u64, channel: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(channel);
    rng
}

pub const TRAJECTORY_HEADER: &str = "t,truth_x,truth_y,truth_theta,est_x,est_y,est_theta,cov_trace";

/// State at the end of one timestamp at which the filter received data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub truth: Pose2,
    pub estimate: EstimateRow,
    pub dead_reckoning: Pose2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoseErrors {
    pub rmse_xy_m: f64,
    pub rmse_theta_rad: f64,
    pub max_xy_m: f64,
    pub matched: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct FrameStats {
    pub depth_frames: usize,
    pub refined: usize,
    pub seeded_only: usize,
    /// Frames with no valid depth, which are not inserted.
    pub empty: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimMetrics {
    pub seed: u64,
    pub duration: f64,
    pub fusion: PoseErrors,
    pub dead_reckoning: PoseErrors,
    pub final_position_error_m: f64,
    pub gated_rssi: usize,
    pub gated_bearing: usize,
    pub observations: usize,
    pub frames: FrameStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map: Option<MapErrorStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map_voxels: Option<usize>,
}

/// A rendered depth frame with the poses around it.
#[derive(Debug, Clone)]
pub struct DepthFrame {
    pub t: f64,
    pub truth: Pose2,
    pub seed: Pose2,
    pub seed_cov: Covariance3,
    pub depth: DepthMap,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Retain up to this many depth frames in the log.
    pub keep_depth_frames: usize,
}

#[derive(Debug, Clone)]
pub struct SimLog {
    pub config: ScenarioConfig,
    pub world: World,
    pub mount: RigidTransform3,
    pub rows: Vec<TrajectoryRow>,
    pub log: ObservationLog,
    pub map: Option<GlobalMap>,
    pub depth_frames: Vec<DepthFrame>,
    pub metrics: SimMetrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Channel {
    Odometry,
    Ble,
    Depth,
}

/// Event times `k / rate` for `k ≥ 1` up to `duration`, rounded to nine digits.
fn event_times(rate: f64, duration: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut k = 1u64;
    loop {
        let t = k as f64 / rate;
        if t > duration * (1.0 + 1e-12) {
            return out;
        }
        out.push(round9(t));
        k += 1;
    }
}

fn quantize_pose(p: &Pose2) -> Pose2 {
    Pose2::new(round9(p.x), round9(p.y), round9(p.theta))
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<SimLog, SimError> {
    run_scenario_with(config, &RunOptions::default())
}

/// Runs the closed loop on a single timeline. Events are processed by
/// timestamp with ties in the order odometry, RSSI, bearing, depth. Every
/// observation is rounded to its serialized precision before the filter
/// sees it, so replaying the exported log reproduces the estimates exactly.
pub fn run_scenario_with(config: &ScenarioConfig, options: &RunOptions) -> Result<SimLog, SimError> {
    config.validate()?;
    let world = config.build_world(&mut stream(config.seed, STREAM_WORLD))?;
    let truth = Trajectory::new(sample_trajectory(&config.trajectory, TRUTH_DT)?)?;
    let mount = config.camera.mount.transform();
    let intr = config.camera.intrinsics;
    let noise = config.ekf_noise();

    let mut rng_odo = stream(config.seed, STREAM_ODOMETRY);
    let mut rng_rssi = stream(config.seed, STREAM_RSSI);
    let mut rng_bearing = stream(config.seed, STREAM_BEARING);
    let mut depth_source = SimulatedDepth::new(&world, intr, config.noise.depth, stream(config.seed, STREAM_DEPTH));

    let start = quantize_pose(&truth.pose_at(0.0));
    let s = config.ekf.initial_sigma;
    let init = InitialEstimate {
        pose: start,
        variances: [round9(s[0] * s[0]), round9(s[1] * s[1]), round9(s[2] * s[2])],
    };
    let initial_state = EkfState::new(init.pose, init.covariance()?, 0.0);
    let mut localizer = Localizer::new(initial_state, world.beacons().clone(), noise, config.receiver_height)?;
    let mut dr = start;

    let mut map = if config.mapping.enabled {
        Some(GlobalMap::new(config.mapping.voxel_size)?)
    } else {
        None
    };

    let mut events: Vec<(f64, Channel)> = Vec::new();
    events.extend(
        event_times(config.rates.odom_hz, config.duration)
            .into_iter()
            .map(|t| (t, Channel::Odometry)),
    );
    events.extend(
        event_times(config.rates.ble_hz, config.duration)
            .into_iter()
            .map(|t| (t, Channel::Ble)),
    );
    if map.is_some() || options.keep_depth_frames > 0 {
        events.extend(
            event_times(config.rates.depth_hz, config.duration)
                .into_iter()
                .map(|t| (t, Channel::Depth)),
        );
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut rows = vec![TrajectoryRow {
        truth: truth.pose_at(0.0),
        estimate: localizer.row(0.0),
        dead_reckoning: dr,
    }];
    let mut observations = Vec::new();
    let mut frames = FrameStats::default();
    let mut depth_frames = Vec::new();
    let mut last_odom_t = 0.0;

    let mut i = 0;
    while i < events.len() {
        let t = events[i].0;
        let mut filtered = false;
        while i < events.len() && events[i].0 == t {
            match events[i].1 {
                Channel::Odometry => {
                    let raw = simulate_odometry(
                        &truth.pose_at(last_odom_t),
                        &truth.pose_at(t),
                        &config.noise.odometry_alphas,
                        t,
                        &mut rng_odo,
                    );
                    let odo = OdometryDelta {
                        d_rot1: round9(raw.d_rot1),
                        d_trans: round9(raw.d_trans),
                        d_rot2: round9(raw.d_rot2),
                        timestamp: t,
                    };
                    last_odom_t = t;
                    dr = dead_reckon(&dr, &odo);
                    let obs = Observation::Odometry(odo);
                    localizer.apply(&obs)?;
                    observations.push(obs);
                    filtered = true;
                }
                Channel::Ble => {
                    let pose = truth.pose_at(t);
                    let mut tick = Vec::new();
                    for b in world.beacons().iter() {
                        let o = simulate_rssi(&pose, b, config.receiver_height, t, &mut rng_rssi);
                        tick.push(Observation::Rssi(RssiObservation {
                            rssi: round9(o.rssi),
                            ..o
                        }));
                    }
                    if config.noise.bearings {
                        for b in world.beacons().iter() {
                            let range = (b.position.x - pose.x).hypot(b.position.y - pose.y);
                            if range > config.noise.bearing_max_range {
                                continue;
                            }
                            let o = simulate_bearing(&pose, b, config.noise.bearing_sigma, t, &mut rng_bearing);
                            tick.push(Observation::Bearing(BearingObservation {
                                bearing: round9(o.bearing),
                                sigma: round9(o.sigma),
                                ..o
                            }));
                        }
                    }
                    sort_observations(&mut tick);
                    for obs in tick {
                        localizer.apply(&obs)?;
                        observations.push(obs);
                    }
                    filtered = true;
                }
                Channel::Depth => {
                    let truth_pose = truth.pose_at(t);
                    let depth = depth_source.depth(&pose2_to_transform3(&truth_pose, &mount), t);
                    let state = localizer.state();
                    let (seed, seed_cov) = match config.mapping.seed_source {
                        SeedSource::Ekf => (state.mean, state.cov),
                        SeedSource::Truth => (truth_pose, Covariance3::zeros()),
                    };
                    if let Some(map) = map.as_mut() {
                        frames.depth_frames += 1;
                        let cloud = back_project(&depth, depth_source.intrinsics(), None)?;
                        let cloud = voxel_downsample(&cloud, config.mapping.voxel_size);
                        if cloud.is_empty() {
                            frames.empty += 1;
                        } else {
                            let scan = Scan {
                                cloud,
                                seed_pose: seed,
                                seed_cov,
                                timestamp: t,
                            };
                            match map.insert_scan(&scan, &mount, &config.mapping.icp)?.outcome {
                                InsertOutcome::Refined(_) => frames.refined += 1,
                                InsertOutcome::SeededOnly => frames.seeded_only += 1,
                            }
                        }
                    }
                    if depth_frames.len() < options.keep_depth_frames {
                        depth_frames.push(DepthFrame {
                            t,
                            truth: truth_pose,
                            seed,
                            seed_cov,
                            depth,
                        });
                    }
                }
            }
            i += 1;
        }
        if filtered {
            rows.push(TrajectoryRow {
                truth: truth.pose_at(t),
                estimate: localizer.row(t),
                dead_reckoning: dr,
            });
        }
    }

    let truth_track: Vec<TimedPose> = rows
        .iter()
        .map(|r| TimedPose {
            t: r.estimate.t,
            pose: r.truth,
        })
        .collect();
    let est_track: Vec<TimedPose> = rows
        .iter()
        .map(|r| TimedPose {
            t: r.estimate.t,
            pose: r.estimate.pose,
        })
        .collect();
    let dr_track: Vec<TimedPose> = rows
        .iter()
        .map(|r| TimedPose {
            t: r.estimate.t,
            pose: r.dead_reckoning,
        })
        .collect();
    let last = rows[rows.len() - 1];
    let map_stats = match &map {
        Some(m) if !m.is_empty() => Some(map_error(m, &world)?.rounded()),
        _ => None,
    };
    let metrics = SimMetrics {
        seed: config.seed,
        duration: config.duration,
        fusion: pose_rmse(&est_track, &truth_track)?.rounded(),
        dead_reckoning: pose_rmse(&dr_track, &truth_track)?.rounded(),
        final_position_error_m: round9(last.estimate.pose.distance_to(&last.truth)),
        gated_rssi: localizer.gated_rssi,
        gated_bearing: localizer.gated_bearing,
        observations: observations.len(),
        frames,
        map: map_stats,
        map_voxels: map.as_ref().map(GlobalMap::len),
    };
    Ok(SimLog {
        config: config.clone(),
        world,
        mount,
        rows,
        log: ObservationLog {
            init: Some(init),
            observations,
        },
        map,
        depth_frames,
        metrics,
    })
}

impl PoseErrors {
    /// Errors rounded to the nine digits used in text output.
    pub fn rounded(&self) -> PoseErrors {
        PoseErrors {
            rmse_xy_m: round9(self.rmse_xy_m),
            rmse_theta_rad: round9(self.rmse_theta_rad),
            max_xy_m: round9(self.max_xy_m),
            matched: self.matched,
        }
    }
}

/// Position and heading error of `estimated` against `truth`. Estimates at a
/// truth timestamp compare directly; others inside the truth time span
/// compare against the interpolated truth; the rest are skipped.
pub fn pose_rmse(estimated: &[TimedPose], truth: &[TimedPose]) -> Result<PoseErrors, SimError> {
    let (mut sum_xy, mut sum_th, mut max_xy, mut n) = (0.0, 0.0, 0.0f64, 0usize);
    for e in estimated {
        let i = truth.partition_point(|p| p.t < e.t);
        let reference = match truth.get(i) {
            Some(p) if p.t == e.t => p.pose,
            Some(b) if i > 0 => {
                let a = &truth[i - 1];
                interpolate(&a.pose, &b.pose, (e.t - a.t) / (b.t - a.t))
            }
            _ => continue,
        };
        let d2 = (e.pose.x - reference.x).powi(2) + (e.pose.y - reference.y).powi(2);
        sum_xy += d2;
        sum_th += wrap(e.pose.theta - reference.theta).powi(2);
        max_xy = max_xy.max(d2.sqrt());
        n += 1;
    }
    if n == 0 {
        return Err(SimError::NoMatchedTimestamps);
    }
    Ok(PoseErrors {
        rmse_xy_m: (sum_xy / n as f64).sqrt(),
        rmse_theta_rad: (sum_th / n as f64).sqrt(),
        max_xy_m: max_xy,
        matched: n,
    })
}

impl SimLog {
    pub fn estimates(&self) -> Vec<EstimateRow> {
        self.rows.iter().map(|r| r.estimate).collect()
    }

    pub fn write_trajectory_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{TRAJECTORY_HEADER}")?;
        for r in &self.rows {
            let e = &r.estimate;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                sig9(e.t),
                sig9(r.truth.x),
                sig9(r.truth.y),
                sig9(r.truth.theta),
                sig9(e.pose.x),
                sig9(e.pose.y),
                sig9(e.pose.theta),
                sig9(e.cov.trace()),
            )?;
        }
        Ok(())
    }

    pub fn metrics_toml(&self) -> String {
        toml::to_string(&self.metrics).expect("metrics serialize")
    }
}
