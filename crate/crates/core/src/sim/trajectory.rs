use serde::{Deserialize, Serialize};

use super::SimError;
use crate::geometry::{wrap, Pose2};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPose {
    pub t: f64,
    pub pose: Pose2,
}

/// Waypoint route driven at constant speed with a bounded turn rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectorySpec {
    pub waypoints: Vec<[f64; 2]>,
    /// m/s
    pub speed: f64,
    /// rad/s
    pub turn_rate: f64,
}

impl Default for TrajectorySpec {
    /// Loop around the central shelf block of the default floor.
    fn default() -> Self {
        Self {
            waypoints: vec![[2.0, 2.0], [18.0, 2.0], [18.0, 8.0], [2.0, 8.0], [2.0, 2.0]],
            speed: 0.4,
            turn_rate: 0.8,
        }
    }
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidTrajectory(m));
        if self.waypoints.len() < 2 {
            return bad(format!("need at least 2 waypoints, got {}", self.waypoints.len()));
        }
        if !(self.speed > 0.0 && self.speed.is_finite()) {
            return bad(format!("speed must be positive, got {}", self.speed));
        }
        if !(self.turn_rate > 0.0 && self.turn_rate.is_finite()) {
            return bad(format!("turn_rate must be positive, got {}", self.turn_rate));
        }
        for (i, w) in self.waypoints.windows(2).enumerate() {
            if !w.iter().flatten().all(|v| v.is_finite()) {
                return bad(format!("waypoint {i} is not finite"));
            }
            if (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]) < 1e-9 {
                return bad(format!("waypoints {i} and {} coincide", i + 1));
            }
        }
        Ok(())
    }

    fn path_length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
            .sum()
    }
}

/// Drives the route from the first waypoint, initially facing the second.
/// Each step turns toward the active waypoint by at most `turn_rate·dt` and
/// advances `speed·dt`. A waypoint is passed once it is within one step; the
/// final one is reached exactly and ends the trajectory.
pub fn sample_trajectory(spec: &TrajectorySpec, dt: f64) -> Result<Vec<TimedPose>, SimError> {
    spec.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SimError::InvalidTrajectory(format!("dt must be positive, got {dt}")));
    }
    let wp = &spec.waypoints;
    let step = spec.speed * dt;
    let max_turn = spec.turn_rate * dt;
    let (mut x, mut y) = (wp[0][0], wp[0][1]);
    let mut heading = (wp[1][1] - y).atan2(wp[1][0] - x);
    let mut target = 1;
    let mut out = vec![TimedPose {
        t: 0.0,
        pose: Pose2::new(x, y, heading),
    }];
    // Generous bound: straight-line steps plus time to loop around every corner.
    let cap = (spec.path_length() / step).ceil() as usize * 4
        + wp.len() * ((std::f64::consts::TAU / max_turn).ceil() as usize + 10);
    for k in 1..=cap {
        let last = target == wp.len() - 1;
        let (tx, ty) = (wp[target][0], wp[target][1]);
        let remaining = (tx - x).hypot(ty - y);
        if last && remaining <= step {
            out.push(TimedPose {
                t: k as f64 * dt,
                pose: Pose2::new(tx, ty, heading),
            });
            return Ok(out);
        }
        let desired = (ty - y).atan2(tx - x);
        heading = wrap(heading + wrap(desired - heading).clamp(-max_turn, max_turn));
        x += step * heading.cos();
        y += step * heading.sin();
        if !last && (tx - x).hypot(ty - y) <= step {
            target += 1;
        }
        out.push(TimedPose {
            t: k as f64 * dt,
            pose: Pose2::new(x, y, heading),
        });
    }
    Err(SimError::InvalidTrajectory(
        "route not completed; turn_rate too small for the waypoint spacing".into(),
    ))
}

/// Piecewise-linear interpolation of uniformly sampled poses; holds the last
/// pose after the end.
#[derive(Debug, Clone)]
pub struct Trajectory {
    samples: Vec<TimedPose>,
}

impl Trajectory {
    pub fn new(samples: Vec<TimedPose>) -> Result<Self, SimError> {
        if samples.is_empty() || samples.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(SimError::InvalidTrajectory(
                "samples must be nonempty with increasing times".into(),
            ));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[TimedPose] {
        &self.samples
    }

    pub fn end_time(&self) -> f64 {
        self.samples[self.samples.len() - 1].t
    }

    pub fn pose_at(&self, t: f64) -> Pose2 {
        let s = &self.samples;
        let i = s.partition_point(|p| p.t <= t);
        if i == 0 {
            return s[0].pose;
        }
        if i == s.len() {
            return s[s.len() - 1].pose;
        }
        let (a, b) = (&s[i - 1], &s[i]);
        interpolate(&a.pose, &b.pose, (t - a.t) / (b.t - a.t))
    }
}

pub(crate) fn interpolate(a: &Pose2, b: &Pose2, f: f64) -> Pose2 {
    if f == 0.0 {
        return *a;
    }
    Pose2::new(
        a.x + f * (b.x - a.x),
        a.y + f * (b.y - a.y),
        a.theta + f * wrap(b.theta - a.theta),
    )
}
