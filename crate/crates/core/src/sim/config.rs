//! Scenario configuration as a TOML document.
//!
//! Every section and field is optional and falls back to the default
//! scenario; unknown fields are rejected. Overrides use dotted keys, e.g.
//! `rates.ble_hz=10` or `trajectory.speed=0.5`.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{camera_mount, Aabb, DepthNoise, FloorRect, SimError, TrajectorySpec, World};
use crate::ble::{Beacon, BeaconMap, EkfNoise, PathLossParams};
use crate::fmt::round9;
use crate::geometry::{CameraIntrinsics, RigidTransform3};
use crate::mapping::IcpParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("bad override {0:?}: expected key=value")]
    Override(String),
    #[error("invalid config value for {key}: {msg}")]
    Invalid { key: String, msg: String },
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn invalid(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Seconds of simulated time.
    pub duration: f64,
    /// Height of the BLE receiver above the floor, meters.
    pub receiver_height: f64,
    pub world: WorldConfig,
    pub beacons: BeaconConfig,
    pub trajectory: TrajectorySpec,
    pub camera: CameraConfig,
    pub rates: Rates,
    pub noise: NoiseConfig,
    pub ekf: EkfConfig,
    pub mapping: MappingConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub floor: FloorRect,
    /// Height of the perimeter walls; 0 leaves the floor open.
    pub wall_height: f64,
    pub wall_thickness: f64,
    pub boxes: Vec<Aabb>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeaconConfig {
    /// Number of beacons placed uniformly at random over the floor.
    pub count: usize,
    pub height: f64,
    pub path_loss: PathLossParams,
    /// Explicit positions; when nonempty, `count` and `height` are ignored.
    pub positions: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MountConfig {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub roll: f64,
    /// Positive tilts the optical axis toward the floor.
    pub pitch: f64,
    pub yaw: f64,
}

impl MountConfig {
    pub fn transform(&self) -> RigidTransform3 {
        camera_mount(
            nalgebra::Vector3::new(self.x, self.y, self.z),
            self.roll,
            self.pitch,
            self.yaw,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraConfig {
    pub intrinsics: CameraIntrinsics,
    pub mount: MountConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Rates {
    pub depth_hz: f64,
    pub ble_hz: f64,
    pub odom_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Rot-trans-rot odometry noise, shared by the simulator and the filter.
    pub odometry_alphas: [f64; 4],
    pub depth: DepthNoise,
    /// Emit a bearing to every beacon within `bearing_max_range` at each BLE tick.
    pub bearings: bool,
    pub bearing_sigma: f64,
    pub bearing_max_range: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EkfConfig {
    pub gate_chi2: f64,
    /// Standard deviations of the initial estimate (x, y, θ), centered on the true start.
    pub initial_sigma: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeedSource {
    Ekf,
    Truth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MappingConfig {
    /// Render depth frames and assemble the map. When false no depth events are generated.
    pub enabled: bool,
    pub voxel_size: f64,
    pub seed_source: SeedSource,
    pub icp: IcpParams,
}

impl Default for WorldConfig {
    fn default() -> Self {
        let b = |min: [f64; 3], max: [f64; 3]| Aabb { min, max };
        Self {
            floor: FloorRect {
                min_x: 0.0,
                max_x: 20.0,
                min_y: 0.0,
                max_y: 10.0,
            },
            wall_height: 2.5,
            wall_thickness: 0.2,
            boxes: vec![
                // central shelf block
                b([5.0, 4.0, 0.0], [15.0, 6.0, 1.8]),
                // pallet, end cap and display table near the walls
                b([8.0, 0.3, 0.0], [9.0, 0.9, 0.8]),
                b([19.2, 4.0, 0.0], [19.7, 6.0, 1.2]),
                b([11.0, 9.2, 0.0], [12.5, 9.7, 1.0]),
            ],
        }
    }
}

impl Default for BeaconConfig {
    fn default() -> Self {
        Self {
            count: 20,
            height: 2.5,
            path_loss: PathLossParams::default(),
            positions: Vec::new(),
        }
    }
}

impl Default for MountConfig {
    fn default() -> Self {
        Self {
            x: 0.2,
            y: 0.0,
            z: 0.5,
            roll: 0.0,
            pitch: 15f64.to_radians(),
            yaw: 0.0,
        }
    }
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            intrinsics: CameraIntrinsics::from_fov(640, 480, 70f64.to_radians(), 10.0),
            mount: MountConfig::default(),
        }
    }
}

impl Default for Rates {
    fn default() -> Self {
        Self {
            depth_hz: 9.0,
            ble_hz: 10.0,
            odom_hz: 20.0,
        }
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            odometry_alphas: EkfNoise::default().alphas,
            depth: DepthNoise::default(),
            bearings: true,
            bearing_sigma: 0.05,
            bearing_max_range: 8.0,
        }
    }
}

impl Default for EkfConfig {
    fn default() -> Self {
        Self {
            gate_chi2: EkfNoise::default().gate_chi2,
            initial_sigma: [0.1, 0.1, 0.05],
        }
    }
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            voxel_size: 0.05,
            seed_source: SeedSource::Ekf,
            icp: IcpParams::default(),
        }
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            duration: 120.0,
            receiver_height: 0.3,
            world: WorldConfig::default(),
            beacons: BeaconConfig::default(),
            trajectory: TrajectorySpec::default(),
            camera: CameraConfig::default(),
            rates: Rates::default(),
            noise: NoiseConfig::default(),
            ekf: EkfConfig::default(),
            mapping: MappingConfig::default(),
        }
    }
}

fn positive(key: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(key, format!("must be positive, got {v}")))
    }
}

fn nonnegative(key: &str, v: f64) -> Result<(), ConfigError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(key, format!("must be nonnegative, got {v}")))
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Reads `path` (or starts from the defaults), applies dotted-key
    /// `overrides` and an optional seed, then validates.
    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self, ConfigError> {
        let mut doc: toml::Table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.display().to_string(),
                    source,
                })?;
                toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        if let Some(s) = seed {
            doc.insert("seed".into(), toml::Value::Integer(s as i64));
        }
        let cfg: Self = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        nonnegative("duration", self.duration)?;
        nonnegative("receiver_height", self.receiver_height)?;
        let w = &self.world;
        let f = &w.floor;
        if !(f.min_x < f.max_x && f.min_y < f.max_y) {
            return Err(invalid("world.floor", "needs min < max on both axes"));
        }
        nonnegative("world.wall_height", w.wall_height)?;
        if w.wall_height > 0.0 {
            positive("world.wall_thickness", w.wall_thickness)?;
        }
        for (i, b) in w.boxes.iter().enumerate() {
            b.validate()
                .map_err(|e| invalid(&format!("world.boxes[{i}]"), e.to_string()))?;
        }
        let b = &self.beacons;
        b.path_loss
            .validate()
            .map_err(|e| invalid("beacons.path_loss", e.to_string()))?;
        for (i, p) in b.positions.iter().enumerate() {
            if !f.contains_xy(p[0], p[1]) || !p[2].is_finite() {
                return Err(invalid(&format!("beacons.positions[{i}]"), "must lie over the floor"));
            }
        }
        if !b.height.is_finite() {
            return Err(invalid("beacons.height", "must be finite"));
        }
        self.trajectory
            .validate()
            .map_err(|e| invalid("trajectory", e.to_string()))?;
        for (i, p) in self.trajectory.waypoints.iter().enumerate() {
            if !f.contains_xy(p[0], p[1]) {
                return Err(invalid(&format!("trajectory.waypoints[{i}]"), "must lie on the floor"));
            }
        }
        self.camera
            .intrinsics
            .validate()
            .map_err(|e| invalid("camera.intrinsics", e.to_string()))?;
        positive("rates.depth_hz", self.rates.depth_hz)?;
        positive("rates.ble_hz", self.rates.ble_hz)?;
        positive("rates.odom_hz", self.rates.odom_hz)?;
        for (i, a) in self.noise.odometry_alphas.iter().enumerate() {
            nonnegative(&format!("noise.odometry_alphas[{i}]"), *a)?;
        }
        nonnegative("noise.depth.sigma_rel", self.noise.depth.sigma_rel)?;
        if self.noise.bearings {
            positive("noise.bearing_sigma", self.noise.bearing_sigma)?;
            positive("noise.bearing_max_range", self.noise.bearing_max_range)?;
        }
        positive("ekf.gate_chi2", self.ekf.gate_chi2)?;
        for (i, s) in self.ekf.initial_sigma.iter().enumerate() {
            nonnegative(&format!("ekf.initial_sigma[{i}]"), *s)?;
        }
        positive("mapping.voxel_size", self.mapping.voxel_size)?;
        self.mapping
            .icp
            .validate()
            .map_err(|e| invalid("mapping.icp", e.to_string()))?;
        Ok(())
    }

    pub fn ekf_noise(&self) -> EkfNoise {
        EkfNoise {
            alphas: self.noise.odometry_alphas,
            gate_chi2: self.ekf.gate_chi2,
        }
    }

    /// Builds the world, drawing random beacon positions from `rng`.
    /// Positions are rounded to the precision of the exported beacon table.
    pub fn build_world(&self, rng: &mut ChaCha8Rng) -> Result<World, SimError> {
        let f = self.world.floor;
        let mut boxes = Vec::new();
        let (h, t) = (self.world.wall_height, self.world.wall_thickness);
        if h > 0.0 {
            boxes.push(Aabb::new([f.min_x - t, f.min_y - t, 0.0], [f.min_x, f.max_y + t, h])?);
            boxes.push(Aabb::new([f.max_x, f.min_y - t, 0.0], [f.max_x + t, f.max_y + t, h])?);
            boxes.push(Aabb::new([f.min_x, f.min_y - t, 0.0], [f.max_x, f.min_y, h])?);
            boxes.push(Aabb::new([f.min_x, f.max_y, 0.0], [f.max_x, f.max_y + t, h])?);
        }
        boxes.extend(self.world.boxes.iter().copied());

        let positions: Vec<[f64; 3]> = if self.beacons.positions.is_empty() {
            (0..self.beacons.count)
                .map(|_| {
                    [
                        rng.random_range(f.min_x..=f.max_x),
                        rng.random_range(f.min_y..=f.max_y),
                        self.beacons.height,
                    ]
                })
                .collect()
        } else {
            self.beacons.positions.clone()
        };
        let width = positions.len().saturating_sub(1).to_string().len().max(2);
        let beacons = positions
            .iter()
            .enumerate()
            .map(|(i, p)| Beacon {
                id: format!("b{i:0width$}"),
                position: nalgebra::Vector3::new(round9(p[0]), round9(p[1]), round9(p[2])),
                path_loss: self.beacons.path_loss,
            })
            .collect();
        World::new(f, boxes, BeaconMap::new(beacons)?)
    }
}

/// Sets `key=value` in `doc`, creating intermediate tables. The value is
/// parsed as a TOML value, falling back to a bare string.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(assignment.to_string()))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(assignment.to_string()));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut table = doc;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| invalid(key, format!("{p} is not a section")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
