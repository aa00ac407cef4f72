use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::ble::BeaconMap;
use crate::geometry::Point3;

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self, SimError> {
        let b = Self { min, max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let ok = (0..3).all(|a| self.min[a].is_finite() && self.max[a].is_finite() && self.min[a] < self.max[a]);
        if !ok {
            return Err(SimError::InvalidWorld(format!(
                "box needs min < max on every axis: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|a| self.min[a] <= p[a] && p[a] <= self.max[a])
    }

    /// Entry distance along `dir` of the slab-method intersection, if the ray
    /// hits the box at a parameter greater than `t_min`.
    pub fn ray_hit(&self, origin: &Point3, dir: &Vector3<f64>, t_min: f64) -> Option<f64> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            if dir[a] == 0.0 {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[a];
            let (mut near, mut far) = ((self.min[a] - origin[a]) * inv, (self.max[a] - origin[a]) * inv);
            if near > far {
                std::mem::swap(&mut near, &mut far);
            }
            t0 = t0.max(near);
            t1 = t1.min(far);
            if t0 > t1 {
                return None;
            }
        }
        if t0 > t_min {
            Some(t0)
        } else if t1 > t_min {
            // origin inside the box: the exit face is the visible surface
            Some(t1)
        } else {
            None
        }
    }

    /// Unsigned distance from `p` to the box surface.
    pub fn surface_distance(&self, p: &Point3) -> f64 {
        if self.contains(p) {
            (0..3)
                .map(|a| (p[a] - self.min[a]).min(self.max[a] - p[a]))
                .fold(f64::INFINITY, f64::min)
        } else {
            let d = Vector3::from_fn(|a, _| (self.min[a] - p[a]).max(0.0).max(p[a] - self.max[a]));
            d.norm()
        }
    }
}

/// Floor rectangle in the `z = 0` plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FloorRect {
    pub min_x: f64,
    pub max_x: f64,
    pub min_y: f64,
    pub max_y: f64,
}

impl FloorRect {
    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        self.min_x <= x && x <= self.max_x && self.min_y <= y && y <= self.max_y
    }

    pub fn distance(&self, p: &Point3) -> f64 {
        let dx = (self.min_x - p.x).max(0.0).max(p.x - self.max_x);
        let dy = (self.min_y - p.y).max(0.0).max(p.y - self.max_y);
        (dx * dx + dy * dy + p.z * p.z).sqrt()
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn depth(&self) -> f64 {
        self.max_y - self.min_y
    }
}

/// Box-world retail floor: a floor rectangle, obstacle boxes and beacons.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    floor: FloorRect,
    boxes: Vec<Aabb>,
    beacons: BeaconMap,
}

impl World {
    pub fn new(floor: FloorRect, boxes: Vec<Aabb>, beacons: BeaconMap) -> Result<Self, SimError> {
        if !(floor.min_x < floor.max_x && floor.min_y < floor.max_y)
            || ![floor.min_x, floor.max_x, floor.min_y, floor.max_y]
                .iter()
                .all(|v| v.is_finite())
        {
            return Err(SimError::InvalidWorld(format!("empty floor extent: {floor:?}")));
        }
        for b in &boxes {
            b.validate()?;
        }
        for b in beacons.iter() {
            if !floor.contains_xy(b.position.x, b.position.y) {
                return Err(SimError::InvalidWorld(format!(
                    "beacon {} lies outside the floor",
                    b.id
                )));
            }
        }
        Ok(Self { floor, boxes, beacons })
    }

    pub fn floor(&self) -> &FloorRect {
        &self.floor
    }

    pub fn boxes(&self) -> &[Aabb] {
        &self.boxes
    }

    pub fn beacons(&self) -> &BeaconMap {
        &self.beacons
    }

    /// Distance from `p` to the nearest surface: the floor rectangle or any box face.
    pub fn surface_distance(&self, p: &Point3) -> f64 {
        self.boxes
            .iter()
            .map(|b| b.surface_distance(p))
            .fold(self.floor.distance(p), f64::min)
    }
}
