use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::World;
use crate::depth::{DepthMap, DepthProvider};
use crate::geometry::{CameraIntrinsics, Point3, RigidTransform3};

/// Renders the depth (optical-axis z) seen by a pinhole camera at
/// `world_from_camera`. Pixels whose ray misses everything, or hits beyond
/// `max_depth`, are invalid.
pub fn raycast_depth(world: &World, world_from_camera: &RigidTransform3, intr: &CameraIntrinsics) -> DepthMap {
    let (w, h) = (intr.width, intr.height);
    let origin = *world_from_camera.translation();
    let mut values = vec![0.0; w * h];
    values.par_chunks_mut(w).enumerate().for_each(|(v, row)| {
        for (u, out) in row.iter_mut().enumerate() {
            // Unnormalized ray with unit z: the hit parameter is the depth.
            let dir = world_from_camera.apply_vector(&intr.ray(u as f64, v as f64));
            let t = nearest_hit(world, &origin, &dir);
            if t <= intr.max_depth {
                *out = t;
            }
        }
    });
    DepthMap::from_values(w, h, values).expect("raycast depths are positive or zero")
}

fn nearest_hit(world: &World, origin: &Point3, dir: &nalgebra::Vector3<f64>) -> f64 {
    let mut best = f64::INFINITY;
    if dir.z != 0.0 {
        let t = -origin.z / dir.z;
        if t > 0.0 {
            let p = origin + dir * t;
            if world.floor().contains_xy(p.x, p.y) {
                best = t;
            }
        }
    }
    for b in world.boxes() {
        if let Some(t) = b.ray_hit(origin, dir, 0.0) {
            best = best.min(t);
        }
    }
    best
}

/// Depth sensor error model: multiplicative Gaussian noise and optional
/// millimeter quantization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DepthNoise {
    /// Standard deviation relative to the true depth.
    pub sigma_rel: f64,
    pub quantize_mm: bool,
}

impl Default for DepthNoise {
    fn default() -> Self {
        Self {
            sigma_rel: 0.01,
            quantize_mm: true,
        }
    }
}

impl DepthNoise {
    pub fn none() -> Self {
        Self {
            sigma_rel: 0.0,
            quantize_mm: false,
        }
    }

    /// Perturbs every valid pixel in row-major order, drawing one normal
    /// sample per valid pixel. Pixels pushed out of `(0, max_depth]` become invalid.
    pub fn apply<R: Rng + ?Sized>(&self, depth: &DepthMap, max_depth: f64, rng: &mut R) -> DepthMap {
        if self.sigma_rel == 0.0 && !self.quantize_mm {
            return depth.clone();
        }
        let values = depth
            .values()
            .iter()
            .zip(depth.valid())
            .map(|(&z, &ok)| {
                if !ok {
                    return 0.0;
                }
                let mut z = z;
                if self.sigma_rel > 0.0 {
                    let n: f64 = rng.sample(StandardNormal);
                    z *= 1.0 + self.sigma_rel * n;
                }
                if self.quantize_mm {
                    z = (z * 1000.0).round() / 1000.0;
                }
                if z > 0.0 && z <= max_depth {
                    z
                } else {
                    0.0
                }
            })
            .collect();
        DepthMap::from_values(depth.width(), depth.height(), values).expect("noisy depths are positive or zero")
    }
}

/// Raycasting depth source with sensor noise, standing in for a learned
/// monocular depth estimator.
pub struct SimulatedDepth<'w> {
    world: &'w World,
    intr: CameraIntrinsics,
    noise: DepthNoise,
    rng: ChaCha8Rng,
}

impl<'w> SimulatedDepth<'w> {
    pub fn new(world: &'w World, intr: CameraIntrinsics, noise: DepthNoise, rng: ChaCha8Rng) -> Self {
        Self {
            world,
            intr,
            noise,
            rng,
        }
    }
}

impl DepthProvider for SimulatedDepth<'_> {
    fn depth(&mut self, world_from_camera: &RigidTransform3, _timestamp: f64) -> DepthMap {
        let clean = raycast_depth(self.world, world_from_camera, &self.intr);
        self.noise.apply(&clean, self.intr.max_depth, &mut self.rng)
    }

    fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intr
    }
}
