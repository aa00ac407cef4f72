//! Depth maps to point clouds and heightmaps, floor fitting, and depth-quality metrics.
//!
//! Depth values are metric z in the camera optical frame. Holes are stored as
//! value 0 with the validity flag cleared.

mod floor;
pub mod metrics;
pub mod pnm;
mod projection;

pub use floor::{fit_floor_plane, height_map, FloorFitParams, Plane};
pub use metrics::{
    combined_loss, depth_l2, grad_loss, loss_components, ssim, threshold_accuracy, LossComponents, LossWeights,
    SsimParams,
};
pub use projection::{back_project, project, Projection};

use thiserror::Error;

use crate::cloud::{CloudError, Rgb};
use crate::geometry::{CameraIntrinsics, GeometryError, RigidTransform3};

#[derive(Debug, Error)]
pub enum DepthError {
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("array length {len} does not match {width}x{height}")]
    BadLength { width: usize, height: usize, len: usize },
    #[error("pixel {index} is flagged valid but has depth {value}")]
    InvalidDepthValue { index: usize, value: f64 },
    #[error("pixel {index} has depth {value} beyond max_depth {max_depth}")]
    BeyondMaxDepth { index: usize, value: f64, max_depth: f64 },
    #[error("point is not in front of the camera (z = {0})")]
    BehindCamera(f64),
    #[error("no jointly valid pixels")]
    EmptyValidSet,
    #[error("need at least {required} candidate points, got {got}")]
    TooFewPoints { required: usize, got: usize },
    #[error("no floor found: best plane has {found} inliers, need {required}")]
    NoFloorFound { found: usize, required: usize },
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-major per-pixel depth in meters with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>, valid: Vec<bool>) -> Result<Self, DepthError> {
        let n = width * height;
        for len in [values.len(), valid.len()] {
            if len != n {
                return Err(DepthError::BadLength { width, height, len });
            }
        }
        for (index, (&value, &ok)) in values.iter().zip(&valid).enumerate() {
            if ok && !(value > 0.0 && value.is_finite()) {
                return Err(DepthError::InvalidDepthValue { index, value });
            }
        }
        // Holes are normalized to the zero convention.
        let values = values
            .into_iter()
            .zip(&valid)
            .map(|(v, &ok)| if ok { v } else { 0.0 })
            .collect();
        Ok(Self {
            width,
            height,
            values,
            valid,
        })
    }

    /// Builds a map where every positive finite value is valid.
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self, DepthError> {
        let valid = values.iter().map(|v| *v > 0.0 && v.is_finite()).collect();
        Self::new(width, height, values, valid)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn get(&self, u: usize, v: usize) -> Option<f64> {
        let i = v * self.width + u;
        self.valid[i].then_some(self.values[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Checks dimensions and the `max_depth` bound against `intr`.
    pub fn check_intrinsics(&self, intr: &CameraIntrinsics) -> Result<(), DepthError> {
        intr.validate()?;
        self.check_dims(intr.width, intr.height)?;
        for (index, (&value, &ok)) in self.values.iter().zip(&self.valid).enumerate() {
            if ok && value > intr.max_depth {
                return Err(DepthError::BeyondMaxDepth {
                    index,
                    value,
                    max_depth: intr.max_depth,
                });
            }
        }
        Ok(())
    }

    pub(crate) fn check_dims(&self, width: usize, height: usize) -> Result<(), DepthError> {
        if (self.width, self.height) != (width, height) {
            return Err(DepthError::DimensionMismatch {
                expected: (width, height),
                got: (self.width, self.height),
            });
        }
        Ok(())
    }
}

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorImage {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<Rgb>,
}

impl ColorImage {
    pub fn new(width: usize, height: usize, rgb: Vec<Rgb>) -> Result<Self, DepthError> {
        if rgb.len() != width * height {
            return Err(DepthError::BadLength {
                width,
                height,
                len: rgb.len(),
            });
        }
        Ok(Self { width, height, rgb })
    }
}

/// Per-pixel signed distance to the floor plane, meters.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightMap {
    pub width: usize,
    pub height: usize,
    pub heights: Vec<f64>,
    pub valid: Vec<bool>,
}

/// Anything that produces a depth estimate for a camera at a given pose.
///
/// The simulator implements this with a raycaster; a learned monocular
/// estimator would implement it from an RGB frame.
pub trait DepthProvider {
    fn depth(&mut self, world_from_camera: &RigidTransform3, timestamp: f64) -> DepthMap;
    fn intrinsics(&self) -> &CameraIntrinsics;
}
