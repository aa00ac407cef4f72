use nalgebra::Vector3;

use super::{ColorImage, DepthError, DepthMap};
use crate::cloud::{PixelProvenance, PointCloud};
use crate::geometry::{CameraIntrinsics, Point3};

/// Inverse pinhole model over every valid pixel. Points are in the camera
/// optical frame and carry their source pixel.
pub fn back_project(
    depth: &DepthMap,
    intr: &CameraIntrinsics,
    color: Option<&ColorImage>,
) -> Result<PointCloud, DepthError> {
    depth.check_intrinsics(intr)?;
    if let Some(c) = color {
        if (c.width, c.height) != (depth.width(), depth.height()) {
            return Err(DepthError::DimensionMismatch {
                expected: (depth.width(), depth.height()),
                got: (c.width, c.height),
            });
        }
    }
    let n = depth.valid_count();
    let mut points = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n);
    let mut colors = color.map(|_| Vec::with_capacity(n));
    let (inv_fx, inv_fy) = (1.0 / intr.fx, 1.0 / intr.fy);
    let w = depth.width();
    for (i, (&z, &ok)) in depth.values().iter().zip(depth.valid()).enumerate() {
        if !ok {
            continue;
        }
        let (u, v) = (i % w, i / w);
        points.push(Vector3::new(
            (u as f64 - intr.cx) * z * inv_fx,
            (v as f64 - intr.cy) * z * inv_fy,
            z,
        ));
        pixels.push((u as u32, v as u32));
        if let (Some(out), Some(img)) = (colors.as_mut(), color) {
            out.push(img.rgb[i]);
        }
    }
    let cloud = PointCloud::new(points, colors)?;
    Ok(cloud.with_provenance(PixelProvenance {
        image_width: depth.width(),
        image_height: depth.height(),
        pixels,
    })?)
}

/// Pinhole projection of a camera-frame point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub z: f64,
    /// True when `(u, v)` falls inside the image bounds.
    pub in_frame: bool,
}

pub fn project(point: &Point3, intr: &CameraIntrinsics) -> Result<Projection, DepthError> {
    if !(point.z > 0.0) {
        return Err(DepthError::BehindCamera(point.z));
    }
    let u = intr.fx * point.x / point.z + intr.cx;
    let v = intr.fy * point.y / point.z + intr.cy;
    // Pixel centers sit on integer coordinates, so the frame spans [-0.5, size - 0.5).
    let in_frame = u >= -0.5 && u < intr.width as f64 - 0.5 && v >= -0.5 && v < intr.height as f64 - 0.5;
    Ok(Projection {
        u,
        v,
        z: point.z,
        in_frame,
    })
}
