use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::Rng;

use super::{back_project, DepthError, DepthMap, HeightMap};
use crate::cloud::PointCloud;
use crate::geometry::{CameraIntrinsics, Point3, RigidTransform3};

/// Plane `{p : normal·p + offset = 0}` with a unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl Plane {
    /// Normalizes `normal`; fails on a zero or non-finite normal.
    pub fn new(normal: Vector3<f64>, offset: f64) -> Result<Self, DepthError> {
        let n = normal.norm();
        if !(n > 0.0 && n.is_finite() && offset.is_finite()) {
            return Err(DepthError::InvalidParams("degenerate plane".into()));
        }
        Ok(Self {
            normal: normal / n,
            offset: offset / n,
        })
    }

    pub fn signed_distance(&self, p: &Point3) -> f64 {
        self.normal.dot(p) + self.offset
    }

    /// Flips the plane so `viewpoint` has nonnegative signed distance.
    pub fn oriented_toward(self, viewpoint: &Point3) -> Plane {
        if self.signed_distance(viewpoint) < 0.0 {
            Plane {
                normal: -self.normal,
                offset: -self.offset,
            }
        } else {
            self
        }
    }

    /// Expresses the plane in another frame: if `t` maps frame A to frame B,
    /// a plane given in A is returned in B.
    pub fn transformed(&self, t: &RigidTransform3) -> Plane {
        let normal = t.apply_vector(&self.normal);
        Plane {
            normal,
            offset: self.offset - normal.dot(t.translation()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloorFitParams {
    pub iterations: usize,
    pub inlier_threshold_m: f64,
    /// Fraction of the image (from the bottom row up) whose points are floor
    /// candidates. For clouds without pixel provenance, the lowest fraction
    /// of points by z.
    pub bottom_fraction: f64,
    pub min_inliers: usize,
    /// Point the returned normal faces; the camera center for camera-frame clouds.
    pub viewpoint: Point3,
}

impl Default for FloorFitParams {
    fn default() -> Self {
        Self {
            iterations: 200,
            inlier_threshold_m: 0.02,
            bottom_fraction: 1.0 / 3.0,
            min_inliers: 50,
            viewpoint: Point3::zeros(),
        }
    }
}

fn candidate_indices(cloud: &PointCloud, bottom_fraction: f64) -> Vec<usize> {
    match cloud.provenance() {
        Some(prov) => {
            let first_row = (1.0 - bottom_fraction) * prov.image_height as f64;
            prov.pixels
                .iter()
                .enumerate()
                .filter(|(_, (_, v))| *v as f64 >= first_row)
                .map(|(i, _)| i)
                .collect()
        }
        None => {
            let pts = cloud.points();
            let mut idx: Vec<usize> = (0..pts.len()).collect();
            idx.sort_by(|&a, &b| pts[a].z.total_cmp(&pts[b].z).then(a.cmp(&b)));
            let keep = ((bottom_fraction * pts.len() as f64).ceil() as usize).clamp(3.min(pts.len()), pts.len());
            idx.truncate(keep);
            idx.sort_unstable();
            idx
        }
    }
}

/// Least-squares plane through `points`: centroid plus the eigenvector of the
/// scatter matrix with the smallest eigenvalue.
fn least_squares_plane(points: &[Point3]) -> Option<Plane> {
    let n = points.len() as f64;
    let centroid = points.iter().sum::<Point3>() / n;
    let scatter = points.iter().fold(Matrix3::zeros(), |acc, p| {
        let d = p - centroid;
        acc + d * d.transpose()
    });
    let eig = SymmetricEigen::new(scatter);
    let k = eig.eigenvalues.imin();
    let normal: Vector3<f64> = eig.eigenvectors.column(k).into_owned();
    Plane::new(normal, -normal.dot(&centroid)).ok()
}

fn plane_through(a: &Point3, b: &Point3, c: &Point3) -> Option<Plane> {
    let n = (b - a).cross(&(c - a));
    let scale = (b - a).norm() * (c - a).norm();
    if !(n.norm() > 1e-12 * scale.max(f64::MIN_POSITIVE)) {
        return None;
    }
    Plane::new(n, -n.dot(a)).ok()
}

/// RANSAC floor fit over the bottom-of-image candidates, refined by least
/// squares over the consensus set.
pub fn fit_floor_plane<R: Rng + ?Sized>(
    cloud: &PointCloud,
    params: &FloorFitParams,
    rng: &mut R,
) -> Result<Plane, DepthError> {
    if !(params.bottom_fraction > 0.0 && params.bottom_fraction <= 1.0) {
        return Err(DepthError::InvalidParams("bottom_fraction must be in (0, 1]".into()));
    }
    if !(params.inlier_threshold_m > 0.0) || params.iterations == 0 {
        return Err(DepthError::InvalidParams(
            "iterations and inlier_threshold_m must be positive".into(),
        ));
    }
    let pts = cloud.points();
    let cand = candidate_indices(cloud, params.bottom_fraction);
    if cand.len() < 3 {
        return Err(DepthError::TooFewPoints {
            required: 3,
            got: cand.len(),
        });
    }
    let thr = params.inlier_threshold_m;
    let count = |plane: &Plane| {
        cand.iter()
            .filter(|&&i| plane.signed_distance(&pts[i]).abs() <= thr)
            .count()
    };

    let mut best: Option<(Plane, usize)> = None;
    for _ in 0..params.iterations {
        let a = cand[rng.random_range(0..cand.len())];
        let b = cand[rng.random_range(0..cand.len())];
        let c = cand[rng.random_range(0..cand.len())];
        if a == b || b == c || a == c {
            continue;
        }
        let Some(plane) = plane_through(&pts[a], &pts[b], &pts[c]) else {
            continue;
        };
        let n = count(&plane);
        if best.as_ref().is_none_or(|(_, m)| n > *m) {
            best = Some((plane, n));
        }
    }
    let (mut plane, found) = best.unwrap_or((
        Plane {
            normal: Vector3::z(),
            offset: 0.0,
        },
        0,
    ));
    if found < params.min_inliers.max(3) {
        return Err(DepthError::NoFloorFound {
            found,
            required: params.min_inliers.max(3),
        });
    }
    // Two refinement passes: the consensus set of the refined plane is
    // usually slightly larger than that of the minimal sample.
    for _ in 0..2 {
        let inliers: Vec<Point3> = cand
            .iter()
            .map(|&i| pts[i])
            .filter(|p| plane.signed_distance(p).abs() <= thr)
            .collect();
        if inliers.len() < 3 {
            break;
        }
        match least_squares_plane(&inliers) {
            Some(p) => plane = p,
            None => break,
        }
    }
    Ok(plane.oriented_toward(&params.viewpoint))
}

/// Signed distance of every valid pixel's back-projected point to `floor`
/// (camera frame). Points below the floor keep their negative height.
pub fn height_map(depth: &DepthMap, intr: &CameraIntrinsics, floor: &Plane) -> Result<HeightMap, DepthError> {
    let cloud = back_project(depth, intr, None)?;
    let mut heights = vec![0.0; intr.pixel_count()];
    let prov = cloud.provenance().expect("back_project records provenance");
    for (p, &(u, v)) in cloud.points().iter().zip(&prov.pixels) {
        heights[v as usize * intr.width + u as usize] = floor.signed_distance(p);
    }
    Ok(HeightMap {
        width: depth.width(),
        height: depth.height(),
        heights,
        valid: depth.valid().to_vec(),
    })
}
