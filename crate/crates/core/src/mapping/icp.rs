use nalgebra::{Matrix3, Rotation3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kdtree::KdTree;
use super::MappingError;
use crate::cloud::PointCloud;
use crate::geometry::{Point3, RigidTransform3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcpParams {
    pub max_iterations: usize,
    pub max_correspondence_m: f64,
    /// Stop once the RMSE changes by less than this between iterations, meters.
    pub convergence_eps: f64,
    pub min_correspondences: usize,
    /// Fraction of source points, those with the smallest residuals, that
    /// enter each alignment step and the RMSE. Below 1 this discounts
    /// surfaces the target has not observed.
    pub overlap: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            max_correspondence_m: 0.5,
            convergence_eps: 1e-4,
            min_correspondences: 30,
            overlap: 0.9,
        }
    }
}

impl IcpParams {
    pub fn validate(&self) -> Result<(), MappingError> {
        let ok = self.max_iterations > 0
            && self.min_correspondences > 0
            && self.max_correspondence_m > 0.0
            && self.max_correspondence_m.is_finite()
            && self.convergence_eps > 0.0
            && self.overlap > 0.0
            && self.overlap <= 1.0;
        if !ok {
            return Err(MappingError::InvalidParams(format!(
                "icp parameters must be positive with overlap in (0, 1]: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Registration outcome.
///
/// `rmse` and `rmse_history` use the truncated, trimmed error: a source
/// point without a correspondence contributes `max_correspondence_m`, and
/// only the `overlap` fraction of smallest contributions is averaged. Unlike
/// the error over matched pairs only, this cannot grow when points enter or
/// leave the correspondence radius, so it is nonincreasing across iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    pub transform: RigidTransform3,
    pub rmse: f64,
    /// RMSE over matched pairs only, at the final transform.
    pub inlier_rmse: f64,
    pub iterations: usize,
    pub converged: bool,
    pub correspondences: usize,
    /// Entry `k` is the RMSE after `k` alignment steps.
    pub rmse_history: Vec<f64>,
}

struct Matching {
    /// Matched pairs among the kept residuals.
    pairs: Vec<(usize, usize)>,
    kept: usize,
    truncated_sse: f64,
    inlier_sse: f64,
}

impl Matching {
    fn rmse(&self) -> f64 {
        (self.truncated_sse / self.kept as f64).sqrt()
    }

    fn inlier_rmse(&self) -> f64 {
        if self.pairs.is_empty() {
            0.0
        } else {
            (self.inlier_sse / self.pairs.len() as f64).sqrt()
        }
    }
}

/// Nearest neighbors of the placed source points; keeps the `overlap`
/// fraction with the smallest truncated residuals (ties broken by index).
fn match_points(source: &[Point3], tree: &KdTree, t: &RigidTransform3, max_dist: f64, overlap: f64) -> Matching {
    let cap = max_dist * max_dist;
    let mut residuals: Vec<(f64, usize, Option<usize>)> = source
        .par_iter()
        .enumerate()
        .map(|(i, p)| match tree.nearest_within(&t.apply(p), max_dist) {
            Some((j, d2)) => (d2, i, Some(j)),
            None => (cap, i, None),
        })
        .collect();
    let kept = ((overlap * source.len() as f64).ceil() as usize).clamp(1, source.len().max(1));
    if kept < residuals.len() {
        residuals.select_nth_unstable_by(kept - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        residuals.truncate(kept);
        residuals.sort_unstable_by_key(|r| r.1);
    }
    let mut m = Matching {
        pairs: Vec::with_capacity(kept),
        kept,
        truncated_sse: 0.0,
        inlier_sse: 0.0,
    };
    for (d2, i, j) in residuals {
        m.truncated_sse += d2;
        if let Some(j) = j {
            m.pairs.push((i, j));
            m.inlier_sse += d2;
        }
    }
    m
}

/// Whether `source` placed by `t` has a truncated RMSE (as in
/// [`IcpResult::rmse`]) below `bound` against the tree's points. Stops as soon
/// as the answer is known.
pub(crate) fn rmse_below(
    source: &[Point3],
    tree: &KdTree,
    t: &RigidTransform3,
    max_correspondence_m: f64,
    bound: f64,
) -> bool {
    let budget = bound * bound * source.len() as f64;
    let cap = max_correspondence_m * max_correspondence_m;
    let mut sse = 0.0;
    for p in source {
        sse += tree
            .nearest_within(&t.apply(p), max_correspondence_m)
            .map_or(cap, |(_, d2)| d2);
        if sse >= budget {
            return false;
        }
    }
    true
}

const MAX_STRETCH: f64 = 32.0;

/// Rigid motion as rotation vector plus the translation along the screw,
/// so that scaling it gives powers of the original motion.
struct Screw {
    omega: Vector3<f64>,
    u: Vector3<f64>,
}

impl Screw {
    fn of(t: &RigidTransform3) -> Self {
        let omega = Rotation3::from_matrix(t.rotation()).scaled_axis();
        let u = left_jacobian(&omega)
            .try_inverse()
            .map_or(*t.translation(), |j| j * t.translation());
        Self { omega, u }
    }

    fn scaled(&self, k: f64) -> RigidTransform3 {
        let omega = self.omega * k;
        RigidTransform3::from_rotation(
            &Rotation3::from_scaled_axis(omega),
            left_jacobian(&omega) * (self.u * k),
        )
    }
}

fn left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let w = omega.cross_matrix();
    let (a, b) = if theta2 < 1e-8 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        let theta = theta2.sqrt();
        ((1.0 - theta.cos()) / theta2, (theta - theta.sin()) / (theta2 * theta))
    };
    Matrix3::identity() + w * a + w * w * b
}

/// Closed-form least-squares rigid transform taking `src[k]` onto `dst[k]`.
pub fn best_fit_transform(src: &[Point3], dst: &[Point3]) -> RigidTransform3 {
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let h: Matrix3<f64> = src.iter().zip(dst).map(|(p, q)| (p - cs) * (q - cd).transpose()).sum();
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested u"), svd.v_t.expect("requested v_t"));
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    RigidTransform3::new(r, cd - r * cs)
        .unwrap_or_else(|_| RigidTransform3::from_translation(cd - cs))
        .renormalized()
}

/// Point-to-point ICP aligning `source` onto `target`, starting at `initial`.
/// A step that would raise the RMSE (possible only through rounding) is
/// discarded and iteration stops.
pub fn icp_register(
    source: &PointCloud,
    target: &PointCloud,
    initial: &RigidTransform3,
    params: &IcpParams,
) -> Result<IcpResult, MappingError> {
    params.validate()?;
    if source.len() < 3 || target.len() < 3 {
        return Err(MappingError::TooFewPoints {
            source_points: source.len(),
            target_points: target.len(),
        });
    }
    register(
        source.points(),
        target.points(),
        &KdTree::build(target.points()),
        initial,
        params,
    )
}

/// [`icp_register`] against a prebuilt index over `dst`.
pub(crate) fn register(
    src: &[Point3],
    dst: &[Point3],
    tree: &KdTree,
    initial: &RigidTransform3,
    params: &IcpParams,
) -> Result<IcpResult, MappingError> {
    let starved = |iteration: usize, m: &Matching| {
        (m.pairs.len() < params.min_correspondences).then(|| MappingError::CorrespondenceStarvation {
            iteration,
            found: m.pairs.len(),
            required: params.min_correspondences,
        })
    };

    let mut t = initial.renormalized();
    let mut m = match_points(src, tree, &t, params.max_correspondence_m, params.overlap);
    if let Some(e) = starved(0, &m) {
        return Err(e);
    }
    let mut history = vec![m.rmse()];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_iterations {
        let (a, b): (Vec<Point3>, Vec<Point3>) = m.pairs.iter().map(|&(i, j)| (t.apply(&src[i]), dst[j])).unzip();
        let step = best_fit_transform(&a, &b);
        let candidate = step.compose(&t).renormalized();
        let next = match_points(src, tree, &candidate, params.max_correspondence_m, params.overlap);
        if let Some(e) = starved(iterations + 1, &next) {
            return Err(e);
        }
        let (prev_rmse, mut rmse) = (m.rmse(), next.rmse());
        if rmse > prev_rmse {
            converged = true;
            break;
        }
        let (mut candidate, mut next) = (candidate, next);
        // Point-to-point steps shrink geometrically when one plane dominates
        // the cloud; follow the step's screw motion further while that helps.
        let screw = Screw::of(&step);
        let mut k = 2.0;
        while k <= MAX_STRETCH {
            let stretched = screw.scaled(k).compose(&t).renormalized();
            let trial = match_points(src, tree, &stretched, params.max_correspondence_m, params.overlap);
            if trial.pairs.len() < params.min_correspondences || trial.rmse() >= rmse {
                break;
            }
            rmse = trial.rmse();
            candidate = stretched;
            next = trial;
            k *= 2.0;
        }
        t = candidate;
        m = next;
        iterations += 1;
        history.push(rmse);
        if prev_rmse - rmse < params.convergence_eps {
            converged = true;
            break;
        }
    }
    Ok(IcpResult {
        transform: t,
        rmse: m.rmse(),
        inlier_rmse: m.inlier_rmse(),
        iterations,
        converged,
        correspondences: m.pairs.len(),
        rmse_history: history,
    })
}
