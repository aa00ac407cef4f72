//! Depth-quality metrics: pixelwise L2, gradient difference, SSIM, their
//! weighted combination, and the ratio-threshold accuracy.
//!
//! All metrics are evaluated over pixels valid in both maps.

use rayon::prelude::*;

use super::{DepthError, DepthMap};
use crate::geometry::CameraIntrinsics;

fn check_same_dims(pred: &DepthMap, gt: &DepthMap) -> Result<(), DepthError> {
    pred.check_dims(gt.width(), gt.height())
}

fn joint_valid(pred: &DepthMap, gt: &DepthMap) -> Vec<bool> {
    pred.valid().iter().zip(gt.valid()).map(|(a, b)| *a && *b).collect()
}

/// Root mean squared depth difference.
pub fn depth_l2(pred: &DepthMap, gt: &DepthMap) -> Result<f64, DepthError> {
    check_same_dims(pred, gt)?;
    let (sum, n) = pred
        .values()
        .iter()
        .zip(gt.values())
        .zip(joint_valid(pred, gt))
        .filter(|(_, ok)| *ok)
        .fold((0.0, 0usize), |(s, n), ((p, g), _)| (s + (p - g) * (p - g), n + 1));
    if n == 0 {
        return Err(DepthError::EmptyValidSet);
    }
    Ok((sum / n as f64).sqrt())
}

/// Mean Euclidean norm of the forward-difference gradient error.
///
/// A pixel contributes only when it, its right neighbor and its lower
/// neighbor are valid in both maps.
pub fn grad_loss(pred: &DepthMap, gt: &DepthMap) -> Result<f64, DepthError> {
    check_same_dims(pred, gt)?;
    let (w, h) = (pred.width(), pred.height());
    let ok = joint_valid(pred, gt);
    let (p, g) = (pred.values(), gt.values());
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in 0..h.saturating_sub(1) {
        for u in 0..w.saturating_sub(1) {
            let i = v * w + u;
            let (r, d) = (i + 1, i + w);
            if !(ok[i] && ok[r] && ok[d]) {
                continue;
            }
            let gx = (p[r] - p[i]) - (g[r] - g[i]);
            let gy = (p[d] - p[i]) - (g[d] - g[i]);
            sum += gx.hypot(gy);
            n += 1;
        }
    }
    if n == 0 {
        return Err(DepthError::EmptyValidSet);
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    /// Odd window side length in pixels.
    pub window: usize,
    pub sigma: f64,
    pub dynamic_range: f64,
}

impl SsimParams {
    pub fn for_intrinsics(intr: &CameraIntrinsics) -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            dynamic_range: intr.max_depth,
        }
    }
}

fn gaussian_kernel(window: usize, sigma: f64) -> Vec<f64> {
    let r = (window / 2) as f64;
    let raw: Vec<f64> = (0..window)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Mean local SSIM over Gaussian-weighted windows that lie fully inside the
/// image and contain only jointly valid pixels.
pub fn ssim(pred: &DepthMap, gt: &DepthMap, params: &SsimParams) -> Result<f64, DepthError> {
    check_same_dims(pred, gt)?;
    let (w, h) = (pred.width(), pred.height());
    let k = params.window;
    if k == 0 || k % 2 == 0 || k > w.min(h) {
        return Err(DepthError::InvalidParams(format!(
            "SSIM window {k} must be odd and at most {}",
            w.min(h)
        )));
    }
    if !(params.sigma > 0.0) || !(params.dynamic_range > 0.0) {
        return Err(DepthError::InvalidParams(
            "SSIM sigma and dynamic_range must be positive".into(),
        ));
    }
    let c1 = (0.01 * params.dynamic_range).powi(2);
    let c2 = (0.03 * params.dynamic_range).powi(2);
    let kernel = gaussian_kernel(k, params.sigma);

    // Integral image of invalid pixels for O(1) window rejection.
    let ok = joint_valid(pred, gt);
    let mut bad = vec![0u32; (w + 1) * (h + 1)];
    for v in 0..h {
        for u in 0..w {
            bad[(v + 1) * (w + 1) + u + 1] = bad[v * (w + 1) + u + 1] + bad[(v + 1) * (w + 1) + u]
                - bad[v * (w + 1) + u]
                + u32::from(!ok[v * w + u]);
        }
    }
    let window_bad = |u: usize, v: usize| {
        bad[(v + k) * (w + 1) + u + k] + bad[v * (w + 1) + u] - bad[v * (w + 1) + u + k] - bad[(v + k) * (w + 1) + u]
    };

    let (x, y) = (pred.values(), gt.values());
    let rows: Vec<(f64, usize)> = (0..=h - k)
        .into_par_iter()
        .map(|v0| {
            let mut sum = 0.0;
            let mut n = 0;
            for u0 in 0..=w - k {
                if window_bad(u0, v0) != 0 {
                    continue;
                }
                let (mut mx, mut my) = (0.0, 0.0);
                for (j, kj) in kernel.iter().enumerate() {
                    let row = (v0 + j) * w + u0;
                    for (i, ki) in kernel.iter().enumerate() {
                        let wt = kj * ki;
                        mx += wt * x[row + i];
                        my += wt * y[row + i];
                    }
                }
                let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
                for (j, kj) in kernel.iter().enumerate() {
                    let row = (v0 + j) * w + u0;
                    for (i, ki) in kernel.iter().enumerate() {
                        let wt = kj * ki;
                        let (dx, dy) = (x[row + i] - mx, y[row + i] - my);
                        sxx += wt * dx * dx;
                        syy += wt * dy * dy;
                        sxy += wt * dx * dy;
                    }
                }
                let num = (2.0 * mx * my + c1) * (2.0 * sxy + c2);
                let den = (mx * mx + my * my + c1) * (sxx + syy + c2);
                sum += (num / den).clamp(-1.0, 1.0);
                n += 1;
            }
            (sum, n)
        })
        .collect();
    let (sum, n) = rows.iter().fold((0.0, 0usize), |(s, c), (rs, rn)| (s + rs, c + rn));
    if n == 0 {
        return Err(DepthError::EmptyValidSet);
    }
    Ok(sum / n as f64)
}

/// Weights of the combined loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub w_depth: f64,
    pub w_grad: f64,
    pub w_ssim: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_depth: 0.1,
            w_grad: 1.0,
            w_ssim: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(w_depth: f64, w_grad: f64, w_ssim: f64) -> Result<Self, DepthError> {
        let ws = [w_depth, w_grad, w_ssim];
        if ws.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || ws.iter().all(|w| *w == 0.0) {
            return Err(DepthError::InvalidParams(
                "loss weights must be finite, nonnegative, and not all zero".into(),
            ));
        }
        Ok(Self {
            w_depth,
            w_grad,
            w_ssim,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossComponents {
    pub depth_l2: f64,
    pub grad: f64,
    pub ssim: f64,
}

impl LossComponents {
    /// `w_depth·l2 + w_grad·grad + w_ssim·(1 − ssim)/2`.
    pub fn combine(&self, weights: &LossWeights) -> f64 {
        weights.w_depth * self.depth_l2 + weights.w_grad * self.grad + weights.w_ssim * (1.0 - self.ssim) / 2.0
    }
}

pub fn loss_components(pred: &DepthMap, gt: &DepthMap, ssim_params: &SsimParams) -> Result<LossComponents, DepthError> {
    Ok(LossComponents {
        depth_l2: depth_l2(pred, gt)?,
        grad: grad_loss(pred, gt)?,
        ssim: ssim(pred, gt, ssim_params)?,
    })
}

pub fn combined_loss(
    pred: &DepthMap,
    gt: &DepthMap,
    weights: &LossWeights,
    ssim_params: &SsimParams,
) -> Result<f64, DepthError> {
    Ok(loss_components(pred, gt, ssim_params)?.combine(weights))
}

/// Fraction of jointly valid pixels with `max(pred/gt, gt/pred) < threshold`.
pub fn threshold_accuracy(pred: &DepthMap, gt: &DepthMap, threshold: f64) -> Result<f64, DepthError> {
    check_same_dims(pred, gt)?;
    if !(threshold > 1.0) {
        return Err(DepthError::InvalidParams("threshold must exceed 1".into()));
    }
    let (hit, n) = pred
        .values()
        .iter()
        .zip(gt.values())
        .zip(joint_valid(pred, gt))
        .filter(|(_, ok)| *ok)
        .fold((0usize, 0usize), |(h, n), ((p, g), _)| {
            let ratio = (p / g).max(g / p);
            (h + usize::from(ratio < threshold), n + 1)
        });
    if n == 0 {
        return Err(DepthError::EmptyValidSet);
    }
    Ok(hit as f64 / n as f64)
}
