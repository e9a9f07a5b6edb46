//! MLESAC robust pose estimation on stereo correspondences.
//!
//! Hypotheses come from minimal 3-point rigid alignment of the frame's
//! triangulated points against the target 3D points; scoring uses the
//! bounded-likelihood cost `sum(min(e_i^2, threshold^2))` over left-image
//! reprojection errors. The winning hypothesis is refit on its inliers and
//! the inlier set re-classified under the refit transform, so every reported
//! inlier reprojects within the threshold of the returned estimate.

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::seq::index::sample;
use rand::Rng;
use thiserror::Error;

use crate::camera::StereoCameraModel;
use crate::matching::FeatureMatch;
use crate::se3::RigidTransform;

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("need at least 3 matches, got {0}")]
    InsufficientMatches(usize),
    #[error("no hypothesis reached {needed} inliers (best {best})")]
    EstimationFailed { needed: usize, best: usize },
    #[error("optimization needs at least 3 observations, got {0}")]
    TooFewObservations(usize),
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct MlesacConfig {
    /// Inlier reprojection threshold (px).
    pub inlier_threshold_px: f64,
    /// Scoring threshold for raw minimal-sample hypotheses (px). Stereo
    /// depth noise makes 3-point hypotheses pixel-sloppy even when the
    /// sampled triple is all-inlier, so selection runs at a coarser gate
    /// than the final classification.
    pub coarse_threshold_px: f64,
    /// Hypothesis budget.
    pub max_iterations: u32,
    /// Early-exit confidence on having sampled an all-inlier triple.
    pub confidence: f64,
    /// Minimum inlier count for a usable estimate.
    pub min_inliers: usize,
}

impl Default for MlesacConfig {
    fn default() -> Self {
        Self {
            inlier_threshold_px: 2.0,
            coarse_threshold_px: 16.0,
            max_iterations: 200,
            confidence: 0.99,
            min_inliers: 6,
        }
    }
}

/// Robust estimate: transform mapping target-frame points into the frame's
/// camera frame, with its supporting inliers.
#[derive(Debug, Clone)]
pub struct RobustEstimate {
    pub transform: RigidTransform,
    /// Indices into the match list passed to the estimator.
    pub inlier_indices: Vec<usize>,
    pub iterations: u32,
}

impl RobustEstimate {
    pub fn inlier_count(&self) -> usize {
        self.inlier_indices.len()
    }
}

/// Least-squares rigid alignment (Arun's SVD method): returns `T` with
/// `p_frame ~ T * p_target`, or `None` for degenerate geometry.
pub fn rigid_align(pairs: &[(Vector3<f64>, Vector3<f64>)]) -> Option<RigidTransform> {
    if pairs.len() < 3 {
        return None;
    }
    let n = pairs.len() as f64;
    let mut target_mean = Vector3::zeros();
    let mut frame_mean = Vector3::zeros();
    for (q, p) in pairs {
        target_mean += q;
        frame_mean += p;
    }
    target_mean /= n;
    frame_mean /= n;

    let mut h = Matrix3::zeros();
    for (q, p) in pairs {
        h += (q - target_mean) * (p - frame_mean).transpose();
    }
    let svd = h.svd(true, true);
    // Collinear/coincident point sets leave the second singular value at
    // (numerically) zero and the rotation unconstrained.
    if svd.singular_values[1] < 1e-10 {
        return None;
    }
    let u = svd.u?;
    let vt = svd.v_t?;
    let mut r = vt.transpose() * u.transpose();
    if r.determinant() < 0.0 {
        let mut v = vt.transpose();
        v.column_mut(2).neg_mut();
        r = v * u.transpose();
    }
    let t = frame_mean - r * target_mean;
    RigidTransform::new(r, t).ok()
}

fn reprojection_error(
    transform: &RigidTransform,
    target_point: &Vector3<f64>,
    observed_px: &Vector2<f64>,
    camera: &StereoCameraModel,
) -> Option<f64> {
    let p = transform.apply(target_point);
    camera.project(&p).ok().map(|px| (px - observed_px).norm())
}

/// MLESAC over matched stereo features.
///
/// `frame` supplies the observed pixels and triangulated points by
/// `frame_index`; `target_points` supplies 3D points by `target_index`.
/// On success the matches' residual slots are filled with the reprojection
/// error under the returned transform (inliers and outliers alike).
pub fn mlesac_pose(
    matches: &mut [FeatureMatch],
    frame_pixels: &[Vector2<f64>],
    frame_points: &[Vector3<f64>],
    target_points: &[Vector3<f64>],
    camera: &StereoCameraModel,
    config: &MlesacConfig,
    rng: &mut impl Rng,
) -> Result<RobustEstimate, EstimatorError> {
    mlesac_pose_seeded(
        matches,
        frame_pixels,
        frame_points,
        target_points,
        None,
        camera,
        config,
        rng,
    )
}

/// [`mlesac_pose`] with an optional prior hypothesis scored ahead of the
/// sampling loop. At long range the stereo depth noise makes minimal
/// 3-point hypotheses poorly conditioned; a dead-reckoned prior keeps the
/// estimator anchored there and costs nothing when it scores badly.
#[allow(clippy::too_many_arguments)]
pub fn mlesac_pose_seeded(
    matches: &mut [FeatureMatch],
    frame_pixels: &[Vector2<f64>],
    frame_points: &[Vector3<f64>],
    target_points: &[Vector3<f64>],
    seed_hypothesis: Option<&RigidTransform>,
    camera: &StereoCameraModel,
    config: &MlesacConfig,
    rng: &mut impl Rng,
) -> Result<RobustEstimate, EstimatorError> {
    let n = matches.len();
    if n < 3 {
        return Err(EstimatorError::InsufficientMatches(n));
    }
    let threshold_sq = config.inlier_threshold_px * config.inlier_threshold_px;
    let coarse_sq = config
        .coarse_threshold_px
        .max(config.inlier_threshold_px)
        .powi(2);

    let pairs: Vec<(Vector3<f64>, Vector3<f64>)> = matches
        .iter()
        .map(|m| (target_points[m.target_index], frame_points[m.frame_index]))
        .collect();
    let pixels: Vec<Vector2<f64>> = matches
        .iter()
        .map(|m| frame_pixels[m.frame_index])
        .collect();

    let score = |t: &RigidTransform| -> (f64, usize) {
        let mut cost = 0.0;
        let mut inliers = 0;
        for i in 0..n {
            let e2 = reprojection_error(t, &pairs[i].0, &pixels[i], camera)
                .map(|e| e * e)
                .unwrap_or(f64::INFINITY);
            if e2 <= coarse_sq {
                cost += e2;
                inliers += 1;
            } else {
                cost += coarse_sq;
            }
        }
        (cost, inliers)
    };

    let mut best: Option<(f64, RigidTransform)> = None;
    let mut best_inliers = 0usize;
    let mut needed = config.max_iterations;
    let mut iterations = 0u32;
    if let Some(prior) = seed_hypothesis {
        let (cost, inliers) = score(prior);
        if inliers >= 3 {
            best = Some((cost, *prior));
            best_inliers = inliers;
            let w = (inliers as f64 / n as f64).clamp(1e-6, 1.0 - 1e-9);
            let denom = (1.0 - w * w * w).max(1e-12).ln();
            let required = ((1.0 - config.confidence).ln() / denom).ceil();
            if required.is_finite() && required >= 0.0 {
                needed = (required as u32).max(1);
            }
        }
    }
    while iterations < needed.min(config.max_iterations) {
        iterations += 1;
        let idx = sample(rng, n, 3);
        let triple: Vec<(Vector3<f64>, Vector3<f64>)> =
            idx.iter().map(|i| pairs[i]).collect();
        let Some(hypothesis) = rigid_align(&triple) else {
            continue;
        };
        let (cost, inliers) = score(&hypothesis);
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, hypothesis));
            best_inliers = inliers;
            // Adaptive stopping: enough hypotheses that an all-inlier
            // triple was drawn with the configured confidence.
            let w = (inliers as f64 / n as f64).clamp(1e-6, 1.0 - 1e-9);
            let denom = (1.0 - w * w * w).max(1e-12).ln();
            let required = ((1.0 - config.confidence).ln() / denom).ceil();
            if required.is_finite() && required >= 0.0 {
                needed = (required as u32).max(1);
            }
        }
    }

    let Some((_, mut transform)) = best else {
        return Err(EstimatorError::EstimationFailed {
            needed: config.min_inliers,
            best: 0,
        });
    };
    if best_inliers < 3 {
        return Err(EstimatorError::EstimationFailed {
            needed: config.min_inliers,
            best: best_inliers,
        });
    }

    // Local optimisation: anneal the classification gate from the coarse
    // scoring threshold down to the configured one, refitting in between.
    // The Gauss-Newton refit works on the 2D reprojections, so the final
    // accuracy is set by the image geometry rather than the depth noise of
    // the minimal samples.
    let gn = crate::optimize::GnConfig {
        max_iterations: 10,
        relative_tolerance: 1e-12,
    };
    let mut gate = config.coarse_threshold_px.max(config.inlier_threshold_px);
    loop {
        let gate_sq = gate * gate;
        let mut obs = Vec::new();
        for i in 0..n {
            if let Some(e) = reprojection_error(&transform, &pairs[i].0, &pixels[i], camera) {
                if e * e <= gate_sq {
                    obs.push((pairs[i].0, pixels[i]));
                }
            }
        }
        if obs.len() >= 3 {
            if let Ok((refined, _)) = crate::optimize::optimize_pose(&transform, &obs, camera, &gn)
            {
                transform = refined;
            }
        }
        if gate <= config.inlier_threshold_px {
            break;
        }
        gate = (gate / 2.0).max(config.inlier_threshold_px);
    }

    // Final classification under the returned transform.
    let mut inlier_indices: Vec<usize> = Vec::new();
    for (i, m) in matches.iter_mut().enumerate() {
        let e = reprojection_error(&transform, &pairs[i].0, &pixels[i], camera);
        m.residual_px = e;
        if let Some(e) = e {
            if e * e <= threshold_sq {
                inlier_indices.push(i);
            }
        }
    }
    if inlier_indices.len() < config.min_inliers {
        return Err(EstimatorError::EstimationFailed {
            needed: config.min_inliers,
            best: inlier_indices.len(),
        });
    }

    Ok(RobustEstimate {
        transform,
        inlier_indices,
        iterations,
    })
}
