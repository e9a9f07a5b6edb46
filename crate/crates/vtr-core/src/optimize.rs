//! Gauss-Newton refinement: single-pose optimisation against fixed landmarks
//! and windowed bundle adjustment over the most recent vertices.
//!
//! Pose updates use a left perturbation `T <- (Exp(phi), rho) * T` with the
//! 6-vector ordered translation-first, so the point jacobian is
//! `J_proj(p) * [I | -skew(p)]`. Iterations are accepted only when the total
//! squared reprojection cost decreases; additive damping grows on rejection.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, SMatrix, Vector2, Vector3, Vector6};
use thiserror::Error;

use crate::camera::StereoCameraModel;
use crate::graph::{PoseGraph, VertexId, VertexLandmark};
use crate::mlesac::EstimatorError;
use crate::se3::{skew, AxisAngle, RigidTransform};

#[derive(Debug, Error, PartialEq)]
pub enum RefineError {
    #[error("window size {0} outside [2, 10]")]
    WindowSize(usize),
    #[error("graph needs at least 2 vertices in the window, found {0}")]
    WindowTooSmall(usize),
    #[error("vertex {0} does not exist")]
    NoSuchVertex(VertexId),
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct GnConfig {
    pub max_iterations: usize,
    /// Terminate when the relative cost decrease falls below this.
    pub relative_tolerance: f64,
}

impl Default for GnConfig {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            relative_tolerance: 1e-9,
        }
    }
}

/// Outcome bookkeeping of a Gauss-Newton run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    /// Set when no damped step could decrease the cost at the first
    /// iteration; the returned pose equals the initial one.
    pub warning: bool,
}

/// Projection jacobian of a camera point: d(pixel)/d(point), 2x3.
fn projection_jacobian(p: &Vector3<f64>, camera: &StereoCameraModel) -> Matrix2x3<f64> {
    let z = p.z.max(1e-6);
    let inv_z = 1.0 / z;
    let f = camera.focal_px;
    Matrix2x3::new(
        f * inv_z,
        0.0,
        -f * p.x * inv_z * inv_z,
        0.0,
        f * inv_z,
        -f * p.y * inv_z * inv_z,
    )
}

/// Residual of one observation under a pose hypothesis.
fn residual(
    pose: &RigidTransform,
    point: &Vector3<f64>,
    observed: &Vector2<f64>,
    camera: &StereoCameraModel,
) -> Vector2<f64> {
    let p = pose.apply(point);
    let z = p.z.max(1e-6);
    Vector2::new(
        camera.focal_px * p.x / z + camera.principal_point[0] - observed.x,
        camera.focal_px * p.y / z + camera.principal_point[1] - observed.y,
    )
}

/// Pose jacobian of one observation: d(residual)/d(delta), 2x6 with delta =
/// (translation, rotation) as a left perturbation.
pub fn pose_jacobian(
    pose: &RigidTransform,
    point: &Vector3<f64>,
    camera: &StereoCameraModel,
) -> SMatrix<f64, 2, 6> {
    let p = pose.apply(point);
    let j_proj = projection_jacobian(&p, camera);
    let mut j = SMatrix::<f64, 2, 6>::zeros();
    j.fixed_view_mut::<2, 3>(0, 0).copy_from(&j_proj);
    j.fixed_view_mut::<2, 3>(0, 3).copy_from(&(-j_proj * skew(&p)));
    j
}

/// Apply the 6-vector update `delta = (rho, phi)`: `T <- (Exp(phi), rho) * T`.
pub fn apply_delta(pose: &RigidTransform, delta: &Vector6<f64>) -> RigidTransform {
    let rho = Vector3::new(delta[0], delta[1], delta[2]);
    let phi = Vector3::new(delta[3], delta[4], delta[5]);
    RigidTransform::from_axis_angle(&AxisAngle::new(phi), rho).compose(pose)
}

fn total_cost(
    pose: &RigidTransform,
    observations: &[(Vector3<f64>, Vector2<f64>)],
    camera: &StereoCameraModel,
) -> f64 {
    observations
        .iter()
        .map(|(q, z)| residual(pose, q, z, camera).norm_squared())
        .sum()
}

/// Minimise total squared reprojection error over a single pose, landmarks
/// held fixed. `observations` pairs each target point (in the target frame
/// the pose maps from) with its observed pixel.
pub fn optimize_pose(
    initial: &RigidTransform,
    observations: &[(Vector3<f64>, Vector2<f64>)],
    camera: &StereoCameraModel,
    config: &GnConfig,
) -> Result<(RigidTransform, GnReport), EstimatorError> {
    if observations.len() < 3 {
        return Err(EstimatorError::TooFewObservations(observations.len()));
    }
    let mut pose = *initial;
    let mut cost = total_cost(&pose, observations, camera);
    let initial_cost = cost;
    let mut report = GnReport {
        initial_cost,
        final_cost: cost,
        iterations: 0,
        warning: false,
    };
    if cost <= 1e-18 {
        return Ok((pose, report));
    }

    let mut lambda = 0.0f64;
    for iter in 0..config.max_iterations {
        let mut h = SMatrix::<f64, 6, 6>::zeros();
        let mut g = Vector6::zeros();
        for (q, z) in observations {
            let j = pose_jacobian(&pose, q, camera);
            let r = residual(&pose, q, z, camera);
            h += j.transpose() * j;
            g += j.transpose() * r;
        }

        let mut accepted = false;
        for _ in 0..8 {
            let mut damped = h;
            for i in 0..6 {
                damped[(i, i)] += lambda;
            }
            let Some(chol) = damped.cholesky() else {
                lambda = (lambda * 10.0).max(1e-9);
                continue;
            };
            let delta = chol.solve(&(-g));
            let candidate = apply_delta(&pose, &delta);
            let candidate_cost = total_cost(&candidate, observations, camera);
            if candidate_cost < cost {
                let decrease = cost - candidate_cost;
                pose = candidate;
                cost = candidate_cost;
                lambda /= 3.0;
                accepted = true;
                report.iterations = iter + 1;
                if decrease < config.relative_tolerance * cost.max(1e-16) {
                    report.final_cost = cost;
                    return Ok((pose, report));
                }
                break;
            }
            lambda = (lambda * 10.0).max(1e-9);
        }
        if !accepted {
            if iter == 0 {
                // Damping exhausted without any improvement.
                report.warning = true;
                report.final_cost = initial_cost;
                return Ok((*initial, report));
            }
            break;
        }
    }
    report.final_cost = cost;
    Ok((pose, report))
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RefinementConfig {
    pub max_iterations: usize,
    pub relative_tolerance: f64,
    /// When false, landmarks stay fixed and only poses move.
    pub adjust_landmarks: bool,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            relative_tolerance: 1e-9,
            adjust_landmarks: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RefinementOutcome {
    Refined {
        initial_cost: f64,
        final_cost: f64,
        iterations: usize,
    },
    /// Rank deficiency (or no usable observations): graph left unchanged.
    Skipped { reason: String },
}

/// Stereo projection (u, v, disparity) of a camera-frame point.
fn stereo_projection(p: &Vector3<f64>, camera: &StereoCameraModel) -> Vector3<f64> {
    let z = p.z.max(1e-6);
    Vector3::new(
        camera.focal_px * p.x / z + camera.principal_point[0],
        camera.focal_px * p.y / z + camera.principal_point[1],
        camera.focal_px * camera.baseline_m / z,
    )
}

/// Jacobian of the stereo projection w.r.t. the camera point, 3x3. The
/// disparity row pins the stereo scale, which pure left-image residuals
/// leave as a free gauge direction of the window.
fn stereo_projection_jacobian(p: &Vector3<f64>, camera: &StereoCameraModel) -> Matrix3<f64> {
    let z = p.z.max(1e-6);
    let inv_z = 1.0 / z;
    let f = camera.focal_px;
    Matrix3::new(
        f * inv_z,
        0.0,
        -f * p.x * inv_z * inv_z,
        0.0,
        f * inv_z,
        -f * p.y * inv_z * inv_z,
        0.0,
        0.0,
        -f * camera.baseline_m * inv_z * inv_z,
    )
}

struct WindowProblem {
    ids: Vec<VertexId>,
    /// T_v_anchor per window vertex (anchor's entry is the identity).
    poses: Vec<RigidTransform>,
    /// T_sv per window vertex.
    sensor: Vec<RigidTransform>,
    /// Inverse of the anchor's T_sv.
    anchor_inv_sv: RigidTransform,
    /// Landmarks in the anchor camera frame, keyed densely.
    landmark_points: Vec<Vector3<f64>>,
    landmark_fixed: bool,
    /// (window vertex index, landmark index, observed (u, v, disparity)).
    observations: Vec<(usize, usize, Vector3<f64>)>,
}

impl WindowProblem {
    fn point_in_camera(&self, k: usize, lm: usize) -> Vector3<f64> {
        let x_anchor_vehicle = self.anchor_inv_sv.apply(&self.landmark_points[lm]);
        let y = self.poses[k].apply(&x_anchor_vehicle);
        self.sensor[k].apply(&y)
    }

    fn cost(&self, camera: &StereoCameraModel) -> f64 {
        self.observations
            .iter()
            .map(|&(k, lm, z)| {
                let p = self.point_in_camera(k, lm);
                (stereo_projection(&p, camera) - z).norm_squared()
            })
            .sum()
    }
}

/// Windowed bundle adjustment over the last `window_size` vertices ending at
/// `newest`. The oldest pose in the window is held fixed as the gauge; on
/// success the refined relative transforms are written back onto the edges
/// and (when landmarks are adjusted) the refined landmark positions onto the
/// owning vertices. The total reprojection cost never increases across
/// accepted iterations; rank-deficient windows are skipped unchanged.
pub fn windowed_refinement(
    graph: &mut PoseGraph,
    newest: VertexId,
    window_size: usize,
    camera: &StereoCameraModel,
    config: &RefinementConfig,
) -> Result<RefinementOutcome, RefineError> {
    if !(2..=10).contains(&window_size) {
        return Err(RefineError::WindowSize(window_size));
    }
    graph
        .vertex(newest)
        .map_err(|_| RefineError::NoSuchVertex(newest))?;

    // Walk insertion parents back from the newest vertex.
    let mut ids = vec![newest];
    while ids.len() < window_size {
        let Some(parent) = graph.parent_of(*ids.last().unwrap()) else {
            break;
        };
        ids.push(parent);
    }
    ids.reverse();
    if ids.len() < 2 {
        return Err(RefineError::WindowTooSmall(ids.len()));
    }

    // Initial poses relative to the anchor, chained from the edges.
    let mut poses = vec![RigidTransform::identity()];
    for i in 1..ids.len() {
        let edge = graph
            .edge_between(ids[i - 1], ids[i])
            .expect("window follows insertion edges");
        let t = edge.transform.compose(&poses[i - 1]);
        poses.push(t);
    }
    let sensor: Vec<RigidTransform> = ids
        .iter()
        .map(|&v| graph.vertex(v).expect("window vertex exists").t_sv)
        .collect();
    let anchor_inv_sv = sensor[0].invert();

    // Group payload observations by landmark id; the measurement vector is
    // (u, v, disparity).
    let payloads: Vec<std::sync::Arc<Vec<VertexLandmark>>> = ids
        .iter()
        .map(|&v| graph.landmarks(v).expect("window payloads resident"))
        .collect();
    let mut by_landmark: HashMap<u64, Vec<(usize, Vector3<f64>, Vector3<f64>)>> = HashMap::new();
    for (k, payload) in payloads.iter().enumerate() {
        for lm in payload.iter() {
            by_landmark.entry(lm.id).or_default().push((
                k,
                Vector3::new(lm.pixel[0], lm.pixel[1], lm.disparity),
                lm.position,
            ));
        }
    }

    // Landmark table: multi-view landmarks become variables (or every
    // landmark when they are held fixed). The initial estimate comes from
    // the first observer, mapped into the anchor camera frame.
    let mut landmark_points = Vec::new();
    let mut landmark_ids = Vec::new();
    let mut observations = Vec::new();
    let mut sorted_ids: Vec<u64> = by_landmark.keys().copied().collect();
    sorted_ids.sort_unstable();
    for id in sorted_ids {
        let obs = &by_landmark[&id];
        if config.adjust_landmarks && obs.len() < 2 {
            continue;
        }
        let (k0, _, p0) = obs[0];
        // X_anchor_cam = T_sv_a * T_a_v * T_sv_v^-1 * p  (identity when v == anchor).
        let x = sensor[0]
            .apply(&poses[k0].invert().apply(&sensor[k0].invert().apply(&p0)));
        let lm_index = landmark_points.len();
        landmark_points.push(x);
        landmark_ids.push(id);
        for &(k, z, _) in obs {
            if k == 0 && !config.adjust_landmarks {
                // Anchor pose fixed and landmark fixed: constant residual.
                continue;
            }
            observations.push((k, lm_index, z));
        }
    }

    if observations.is_empty() {
        return Ok(RefinementOutcome::Skipped {
            reason: "no shared observations in window".into(),
        });
    }

    let mut problem = WindowProblem {
        ids: ids.clone(),
        poses,
        sensor,
        anchor_inv_sv,
        landmark_points,
        landmark_fixed: !config.adjust_landmarks,
        observations,
    };

    let initial_cost = problem.cost(camera);
    let mut cost = initial_cost;
    let mut iterations = 0usize;
    let mut lambda = 1e-6f64;
    let n_poses = problem.ids.len() - 1; // anchor excluded
    let n_lms = if problem.landmark_fixed {
        0
    } else {
        problem.landmark_points.len()
    };

    for iter in 0..config.max_iterations {
        // Assemble the normal equations in pose and landmark blocks.
        let mut hpp = DMatrix::<f64>::zeros(6 * n_poses, 6 * n_poses);
        let mut bp = DVector::<f64>::zeros(6 * n_poses);
        let mut hll: Vec<Matrix3<f64>> = vec![Matrix3::zeros(); n_lms];
        let mut bl: Vec<Vector3<f64>> = vec![Vector3::zeros(); n_lms];
        // Pose-landmark coupling blocks, grouped per landmark. Each vertex
        // observes a landmark at most once, so (pose, landmark) pairs are
        // unique within a group.
        let mut hpl_by_lm: Vec<Vec<(usize, SMatrix<f64, 6, 3>)>> = vec![Vec::new(); n_lms];

        for &(k, lm, z) in &problem.observations {
            let q_anchor_vehicle = problem.anchor_inv_sv.apply(&problem.landmark_points[lm]);
            let y = problem.poses[k].apply(&q_anchor_vehicle);
            let p = problem.sensor[k].apply(&y);
            let r = stereo_projection(&p, camera) - z;
            let j_proj = stereo_projection_jacobian(&p, camera);
            let r_sensor = problem.sensor[k].rotation();

            let j_pose: Option<SMatrix<f64, 3, 6>> = if k > 0 {
                let mut j = SMatrix::<f64, 3, 6>::zeros();
                let jp = j_proj * r_sensor;
                j.fixed_view_mut::<3, 3>(0, 0).copy_from(&jp);
                j.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-jp * skew(&y)));
                Some(j)
            } else {
                None
            };
            let j_lm: Option<Matrix3<f64>> = if !problem.landmark_fixed {
                Some(j_proj * r_sensor * problem.poses[k].rotation() * problem.anchor_inv_sv.rotation())
            } else {
                None
            };

            if let Some(jp) = j_pose {
                let ki = k - 1;
                let block = jp.transpose() * jp;
                for a in 0..6 {
                    for b in 0..6 {
                        hpp[(6 * ki + a, 6 * ki + b)] += block[(a, b)];
                    }
                }
                let gb = jp.transpose() * r;
                for a in 0..6 {
                    bp[6 * ki + a] += gb[a];
                }
                if let Some(jl) = j_lm {
                    hpl_by_lm[lm].push((ki, jp.transpose() * jl));
                }
            }
            if let Some(jl) = j_lm {
                hll[lm] += jl.transpose() * jl;
                bl[lm] += jl.transpose() * r;
            }
        }

        let mut accepted = false;
        for _ in 0..6 {
            // Damped landmark blocks and their inverses.
            let mut w_inv = Vec::with_capacity(n_lms);
            let mut degenerate = false;
            for block in hll.iter().take(n_lms) {
                let mut w = *block;
                for i in 0..3 {
                    w[(i, i)] += lambda;
                }
                match w.try_inverse() {
                    Some(inv) => w_inv.push(inv),
                    None => {
                        degenerate = true;
                        break;
                    }
                }
            }
            if degenerate {
                lambda *= 10.0;
                continue;
            }

            // Schur complement onto the pose block.
            let mut s = hpp.clone();
            for i in 0..6 * n_poses {
                s[(i, i)] += lambda;
            }
            let mut rhs = -bp.clone();
            for lm in 0..n_lms {
                let wi = &w_inv[lm];
                let entries = &hpl_by_lm[lm];
                for (k, block) in entries {
                    let contrib_rhs = block * (wi * bl[lm]);
                    for a in 0..6 {
                        rhs[6 * k + a] += contrib_rhs[a];
                    }
                    for (k2, block2) in entries {
                        let contrib = block * (wi * block2.transpose());
                        for a in 0..6 {
                            for b in 0..6 {
                                s[(6 * k + a, 6 * k2 + b)] -= contrib[(a, b)];
                            }
                        }
                    }
                }
            }

            let Some(chol) = s.clone().cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let delta_p = chol.solve(&rhs);

            // Back-substitute landmark updates.
            let mut delta_l = vec![Vector3::zeros(); n_lms];
            if n_lms > 0 {
                let mut acc: Vec<Vector3<f64>> = bl.clone();
                for (lm, entries) in hpl_by_lm.iter().enumerate() {
                    for (k, block) in entries {
                        let dp = Vector6::from_iterator((0..6).map(|i| delta_p[6 * k + i]));
                        acc[lm] += block.transpose() * dp;
                    }
                }
                for lm in 0..n_lms {
                    delta_l[lm] = -(w_inv[lm] * acc[lm]);
                }
            }

            // Candidate state.
            let mut candidate = WindowProblem {
                ids: problem.ids.clone(),
                poses: problem.poses.clone(),
                sensor: problem.sensor.clone(),
                anchor_inv_sv: problem.anchor_inv_sv,
                landmark_points: problem.landmark_points.clone(),
                landmark_fixed: problem.landmark_fixed,
                observations: problem.observations.clone(),
            };
            for k in 1..candidate.poses.len() {
                let dp = Vector6::from_iterator((0..6).map(|i| delta_p[6 * (k - 1) + i]));
                candidate.poses[k] = apply_delta(&candidate.poses[k], &dp);
            }
            for lm in 0..n_lms {
                candidate.landmark_points[lm] += delta_l[lm];
            }

            let candidate_cost = candidate.cost(camera);
            if candidate_cost < cost {
                let decrease = cost - candidate_cost;
                problem = candidate;
                cost = candidate_cost;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                iterations = iter + 1;
                if decrease < config.relative_tolerance * cost.max(1e-16) {
                    write_back(graph, &problem, &landmark_ids, config)?;
                    return Ok(RefinementOutcome::Refined {
                        initial_cost,
                        final_cost: cost,
                        iterations,
                    });
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            if iter == 0 && cost > 1e-15 && lambda > 1e3 {
                // Could not take a single step: rank-deficient window.
                return Ok(RefinementOutcome::Skipped {
                    reason: "rank-deficient normal equations".into(),
                });
            }
            break;
        }
    }

    write_back(graph, &problem, &landmark_ids, config)?;
    Ok(RefinementOutcome::Refined {
        initial_cost,
        final_cost: cost,
        iterations,
    })
}

fn write_back(
    graph: &mut PoseGraph,
    problem: &WindowProblem,
    landmark_ids: &[u64],
    config: &RefinementConfig,
) -> Result<(), RefineError> {
    // Edges rewritten from refined poses: T_next_prev = T_next_a * T_prev_a^-1.
    for i in 1..problem.ids.len() {
        let t = problem.poses[i].compose(&problem.poses[i - 1].invert());
        graph
            .rewrite_edge(problem.ids[i - 1], problem.ids[i], t)
            .map_err(|_| RefineError::NoSuchVertex(problem.ids[i]))?;
    }
    if config.adjust_landmarks {
        let index_of: HashMap<u64, usize> = landmark_ids
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, i))
            .collect();
        for (k, &v) in problem.ids.iter().enumerate() {
            let payload = graph.landmarks(v).map_err(|_| RefineError::NoSuchVertex(v))?;
            let mut changed = false;
            let mut updated: Vec<VertexLandmark> = payload.as_slice().to_vec();
            for lm in updated.iter_mut() {
                if let Some(&li) = index_of.get(&lm.id) {
                    lm.position = problem
                        .sensor[k]
                        .apply(&problem.poses[k].apply(&problem.anchor_inv_sv.apply(&problem.landmark_points[li])));
                    changed = true;
                }
            }
            if changed {
                graph
                    .rewrite_landmarks(v, updated)
                    .map_err(|_| RefineError::NoSuchVertex(v))?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::VertexData;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use rand_distr::{Distribution, Normal};

    fn camera() -> StereoCameraModel {
        StereoCameraModel::default()
    }

    fn scattered_points(n: usize, rng: &mut ChaCha12Rng) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| {
                let depth = rng.random_range(6.0..28.0);
                Vector3::new(
                    rng.random_range(-0.5..0.5) * depth,
                    rng.random_range(-0.3..0.3) * depth,
                    depth,
                )
            })
            .collect()
    }

    #[test]
    fn analytic_jacobian_matches_central_differences() {
        let cam = camera();
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let pose = RigidTransform::from_euler(0.05, -0.1, 0.4, Vector3::new(0.5, -0.2, 0.8));
        let h = 1e-6;
        let mut max_rel = 0.0f64;
        for q in scattered_points(50, &mut rng) {
            let j = pose_jacobian(&pose, &q, &cam);
            let z = Vector2::zeros();
            for axis in 0..6 {
                let mut dp = Vector6::zeros();
                dp[axis] = h;
                let mut dm = Vector6::zeros();
                dm[axis] = -h;
                let rp = residual(&apply_delta(&pose, &dp), &q, &z, &cam);
                let rm = residual(&apply_delta(&pose, &dm), &q, &z, &cam);
                let fd = (rp - rm) / (2.0 * h);
                for row in 0..2 {
                    let a = j[(row, axis)];
                    let d = fd[row];
                    let scale = a.abs().max(d.abs()).max(1e-3);
                    max_rel = max_rel.max((a - d).abs() / scale);
                }
            }
        }
        assert!(max_rel < 1e-5, "max relative jacobian error {max_rel}");
    }

    #[test]
    fn ground_truth_initial_is_fixed_point() {
        let cam = camera();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let truth = RigidTransform::from_euler(0.02, -0.03, 0.3, Vector3::new(1.0, 0.5, -0.2));
        let points = scattered_points(60, &mut rng);
        let observations: Vec<(Vector3<f64>, Vector2<f64>)> = points
            .iter()
            .map(|q| {
                let p = truth.apply(q);
                (*q, cam.project(&p).unwrap())
            })
            .collect();
        let (pose, report) = optimize_pose(&truth, &observations, &cam, &GnConfig::default()).unwrap();
        assert!(report.final_cost < 1e-15);
        let diff = pose.compose(&truth.invert());
        let (r, t) = diff.deviation_from_identity();
        assert!(r < 1e-9 && t < 1e-9, "pose moved from the optimum");
    }

    #[test]
    fn perturbed_initial_converges_to_ground_truth() {
        let cam = camera();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let truth = RigidTransform::from_euler(0.0, 0.05, -0.2, Vector3::new(0.3, -0.8, 1.2));
        let points = scattered_points(80, &mut rng);
        let observations: Vec<(Vector3<f64>, Vector2<f64>)> = points
            .iter()
            .map(|q| (*q, cam.project(&truth.apply(q)).unwrap()))
            .collect();
        // 0.2 m translation and ~2 degrees of rotation off.
        let perturbed = RigidTransform::from_euler(0.02, 0.02, 0.025, Vector3::new(0.1, -0.1, 0.1))
            .compose(&truth);
        let (pose, report) =
            optimize_pose(&perturbed, &observations, &cam, &GnConfig::default()).unwrap();
        assert!(!report.warning);
        let diff = pose.compose(&truth.invert());
        let (_, t) = diff.deviation_from_identity();
        assert!(t < 1e-6, "translation error {t}");
        assert!(diff.rotation_magnitude() < 1e-6);
    }

    #[test]
    fn too_few_observations_rejected() {
        let cam = camera();
        let obs = vec![(Vector3::new(0.0, 0.0, 10.0), Vector2::new(336.0, 188.0)); 2];
        assert_eq!(
            optimize_pose(&RigidTransform::identity(), &obs, &cam, &GnConfig::default()).unwrap_err(),
            EstimatorError::TooFewObservations(2)
        );
    }

    /// Build a small graph of keyframes observing a shared landmark field,
    /// with optional pixel noise and optional edge corruption.
    fn build_window_graph(
        n_vertices: usize,
        noise_px: f64,
        corrupt_edges: bool,
        seed: u64,
    ) -> (PoseGraph, Vec<RigidTransform>) {
        let cam = camera();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, noise_px.max(1e-12)).unwrap();
        // Landmarks on the ground seen from ~12 m up, camera 45 deg down.
        let field: Vec<(u64, Vector3<f64>)> = (0..400)
            .map(|i| {
                (
                    i as u64,
                    Vector3::new(
                        rng.random_range(0.0..80.0),
                        rng.random_range(-15.0..15.0),
                        rng.random_range(0.0..0.5),
                    ),
                )
            })
            .collect();
        let look = crate::se3::rot_y(-std::f64::consts::FRAC_PI_4);
        let base_rot: nalgebra::Matrix3<f64> = nalgebra::Matrix3::from_columns(&[
            -nalgebra::Vector3::y(),
            -nalgebra::Vector3::z(),
            nalgebra::Vector3::x(),
        ]);
        let t_sv = RigidTransform::identity(); // camera frame == vehicle frame here
        let mut g = PoseGraph::new();
        let mut world_poses = Vec::new();
        let mut prev: Option<VertexId> = None;
        let mut prev_pose = RigidTransform::identity();
        for i in 0..n_vertices {
            let cam_world = RigidTransform::new(
                base_rot * look,
                Vector3::new(2.0 * i as f64, 0.0, 12.0),
            )
            .unwrap();
            world_poses.push(cam_world);
            let inv = cam_world.invert();
            let mut landmarks = Vec::new();
            for &(id, p) in &field {
                let p_cam = inv.apply(&p);
                if p_cam.z < 2.0 || p_cam.z > 40.0 || !cam.in_stereo_frustum(&p_cam) {
                    continue;
                }
                let px = cam.project(&p_cam).unwrap();
                let d = cam.disparity(&p_cam).unwrap();
                let (px, d) = if noise_px > 0.0 {
                    (
                        Vector2::new(px.x + noise.sample(&mut rng), px.y + noise.sample(&mut rng)),
                        d + noise.sample(&mut rng) * std::f64::consts::SQRT_2,
                    )
                } else {
                    (px, d)
                };
                let rec = crate::camera::ObservationRecord {
                    descriptor_id: id,
                    pixel: [px.x, px.y],
                    disparity: d,
                };
                if let Ok(p3) = cam.triangulate(&rec) {
                    landmarks.push(VertexLandmark {
                        id,
                        position: p3,
                        pixel: [px.x, px.y],
                        disparity: d,
                    });
                }
            }
            let data = VertexData {
                timestamp: i as f64,
                t_sv,
                landmarks,
            };
            let edge = prev.map(|p| {
                let mut t = cam_world.invert().compose(&prev_pose); // T_new_prev (camera==vehicle)
                if corrupt_edges {
                    let nudge = RigidTransform::from_euler(
                        rng.random_range(-0.01..0.01),
                        rng.random_range(-0.01..0.01),
                        rng.random_range(-0.01..0.01),
                        Vector3::new(
                            rng.random_range(-0.15..0.15),
                            rng.random_range(-0.15..0.15),
                            rng.random_range(-0.15..0.15),
                        ),
                    );
                    t = nudge.compose(&t);
                }
                (p, t)
            });
            prev = Some(g.add_keyframe(data, edge, true).unwrap());
            prev_pose = cam_world;
        }
        (g, world_poses)
    }

    #[test]
    fn already_optimal_window_is_a_fixed_point() {
        let (mut g, _) = build_window_graph(5, 0.0, false, 3);
        let edges_before: Vec<RigidTransform> =
            g.edges().iter().map(|e| e.transform).collect();
        let out = windowed_refinement(
            &mut g,
            VertexId(4),
            5,
            &camera(),
            &RefinementConfig::default(),
        )
        .unwrap();
        match out {
            RefinementOutcome::Refined { final_cost, .. } => assert!(final_cost < 1e-9),
            other => panic!("expected refinement, got {other:?}"),
        }
        for (before, after) in edges_before.iter().zip(g.edges().iter()) {
            let diff = before.compose(&after.transform.invert());
            let (r, t) = diff.deviation_from_identity();
            assert!(r < 1e-9 && t < 1e-9, "edge moved on an optimal window");
        }
    }

    #[test]
    fn corrupted_edges_recover_and_cost_decreases() {
        let (mut g, world_poses) = build_window_graph(5, 0.0, true, 4);
        let out = windowed_refinement(
            &mut g,
            VertexId(4),
            5,
            &camera(),
            &RefinementConfig::default(),
        )
        .unwrap();
        let RefinementOutcome::Refined {
            initial_cost,
            final_cost,
            ..
        } = out
        else {
            panic!("expected refinement");
        };
        assert!(final_cost < initial_cost);
        assert!(final_cost < 1e-6, "final cost {final_cost}");
        // The refined relative pose of the window end matches ground truth.
        let mut t = RigidTransform::identity();
        for i in 1..5 {
            let e = g.edge_between(VertexId(i - 1), VertexId(i)).unwrap();
            t = e.transform.compose(&t);
        }
        let truth = world_poses[4].invert().compose(&world_poses[0]);
        let diff = t.compose(&truth.invert());
        let (_, terr) = diff.deviation_from_identity();
        assert!(terr < 1e-4, "window end pose error {terr}");
    }

    #[test]
    fn noisy_window_cost_non_increasing() {
        let (mut g, _) = build_window_graph(5, 0.5, false, 5);
        let out = windowed_refinement(
            &mut g,
            VertexId(4),
            5,
            &camera(),
            &RefinementConfig::default(),
        )
        .unwrap();
        let RefinementOutcome::Refined {
            initial_cost,
            final_cost,
            ..
        } = out
        else {
            panic!("expected refinement");
        };
        assert!(final_cost <= initial_cost);
    }

    #[test]
    fn landmarks_fixed_switch_moves_only_poses() {
        let (mut g, _) = build_window_graph(4, 0.2, true, 6);
        let payload_before = g.landmarks(VertexId(2)).unwrap().as_slice().to_vec();
        let cfg = RefinementConfig {
            adjust_landmarks: false,
            ..RefinementConfig::default()
        };
        windowed_refinement(&mut g, VertexId(3), 4, &camera(), &cfg).unwrap();
        let payload_after = g.landmarks(VertexId(2)).unwrap();
        assert_eq!(payload_before.as_slice(), payload_after.as_slice());
    }

    #[test]
    fn window_size_one_rejected() {
        let (mut g, _) = build_window_graph(3, 0.0, false, 7);
        assert_eq!(
            windowed_refinement(&mut g, VertexId(2), 1, &camera(), &RefinementConfig::default())
                .unwrap_err(),
            RefineError::WindowSize(1)
        );
    }

    #[test]
    fn disjoint_observations_skip_gracefully() {
        // Two vertices with entirely different landmark ids: nothing shared.
        let mut g = PoseGraph::new();
        let mk = |base: u64| VertexData {
            timestamp: 0.0,
            t_sv: RigidTransform::identity(),
            landmarks: (0..10)
                .map(|i| VertexLandmark {
                    id: base + i,
                    position: Vector3::new(0.1 * i as f64, 0.0, 10.0),
                    pixel: [300.0, 200.0],
                    disparity: 4.0,
                })
                .collect(),
        };
        let v0 = g.add_keyframe(mk(0), None, true).unwrap();
        let v1 = g
            .add_keyframe(
                mk(1000),
                Some((v0, RigidTransform::from_translation(Vector3::new(-1.0, 0.0, 0.0)))),
                true,
            )
            .unwrap();
        let edges_before: Vec<RigidTransform> = g.edges().iter().map(|e| e.transform).collect();
        let out = windowed_refinement(&mut g, v1, 2, &camera(), &RefinementConfig::default()).unwrap();
        assert!(matches!(out, RefinementOutcome::Skipped { .. }));
        for (b, e) in edges_before.iter().zip(g.edges()) {
            assert_eq!(*b, e.transform, "skip must leave the graph unchanged");
        }
    }

    #[test]
    fn apply_delta_zero_is_identity() {
        let t = RigidTransform::from_euler(0.1, 0.2, 0.3, Vector3::new(1.0, 2.0, 3.0));
        let t2 = apply_delta(&t, &Vector6::zeros());
        assert_abs_diff_eq!(t2.translation(), t.translation(), epsilon = 1e-15);
    }
}
