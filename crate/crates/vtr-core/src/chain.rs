//! Return-phase localisation chain.
//!
//! Tree naming: the *trunk* is the spatially closest privileged vertex, the
//! *branch* the privileged vertex of the last successful localisation, the
//! *twig* its live counterpart and the *leaf* the newest live vertex. The
//! chain carries the live estimate `T_lt` (leaf from trunk); the controller
//! reads it at full rate while visual localisation refreshes it per keyframe.
//!
//! Localisation runs in four stages: landmark migration into the trunk
//! frame, descriptor matching against all migrated landmarks, MLESAC pose
//! estimation and fixed-landmark Gauss-Newton refinement.

use nalgebra::Vector3;
use rand::Rng;
use thiserror::Error;

use crate::camera::{ObservationFrame, StereoCameraModel};
use crate::graph::{GraphError, PoseGraph, VertexId};
use crate::matching::{match_descriptors, FeatureSet};
use crate::mlesac::{mlesac_pose_seeded, EstimatorError, MlesacConfig};
use crate::optimize::{optimize_pose, GnConfig};
use crate::se3::RigidTransform;

#[derive(Debug, Error, PartialEq)]
pub enum ChainError {
    #[error("chain is not initialised")]
    Uninitialized,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Error)]
pub enum LocalizeError {
    #[error("no descriptor matches against the migrated map")]
    NoMatches,
    #[error("robust estimation failed: {0}")]
    Estimation(#[from] EstimatorError),
    #[error("{inliers} inliers below the localisation floor {floor}")]
    TooFewInliers { inliers: usize, floor: usize },
    #[error("estimate deviates {deviation_m:.2} m from the prior (gate {gate_m:.2} m)")]
    PriorGate { deviation_m: f64, gate_m: f64 },
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    /// Privileged vertices migrated on each side of the trunk.
    pub migration_radius: usize,
    /// Minimum accepted localisation inliers.
    pub min_inliers: usize,
    /// Reject localisations deviating further than this from the prior (m).
    pub max_prior_deviation_m: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            migration_radius: 5,
            min_inliers: 15,
            max_prior_deviation_m: 5.0,
        }
    }
}

/// Privileged landmarks re-expressed in the trunk's camera frame.
#[derive(Debug, Clone)]
pub struct MigratedMap {
    pub origin: VertexId,
    pub ids: Vec<u64>,
    pub points: Vec<Vector3<f64>>,
    pub sources: Vec<VertexId>,
}

impl MigratedMap {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// The live localisation chain state.
#[derive(Debug, Clone)]
pub struct LocalizationChain {
    trunk: VertexId,
    branch: VertexId,
    twig: Option<VertexId>,
    leaf: Option<VertexId>,
    /// Prior estimate `T_lt`: trunk-frame coordinates into the leaf frame.
    t_leaf_trunk: RigidTransform,
    /// Last localised branch-to-twig transform.
    t_twig_branch: Option<RigidTransform>,
    /// Vehicle-to-sensor transform captured at the latest live frame.
    leaf_t_sv: RigidTransform,
    last_vo_time: f64,
    last_localization_time: Option<f64>,
    consecutive_failures: u32,
    update_count: u64,
}

impl LocalizationChain {
    /// Start the chain at a privileged vertex (normally the teach path end).
    pub fn start(
        trunk: VertexId,
        t_leaf_trunk: RigidTransform,
        leaf_t_sv: RigidTransform,
        time: f64,
    ) -> Self {
        Self {
            trunk,
            branch: trunk,
            twig: None,
            leaf: None,
            t_leaf_trunk,
            t_twig_branch: None,
            leaf_t_sv,
            last_vo_time: time,
            last_localization_time: None,
            consecutive_failures: 0,
            update_count: 0,
        }
    }

    pub fn trunk(&self) -> VertexId {
        self.trunk
    }

    pub fn branch(&self) -> VertexId {
        self.branch
    }

    pub fn twig(&self) -> Option<VertexId> {
        self.twig
    }

    pub fn leaf(&self) -> Option<VertexId> {
        self.leaf
    }

    /// The live prior `T_lt` (leaf from trunk).
    pub fn leaf_from_trunk(&self) -> &RigidTransform {
        &self.t_leaf_trunk
    }

    /// `T_tl`: the leaf pose expressed at the trunk. Its translation is the
    /// vehicle position in the trunk frame.
    pub fn trunk_from_leaf(&self) -> RigidTransform {
        self.t_leaf_trunk.invert()
    }

    pub fn twig_from_branch(&self) -> Option<&RigidTransform> {
        self.t_twig_branch.as_ref()
    }

    pub fn leaf_t_sv(&self) -> &RigidTransform {
        &self.leaf_t_sv
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    pub fn consecutive_failures(&self) -> u32 {
        self.consecutive_failures
    }

    pub fn last_vo_time(&self) -> f64 {
        self.last_vo_time
    }

    pub fn last_localization_time(&self) -> Option<f64> {
        self.last_localization_time
    }

    /// Fold a VO step into the prior and re-select the trunk.
    ///
    /// `t_leafnew_leafold` maps points of the previous live frame into the
    /// new one. After composing, the trunk moves to the privileged vertex
    /// with the smallest estimated translation distance to the leaf and the
    /// prior is re-anchored through the privileged edges.
    pub fn update_on_vo(
        &mut self,
        t_leafnew_leafold: &RigidTransform,
        graph: &PoseGraph,
        leaf_t_sv: RigidTransform,
        time: f64,
    ) -> Result<(), ChainError> {
        self.t_leaf_trunk = t_leafnew_leafold.compose(&self.t_leaf_trunk);
        self.leaf_t_sv = leaf_t_sv;
        self.last_vo_time = time;
        self.update_count += 1;
        self.reselect_trunk(graph)
    }

    /// Exhaustive trunk re-selection over the privileged path.
    fn reselect_trunk(&mut self, graph: &PoseGraph) -> Result<(), ChainError> {
        let mut best = self.trunk;
        let mut best_distance = self.t_leaf_trunk.invert().translation().norm();
        for &candidate in graph.privileged_path() {
            if candidate == self.trunk {
                continue;
            }
            let t_tc = graph.privileged_transform(self.trunk, candidate)?;
            let distance = self
                .t_leaf_trunk
                .compose(&t_tc)
                .invert()
                .translation()
                .norm();
            if distance < best_distance {
                best = candidate;
                best_distance = distance;
            }
        }
        if best != self.trunk {
            let t_tc = graph.privileged_transform(self.trunk, best)?;
            self.t_leaf_trunk = self.t_leaf_trunk.compose(&t_tc);
            self.trunk = best;
        }
        Ok(())
    }

    /// Register the newest live keyframe vertex as the leaf.
    pub fn set_leaf(&mut self, leaf: VertexId) {
        self.leaf = Some(leaf);
    }

    /// Fold in a successful localisation: the fresh `T_lt` replaces the
    /// prior, the branch moves to the trunk and the twig to the leaf.
    pub fn record_localization(&mut self, t_leaf_trunk: RigidTransform, time: f64) {
        self.t_leaf_trunk = t_leaf_trunk;
        self.branch = self.trunk;
        self.twig = self.leaf;
        self.t_twig_branch = Some(t_leaf_trunk);
        self.last_localization_time = Some(time);
        self.consecutive_failures = 0;
    }

    pub fn record_localization_failure(&mut self) {
        self.consecutive_failures += 1;
    }
}

/// Stage (i): migrate the landmarks of a privileged window into the trunk's
/// camera frame: `p_trunk_cam = T_sv_t * T_t_v * T_sv_v^-1 * p_v_cam`.
/// Duplicate descriptor ids from different source vertices are retained.
pub fn migrate_landmarks(
    graph: &PoseGraph,
    trunk: VertexId,
    radius: usize,
) -> Result<MigratedMap, GraphError> {
    let window = graph.local_window(trunk, radius)?;
    let t_sv_trunk = graph.vertex(trunk)?.t_sv;
    let mut map = MigratedMap {
        origin: trunk,
        ids: Vec::new(),
        points: Vec::new(),
        sources: Vec::new(),
    };
    for (v, t_trunk_v) in window {
        let t_sv_v = graph.vertex(v)?.t_sv;
        let to_trunk_cam = t_sv_trunk.compose(&t_trunk_v).compose(&t_sv_v.invert());
        for lm in graph.landmarks(v)?.iter() {
            map.ids.push(lm.id);
            map.points.push(to_trunk_cam.apply(&lm.position));
            map.sources.push(v);
        }
    }
    Ok(map)
}

/// Result of one localisation attempt.
#[derive(Debug, Clone)]
pub struct LocalizationOutcome {
    /// Vehicle-frame `T_lt` (leaf from trunk).
    pub t_leaf_trunk: RigidTransform,
    pub inliers: usize,
    pub matches: usize,
    pub iterations: u32,
}

/// Stages (ii)-(iv): match the leaf frame against all migrated landmarks,
/// estimate `T_lt` with MLESAC and refine it with landmarks fixed.
///
/// All geometry runs in camera frames; the vehicle-to-sensor transforms of
/// leaf and trunk convert the result into the vehicle-frame `T_lt` the chain
/// stores. The prior gates the accepted translation.
#[allow(clippy::too_many_arguments)]
pub fn localize(
    leaf_frame: &ObservationFrame,
    map: &MigratedMap,
    prior_leaf_trunk: &RigidTransform,
    leaf_t_sv: &RigidTransform,
    trunk_t_sv: &RigidTransform,
    camera: &StereoCameraModel,
    chain_config: &ChainConfig,
    mlesac_config: &MlesacConfig,
    confusion_rate: f64,
    rng: &mut impl Rng,
) -> Result<LocalizationOutcome, LocalizeError> {
    let features = FeatureSet::from_frame(leaf_frame, camera);
    let mut matches = match_descriptors(&features.ids, &map.ids, confusion_rate, rng);
    if matches.is_empty() {
        return Err(LocalizeError::NoMatches);
    }
    // Camera-frame prior: T_cam = T_sv_l * T_lt * T_sv_t^-1.
    let prior_cam = leaf_t_sv
        .compose(prior_leaf_trunk)
        .compose(&trunk_t_sv.invert());
    let estimate = mlesac_pose_seeded(
        &mut matches,
        &features.pixels,
        &features.points,
        &map.points,
        Some(&prior_cam),
        camera,
        mlesac_config,
        rng,
    )?;

    // Fixed-landmark refinement over the inliers.
    let observations: Vec<(Vector3<f64>, nalgebra::Vector2<f64>)> = estimate
        .inlier_indices
        .iter()
        .map(|&i| {
            let m = &matches[i];
            (map.points[m.target_index], features.pixels[m.frame_index])
        })
        .collect();
    let (t_cam, _) = optimize_pose(
        &estimate.transform,
        &observations,
        camera,
        &GnConfig::default(),
    )?;

    if estimate.inlier_count() < chain_config.min_inliers {
        return Err(LocalizeError::TooFewInliers {
            inliers: estimate.inlier_count(),
            floor: chain_config.min_inliers,
        });
    }

    // Camera-frame estimate -> vehicle frame: T_lt = T_sv_l^-1 * T_cam * T_sv_t.
    let t_vehicle = leaf_t_sv.invert().compose(&t_cam).compose(trunk_t_sv);

    let deviation = (t_vehicle.translation() - prior_leaf_trunk.translation()).norm();
    if deviation > chain_config.max_prior_deviation_m {
        return Err(LocalizeError::PriorGate {
            deviation_m: deviation,
            gate_m: chain_config.max_prior_deviation_m,
        });
    }

    Ok(LocalizationOutcome {
        t_leaf_trunk: t_vehicle,
        inliers: estimate.inlier_count(),
        matches: matches.len(),
        iterations: estimate.iterations,
    })
}

/// Camera-frame orientation error between the leaf and trunk views:
/// `T_err = T_sv_leaf * T_lt * T_sv_trunk^-1`, the quantity the active
/// gimbal pointing drives toward identity.
pub fn camera_frame_error(
    chain: &LocalizationChain,
    graph: &PoseGraph,
) -> Result<RigidTransform, ChainError> {
    let trunk_t_sv = graph.vertex(chain.trunk())?.t_sv;
    Ok(chain
        .leaf_t_sv()
        .compose(chain.leaf_from_trunk())
        .compose(&trunk_t_sv.invert()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{VertexData, VertexLandmark};
    use crate::se3::rot_y;
    use crate::world::{Extent, HeightProfile, LandmarkWorld};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    /// Straight privileged path along +x with 2 m spacing; camera frame ==
    /// vehicle frame (identity t_sv) unless stated otherwise.
    fn straight_graph(n: usize, t_sv: RigidTransform) -> PoseGraph {
        let mut g = PoseGraph::new();
        let mut prev = None;
        for i in 0..n {
            let data = VertexData {
                timestamp: i as f64,
                t_sv,
                landmarks: vec![],
            };
            let edge = prev.map(|p| {
                (
                    p,
                    RigidTransform::from_translation(Vector3::new(-2.0, 0.0, 0.0)),
                )
            });
            prev = Some(g.add_keyframe(data, edge, true).unwrap());
        }
        g
    }

    #[test]
    fn identity_vo_step_leaves_chain_unchanged() {
        let g = straight_graph(10, RigidTransform::identity());
        let mut chain = LocalizationChain::start(
            VertexId(5),
            RigidTransform::identity(),
            RigidTransform::identity(),
            0.0,
        );
        chain
            .update_on_vo(&RigidTransform::identity(), &g, RigidTransform::identity(), 0.1)
            .unwrap();
        assert_eq!(chain.trunk(), VertexId(5));
        let (r, t) = chain.leaf_from_trunk().deviation_from_identity();
        assert!(r == 0.0 && t == 0.0);
        assert_eq!(chain.update_count(), 1);
    }

    #[test]
    fn trunk_advances_past_midpoint_and_reanchors() {
        let g = straight_graph(10, RigidTransform::identity());
        let mut chain = LocalizationChain::start(
            VertexId(5),
            RigidTransform::identity(),
            RigidTransform::identity(),
            0.0,
        );
        // Leaf advances +1.2 m along x: past the midpoint to vertex 6.
        let step = RigidTransform::from_translation(Vector3::new(-1.2, 0.0, 0.0));
        chain
            .update_on_vo(&step, &g, RigidTransform::identity(), 0.1)
            .unwrap();
        assert_eq!(chain.trunk(), VertexId(6));
        // Re-anchored prior: the leaf sits 0.8 m before vertex 6.
        let p = chain.trunk_from_leaf();
        assert_abs_diff_eq!(
            p.translation(),
            &Vector3::new(-0.8, 0.0, 0.0),
            epsilon = 1e-12
        );
        // Oracle: composing the prior with the privileged edge between the
        // old and new trunk reproduces the re-anchored transform.
        let edge = g
            .edge_between(VertexId(5), VertexId(6))
            .unwrap()
            .transform;
        let oracle = step.compose(&edge.invert());
        let diff = chain.leaf_from_trunk().compose(&oracle.invert());
        let (r, t) = diff.deviation_from_identity();
        assert!(r < 1e-12 && t < 1e-12);
    }

    #[test]
    fn pure_z_offset_keeps_trunk_and_grows_z() {
        let g = straight_graph(10, RigidTransform::identity());
        let mut chain = LocalizationChain::start(
            VertexId(4),
            RigidTransform::identity(),
            RigidTransform::identity(),
            0.0,
        );
        let climb = RigidTransform::from_translation(Vector3::new(0.0, 0.0, -0.5));
        chain
            .update_on_vo(&climb, &g, RigidTransform::identity(), 0.1)
            .unwrap();
        assert_eq!(chain.trunk(), VertexId(4));
        // Leaf climbed 0.5 m: its trunk-frame position gains +0.5 z.
        assert_abs_diff_eq!(
            chain.trunk_from_leaf().translation(),
            &Vector3::new(0.0, 0.0, 0.5),
            epsilon = 1e-12
        );
        chain
            .update_on_vo(&climb, &g, RigidTransform::identity(), 0.2)
            .unwrap();
        assert_abs_diff_eq!(
            chain.trunk_from_leaf().translation(),
            &Vector3::new(0.0, 0.0, 1.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn trunk_is_globally_minimal_after_updates() {
        let g = straight_graph(30, RigidTransform::identity());
        let mut chain = LocalizationChain::start(
            VertexId(29),
            RigidTransform::identity(),
            RigidTransform::identity(),
            0.0,
        );
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let mut travelled = 0.0;
        for k in 0..60 {
            let dx = rng.random_range(0.3..1.5);
            travelled += dx;
            let step = RigidTransform::from_translation(Vector3::new(
                dx,
                rng.random_range(-0.2..0.2),
                rng.random_range(-0.1..0.1),
            ));
            chain
                .update_on_vo(&step, &g, RigidTransform::identity(), k as f64 * 0.1)
                .unwrap();
            // Exhaustive check: no privileged vertex is strictly closer.
            let here = chain.trunk();
            let d_here = chain.trunk_from_leaf().translation().norm();
            for &c in g.privileged_path() {
                let t = g.privileged_transform(here, c).unwrap();
                let d = chain
                    .leaf_from_trunk()
                    .compose(&t)
                    .invert()
                    .translation()
                    .norm();
                assert!(
                    d >= d_here - 1e-12,
                    "vertex {c} at {d:.4} closer than trunk {here} at {d_here:.4}"
                );
            }
            if travelled > 55.0 {
                break;
            }
        }
    }

    #[test]
    fn migrate_radius_zero_returns_own_landmarks_unchanged() {
        let t_sv = RigidTransform::from_euler(0.1, -0.2, 0.4, Vector3::new(0.1, 0.0, -0.1));
        let mut g = PoseGraph::new();
        let landmarks = vec![
            VertexLandmark {
                id: 3,
                position: Vector3::new(1.0, -2.0, 14.0),
                pixel: [300.0, 180.0],
                disparity: 3.0,
            },
            VertexLandmark {
                id: 9,
                position: Vector3::new(-0.5, 0.7, 9.0),
                pixel: [250.0, 210.0],
                disparity: 4.7,
            },
        ];
        g.add_keyframe(
            VertexData {
                timestamp: 0.0,
                t_sv,
                landmarks: landmarks.clone(),
            },
            None,
            true,
        )
        .unwrap();
        let map = migrate_landmarks(&g, VertexId(0), 0).unwrap();
        assert_eq!(map.len(), 2);
        for (i, lm) in landmarks.iter().enumerate() {
            assert_abs_diff_eq!(map.points[i], lm.position, epsilon = 1e-12);
            assert_eq!(map.ids[i], lm.id);
            assert_eq!(map.sources[i], VertexId(0));
        }
    }

    #[test]
    fn migrate_single_edge_matches_hand_composition() {
        // Two vertices with distinct gimbal states; migrate the neighbour's
        // landmark into the trunk camera frame by hand and compare.
        let t_sv_trunk = RigidTransform::from_euler(0.0, 0.3, 0.1, Vector3::new(0.05, 0.0, -0.1));
        let t_sv_other =
            RigidTransform::from_euler(0.02, 0.25, -0.2, Vector3::new(0.05, 0.0, -0.1));
        let edge = RigidTransform::from_euler(0.0, 0.0, 0.15, Vector3::new(-2.0, 0.3, 0.05));
        let lm = VertexLandmark {
            id: 42,
            position: Vector3::new(0.8, -0.4, 11.0),
            pixel: [350.0, 190.0],
            disparity: 3.8,
        };
        let mut g = PoseGraph::new();
        let v0 = g
            .add_keyframe(
                VertexData {
                    timestamp: 0.0,
                    t_sv: t_sv_trunk,
                    landmarks: vec![],
                },
                None,
                true,
            )
            .unwrap();
        let _v1 = g
            .add_keyframe(
                VertexData {
                    timestamp: 1.0,
                    t_sv: t_sv_other,
                    landmarks: vec![lm],
                },
                Some((v0, edge)),
                true,
            )
            .unwrap();
        let map = migrate_landmarks(&g, v0, 1).unwrap();
        assert_eq!(map.len(), 1);
        // Hand composition: trunk_cam <- trunk_vehicle <- other_vehicle <- other_cam.
        let t_v0_v1 = edge.invert();
        let expect = t_sv_trunk
            .compose(&t_v0_v1)
            .compose(&t_sv_other.invert())
            .apply(&lm.position);
        assert_abs_diff_eq!(map.points[0], expect, epsilon = 1e-9);
    }

    #[test]
    fn migrate_window_truncates_at_path_start() {
        let g = straight_graph(4, RigidTransform::identity());
        let map = migrate_landmarks(&g, VertexId(1), 3).unwrap();
        // Window [0..=3] truncated to the path, zero landmarks each: fine.
        assert_eq!(map.len(), 0);
        assert_eq!(map.origin, VertexId(1));
    }

    /// Shared setup for localisation tests: a world observed from a trunk
    /// pose, producing a single-vertex graph plus the migrated map.
    struct LocScene {
        world: LandmarkWorld,
        camera: StereoCameraModel,
        graph: PoseGraph,
        t_sv: RigidTransform,
        trunk_world: RigidTransform, // world-from-vehicle at the trunk
    }

    fn loc_scene() -> LocScene {
        let camera = StereoCameraModel {
            pixel_noise_sigma: 0.0,
            ..StereoCameraModel::default()
        };
        let world = LandmarkWorld::generate(
            21,
            Extent {
                x_min: -50.0,
                x_max: 80.0,
                y_min: -50.0,
                y_max: 50.0,
            },
            0.25,
            HeightProfile::Uniform { max: 1.0 },
            &[],
        )
        .unwrap();
        // Vehicle level at 12 m, camera 45 degrees down-forward.
        let base_rot: nalgebra::Matrix3<f64> = nalgebra::Matrix3::from_columns(&[
            -nalgebra::Vector3::y(),
            -nalgebra::Vector3::z(),
            nalgebra::Vector3::x(),
        ]);
        let cam_in_vehicle = RigidTransform::new(
            base_rot * rot_y(-std::f64::consts::FRAC_PI_4),
            Vector3::new(0.15, 0.0, -0.1),
        )
        .unwrap();
        let t_sv = cam_in_vehicle.invert();
        let trunk_world = RigidTransform::from_translation(Vector3::new(0.0, 0.0, 12.0));

        let cam_world = trunk_world.compose(&cam_in_vehicle);
        let frame = world.observe(&camera, &cam_world, 0.0, 77);
        let features = FeatureSet::from_frame(&frame, &camera);
        let landmarks: Vec<VertexLandmark> = (0..features.len())
            .map(|i| VertexLandmark {
                id: features.ids[i],
                position: features.points[i],
                pixel: [features.pixels[i].x, features.pixels[i].y],
                disparity: camera.focal_px * camera.baseline_m / features.points[i].z,
            })
            .collect();
        let mut graph = PoseGraph::new();
        graph
            .add_keyframe(
                VertexData {
                    timestamp: 0.0,
                    t_sv,
                    landmarks,
                },
                None,
                true,
            )
            .unwrap();
        LocScene {
            world,
            camera,
            graph,
            t_sv,
            trunk_world,
        }
    }

    fn localize_at_offset(scene: &LocScene, offset: Vector3<f64>) -> LocalizationOutcome {
        let leaf_world = RigidTransform::from_translation(offset).compose(&scene.trunk_world);
        let cam_world = leaf_world.compose(&scene.t_sv.invert());
        let frame = scene.world.observe(&scene.camera, &cam_world, 1.0, 99);
        let map = migrate_landmarks(&scene.graph, VertexId(0), 5).unwrap();
        let prior = leaf_world.invert().compose(&scene.trunk_world);
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        localize(
            &frame,
            &map,
            &prior,
            &scene.t_sv,
            &scene.t_sv,
            &scene.camera,
            &ChainConfig::default(),
            &MlesacConfig::default(),
            0.0,
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn coincident_pass_localizes_to_identity() {
        let scene = loc_scene();
        let outcome = localize_at_offset(&scene, Vector3::zeros());
        let (r, t) = outcome.t_leaf_trunk.deviation_from_identity();
        assert!(t < 1e-6, "translation deviation {t}");
        assert!(r < 1e-6, "rotation deviation {r}");
        assert!(outcome.inliers >= 30, "inliers {}", outcome.inliers);
    }

    #[test]
    fn altitude_offset_recovered_in_trunk_frame() {
        let scene = loc_scene();
        let outcome = localize_at_offset(&scene, Vector3::new(0.0, 0.0, 2.0));
        // Leaf position in the trunk frame is the translation of T_tl.
        let p = outcome.t_leaf_trunk.invert();
        assert_abs_diff_eq!(
            p.translation(),
            &Vector3::new(0.0, 0.0, 2.0),
            epsilon = 1e-6
        );
    }

    #[test]
    fn disjoint_descriptors_fail_localization() {
        let scene = loc_scene();
        let leaf_world = scene.trunk_world.compose(&scene.t_sv.invert());
        let frame = scene.world.observe(&scene.camera, &leaf_world, 1.0, 99);
        let mut map = migrate_landmarks(&scene.graph, VertexId(0), 5).unwrap();
        for id in map.ids.iter_mut() {
            *id += 1_000_000; // no shared descriptors
        }
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let err = localize(
            &frame,
            &map,
            &RigidTransform::identity(),
            &scene.t_sv,
            &scene.t_sv,
            &scene.camera,
            &ChainConfig::default(),
            &MlesacConfig::default(),
            0.0,
            &mut rng,
        )
        .unwrap_err();
        assert!(matches!(err, LocalizeError::NoMatches));
    }

    #[test]
    fn camera_frame_error_identity_when_aligned() {
        let t_sv = RigidTransform::from_euler(0.0, 0.7, 0.0, Vector3::new(0.1, 0.0, -0.1));
        let g = straight_graph(3, t_sv);
        let chain = LocalizationChain::start(VertexId(2), RigidTransform::identity(), t_sv, 0.0);
        let err = camera_frame_error(&chain, &g).unwrap();
        let (r, t) = err.deviation_from_identity();
        assert!(r < 1e-12 && t < 1e-12);
    }

    #[test]
    fn camera_frame_error_pure_leaf_gimbal_yaw() {
        // Trunk gimbal neutral, leaf gimbal yawed +10 degrees, identical
        // vehicle poses: the camera-frame error is a pure 10 degree yaw
        // about the vehicle z axis.
        let cfg = crate::gimbal::GimbalConfig {
            encoder_noise_sigma: 0.0,
            ..Default::default()
        };
        let yaw = 10.0f64.to_radians();
        let trunk_sv = crate::gimbal::gimbal_fk(0.0, cfg.look_down, 0.0, &cfg).unwrap();
        let leaf_sv = crate::gimbal::gimbal_fk(0.0, cfg.look_down, yaw, &cfg).unwrap();
        let g = straight_graph(2, trunk_sv);
        let chain = LocalizationChain::start(VertexId(1), RigidTransform::identity(), leaf_sv, 0.0);
        let err = camera_frame_error(&chain, &g).unwrap();
        assert_abs_diff_eq!(err.rotation_magnitude(), yaw, epsilon = 1e-12);
        let axis = err.axis_angle();
        let axis_in_vehicle = leaf_sv.invert().rotate(&axis.vector().normalize());
        assert_abs_diff_eq!(axis_in_vehicle.z.abs(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn camera_frame_error_random_matches_matrix_chain_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        for _ in 0..50 {
            let t_sv_trunk = crate::se3::tests_support::random_transform(&mut rng);
            let t_sv_leaf = crate::se3::tests_support::random_transform(&mut rng);
            let t_lt = crate::se3::tests_support::random_transform(&mut rng);
            let g = straight_graph(2, t_sv_trunk);
            let chain = LocalizationChain::start(VertexId(1), t_lt, t_sv_leaf, 0.0);
            let got = camera_frame_error(&chain, &g).unwrap();
            let want = t_sv_leaf.compose(&t_lt).compose(&t_sv_trunk.invert());
            let diff = got.compose(&want.invert());
            let (r, t) = diff.deviation_from_identity();
            assert!(r < 1e-12 && t < 1e-12);
        }
    }

    #[test]
    fn prior_composes_from_twig_branch_through_vo_steps() {
        // After a success the prior equals T*_wb; subsequent VO steps
        // composed onto T*_wb must reproduce the live prior while the trunk
        // holds still.
        let g = straight_graph(8, RigidTransform::identity());
        let mut chain = LocalizationChain::start(
            VertexId(4),
            RigidTransform::identity(),
            RigidTransform::identity(),
            0.0,
        );
        chain.set_leaf(VertexId(7));
        let localized = RigidTransform::from_euler(0.0, 0.0, 0.05, Vector3::new(0.2, -0.1, 0.3));
        chain.record_localization(localized, 1.0);

        let mut accumulated = RigidTransform::identity();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for k in 0..6 {
            let step = RigidTransform::from_euler(
                0.0,
                0.0,
                rng.random_range(-0.01..0.01),
                Vector3::new(
                    rng.random_range(-0.15..0.15),
                    rng.random_range(-0.1..0.1),
                    rng.random_range(-0.05..0.05),
                ),
            );
            accumulated = step.compose(&accumulated);
            chain
                .update_on_vo(&step, &g, RigidTransform::identity(), 1.0 + k as f64 * 0.1)
                .unwrap();
        }
        assert_eq!(chain.trunk(), VertexId(4), "trunk must not move in this test");
        let expect = accumulated.compose(chain.twig_from_branch().unwrap());
        let diff = chain.leaf_from_trunk().compose(&expect.invert());
        let (r, t) = diff.deviation_from_identity();
        assert!(r < 1e-12 && t < 1e-12, "prior diverged from composed VO chain");
    }

    #[test]
    fn localization_updates_branch_twig_and_failure_counter() {
        let mut chain = LocalizationChain::start(
            VertexId(5),
            RigidTransform::identity(),
            RigidTransform::identity(),
            0.0,
        );
        chain.record_localization_failure();
        chain.record_localization_failure();
        assert_eq!(chain.consecutive_failures(), 2);

        chain.set_leaf(VertexId(9));
        let t = RigidTransform::from_translation(Vector3::new(0.3, 0.1, 0.0));
        chain.record_localization(t, 1.5);
        assert_eq!(chain.consecutive_failures(), 0);
        assert_eq!(chain.branch(), VertexId(5));
        assert_eq!(chain.twig(), Some(VertexId(9)));
        assert_eq!(chain.last_localization_time(), Some(1.5));
        assert_eq!(chain.twig_from_branch().unwrap(), &t);
    }
}
