//! Frame-by-frame navigation pipeline: feature extraction, visual odometry
//! against the last keyframe, keyframe promotion, windowed refinement and
//! (during the return) visual localisation against the privileged map.
//!
//! The pipeline runs strictly single-in-flight: each frame is processed to
//! completion before the next, which makes whole runs deterministic under a
//! seed. The stage boundaries mirror the threaded architecture the design
//! allows (extraction -> VO -> refinement -> localisation on a frame-by-frame
//! handoff), so timings are still collected per stage.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::camera::{ObservationFrame, StereoCameraModel};
use crate::chain::{
    camera_frame_error, localize, migrate_landmarks, ChainConfig, LocalizationChain,
};
use crate::graph::{PoseGraph, VertexData, VertexId, VertexLandmark};
use crate::matching::{match_descriptors, FeatureSet};
use crate::metrics::TimingCollector;
use crate::mlesac::{mlesac_pose, MlesacConfig};
use crate::optimize::{optimize_pose, windowed_refinement, GnConfig, RefinementConfig};
use crate::se3::RigidTransform;

/// Keyframe promotion thresholds: a frame becomes a keyframe when inliers
/// drop below the floor or the motion since the last keyframe exceeds a
/// translation or rotation bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KeyframePolicy {
    pub min_inliers: usize,
    pub max_translation_m: f64,
    pub max_rotation_rad: f64,
}

impl Default for KeyframePolicy {
    fn default() -> Self {
        Self {
            min_inliers: 120,
            max_translation_m: 2.0,
            max_rotation_rad: 10.0f64.to_radians(),
        }
    }
}

/// True when the frame must be promoted to a keyframe.
pub fn keyframe_decision(
    inliers: usize,
    translation_m: f64,
    rotation_rad: f64,
    policy: &KeyframePolicy,
) -> bool {
    inliers < policy.min_inliers
        || translation_m > policy.max_translation_m
        || rotation_rad > policy.max_rotation_rad
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Fraction of correct descriptor matches replaced with wrong pairings.
    pub confusion_rate: f64,
    pub mlesac: MlesacConfig,
    pub gauss_newton: GnConfig,
    pub keyframe: KeyframePolicy,
    pub refinement: RefinementConfig,
    /// Vertices in the refinement window.
    pub refinement_window: usize,
    pub chain: ChainConfig,
    /// Seed of the estimator RNG (hypothesis sampling, confusion draws).
    pub estimator_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            confusion_rate: 0.02,
            mlesac: MlesacConfig::default(),
            gauss_newton: GnConfig::default(),
            keyframe: KeyframePolicy::default(),
            refinement: RefinementConfig::default(),
            refinement_window: 7,
            chain: ChainConfig::default(),
            estimator_seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Learn,
    Return,
}

/// Per-localisation outcome surfaced to the harness.
#[derive(Debug, Clone)]
pub struct LocalizationRecord {
    pub leaf: VertexId,
    pub trunk: VertexId,
    pub success: bool,
    pub inliers: usize,
    pub matches: usize,
    /// Orientation error magnitudes of the accepted estimate.
    pub rot_err_vehicle_rad: Option<f64>,
    pub rot_err_camera_rad: Option<f64>,
    /// Failure detail, when the attempt failed.
    pub error: Option<String>,
    /// Trunk-frame shift of the leaf position produced by the accepted
    /// correction (estimate minus dead-reckoned prior).
    pub position_correction: Option<nalgebra::Vector3<f64>>,
}

/// Per-frame outcome surfaced to the harness.
#[derive(Debug, Clone, Default)]
pub struct FrameOutcome {
    pub vo_success: bool,
    pub vo_inliers: usize,
    pub keyframe: Option<VertexId>,
    pub localization: Option<LocalizationRecord>,
}

struct KeyframeRef {
    id: VertexId,
    t_sv: RigidTransform,
    ids: Vec<u64>,
    points: Vec<nalgebra::Vector3<f64>>,
}

/// The navigation stack state across a mission.
pub struct VtrPipeline {
    pub config: PipelineConfig,
    camera: StereoCameraModel,
    pub graph: PoseGraph,
    phase: Phase,
    chain: Option<LocalizationChain>,
    last_keyframe: Option<KeyframeRef>,
    /// Dead-reckoned vehicle transform from the last keyframe to the most
    /// recent successfully estimated frame.
    frame_from_keyframe: RigidTransform,
    /// Count of non-privileged (return) vertices, used to clip refinement
    /// windows so privileged vertices are never re-optimised after the learn
    /// phase ends.
    return_vertices: usize,
    rng: ChaCha12Rng,
    pub timers: TimingCollector,
    frame_count: u64,
    vo_failures: u32,
}

impl VtrPipeline {
    pub fn new(config: PipelineConfig, camera: StereoCameraModel) -> Self {
        let rng = ChaCha12Rng::seed_from_u64(config.estimator_seed);
        Self {
            config,
            camera,
            graph: PoseGraph::new(),
            phase: Phase::Learn,
            chain: None,
            last_keyframe: None,
            frame_from_keyframe: RigidTransform::identity(),
            return_vertices: 0,
            rng,
            timers: TimingCollector::default(),
            frame_count: 0,
            vo_failures: 0,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn chain(&self) -> Option<&LocalizationChain> {
        self.chain.as_ref()
    }

    pub fn camera(&self) -> &StereoCameraModel {
        &self.camera
    }

    pub fn frame_count(&self) -> u64 {
        self.frame_count
    }

    pub fn consecutive_vo_failures(&self) -> u32 {
        self.vo_failures
    }

    /// Camera-frame error for the active gimbal pointing (return phase).
    pub fn pointing_error(&self) -> Option<RigidTransform> {
        let chain = self.chain.as_ref()?;
        camera_frame_error(chain, &self.graph).ok()
    }

    /// Switch to the return phase: the chain starts at the last privileged
    /// vertex with the live dead-reckoned offset as its prior.
    pub fn begin_return(&mut self, time: f64) {
        let trunk = *self
            .graph
            .privileged_path()
            .last()
            .expect("return requires a taught path");
        let t_sv = self
            .last_keyframe
            .as_ref()
            .map(|k| k.t_sv)
            .unwrap_or_default();
        self.chain = Some(LocalizationChain::start(
            trunk,
            self.frame_from_keyframe,
            t_sv,
            time,
        ));
        self.phase = Phase::Return;
    }

    /// Process one captured frame with its encoder-derived `T_sv`.
    pub fn process_frame(
        &mut self,
        frame: &ObservationFrame,
        t_sv: RigidTransform,
        time: f64,
    ) -> FrameOutcome {
        self.frame_count += 1;
        let mut outcome = FrameOutcome::default();

        let t0 = Instant::now();
        let features = FeatureSet::from_frame(frame, &self.camera);
        self.timers.record("feature-extraction", t0.elapsed());

        let Some(kf) = &self.last_keyframe else {
            // First frame bootstraps the graph.
            let id = self.insert_keyframe(&features, t_sv, time, None);
            outcome.vo_success = true;
            outcome.vo_inliers = features.len();
            outcome.keyframe = Some(id);
            return outcome;
        };

        // Visual odometry against the last keyframe.
        let t0 = Instant::now();
        let vo = Self::estimate_frame(
            &features,
            kf,
            t_sv,
            &self.camera,
            &self.config,
            &mut self.rng,
        );
        self.timers.record("vo", t0.elapsed());

        let Some((t_frame_kf, inliers)) = vo else {
            self.vo_failures += 1;
            return outcome;
        };
        self.vo_failures = 0;
        outcome.vo_success = true;
        outcome.vo_inliers = inliers;

        // Chain update at every successful VO frame (not just keyframes).
        let step = t_frame_kf.compose(&self.frame_from_keyframe.invert());
        self.frame_from_keyframe = t_frame_kf;
        if let Some(chain) = self.chain.as_mut() {
            chain
                .update_on_vo(&step, &self.graph, t_sv, time)
                .expect("chain tracks a live graph");
        }

        let promote = keyframe_decision(
            inliers,
            t_frame_kf.translation().norm(),
            t_frame_kf.rotation_magnitude(),
            &self.config.keyframe,
        );
        if !promote {
            return outcome;
        }

        let kf_id = self.last_keyframe.as_ref().expect("checked above").id;
        let id = self.insert_keyframe(&features, t_sv, time, Some((kf_id, t_frame_kf)));
        outcome.keyframe = Some(id);

        // Windowed refinement over the most recent vertices. During the
        // return the window is clipped so only return vertices move; the
        // newest privileged vertex can only serve as the fixed anchor.
        let window = match self.phase {
            Phase::Learn => self.config.refinement_window.min(self.graph.len()),
            Phase::Return => self
                .config
                .refinement_window
                .min(self.return_vertices + 1)
                .min(self.graph.len()),
        };
        if window >= 2 {
            let t0 = Instant::now();
            let _ = windowed_refinement(
                &mut self.graph,
                id,
                window,
                &self.camera,
                &self.config.refinement,
            );
            self.timers.record("windowed-refinement", t0.elapsed());
        }

        // Localisation on every new return keyframe.
        if self.phase == Phase::Return {
            let t0 = Instant::now();
            outcome.localization = Some(self.localize_keyframe(frame, id, t_sv, time));
            self.timers.record("localization", t0.elapsed());
        }

        outcome
    }

    fn estimate_frame(
        features: &FeatureSet,
        kf: &KeyframeRef,
        t_sv: RigidTransform,
        camera: &StereoCameraModel,
        config: &PipelineConfig,
        rng: &mut ChaCha12Rng,
    ) -> Option<(RigidTransform, usize)> {
        let mut matches = match_descriptors(&features.ids, &kf.ids, config.confusion_rate, rng);
        if matches.len() < 3 {
            return None;
        }
        let estimate = mlesac_pose(
            &mut matches,
            &features.pixels,
            &features.points,
            &kf.points,
            camera,
            &config.mlesac,
            rng,
        )
        .ok()?;
        let observations: Vec<(nalgebra::Vector3<f64>, nalgebra::Vector2<f64>)> = estimate
            .inlier_indices
            .iter()
            .map(|&i| {
                let m = &matches[i];
                (kf.points[m.target_index], features.pixels[m.frame_index])
            })
            .collect();
        let (t_cam, _) = optimize_pose(
            &estimate.transform,
            &observations,
            camera,
            &config.gauss_newton,
        )
        .ok()?;
        // Camera-frame estimate to vehicle frame:
        // T_frame_kf = T_sv_frame^-1 * T_cam * T_sv_kf.
        let t_vehicle = t_sv.invert().compose(&t_cam).compose(&kf.t_sv);
        Some((t_vehicle, estimate.inlier_count()))
    }

    fn insert_keyframe(
        &mut self,
        features: &FeatureSet,
        t_sv: RigidTransform,
        time: f64,
        edge: Option<(VertexId, RigidTransform)>,
    ) -> VertexId {
        let landmarks: Vec<VertexLandmark> = (0..features.len())
            .map(|i| VertexLandmark {
                id: features.ids[i],
                position: features.points[i],
                pixel: [features.pixels[i].x, features.pixels[i].y],
                disparity: self.camera.focal_px * self.camera.baseline_m
                    / features.points[i].z.max(1e-9),
            })
            .collect();
        let privileged = self.phase == Phase::Learn;
        let id = self
            .graph
            .add_keyframe(
                VertexData {
                    timestamp: time,
                    t_sv,
                    landmarks,
                },
                edge,
                privileged,
            )
            .expect("pipeline inserts well-formed keyframes");
        if !privileged {
            self.return_vertices += 1;
        }
        self.last_keyframe = Some(KeyframeRef {
            id,
            t_sv,
            ids: features.ids.clone(),
            points: features.points.clone(),
        });
        self.frame_from_keyframe = RigidTransform::identity();
        if let Some(chain) = self.chain.as_mut() {
            if !privileged {
                chain.set_leaf(id);
            }
        }
        id
    }

    fn localize_keyframe(
        &mut self,
        frame: &ObservationFrame,
        leaf: VertexId,
        t_sv: RigidTransform,
        time: f64,
    ) -> LocalizationRecord {
        let chain = self.chain.as_mut().expect("return phase has a chain");
        let trunk = chain.trunk();
        let radius = self.config.chain.migration_radius;

        // Memory management: make the migration window resident up front and
        // let everything else leave memory (no-op until the graph is saved).
        let window_ids: Vec<VertexId> = self
            .graph
            .local_window(trunk, radius)
            .map(|w| w.into_iter().map(|(v, _)| v).collect())
            .unwrap_or_default();
        let _ = self.graph.prefetch(&window_ids);
        let mut keep = window_ids.clone();
        let newest = self.graph.len() as u64;
        for i in newest.saturating_sub(self.config.refinement_window as u64)..newest {
            keep.push(VertexId(i));
        }
        let _ = self.graph.evict_outside(&keep);

        let map = match migrate_landmarks(&self.graph, trunk, radius) {
            Ok(map) => map,
            Err(e) => {
                chain.record_localization_failure();
                return LocalizationRecord {
                    leaf,
                    trunk,
                    success: false,
                    inliers: 0,
                    matches: 0,
                    rot_err_vehicle_rad: None,
                    rot_err_camera_rad: None,
                    error: Some(format!("migration: {e}")),
                    position_correction: None,
                };
            }
        };
        let trunk_t_sv = self.graph.vertex(trunk).expect("trunk exists").t_sv;
        let prior = *chain.leaf_from_trunk();
        let result = localize(
            frame,
            &map,
            &prior,
            &t_sv,
            &trunk_t_sv,
            &self.camera,
            &self.config.chain,
            &self.config.mlesac,
            self.config.confusion_rate,
            &mut self.rng,
        );
        match result {
            Ok(outcome) => {
                let correction = outcome.t_leaf_trunk.invert().translation()
                    - prior.invert().translation();
                chain.record_localization(outcome.t_leaf_trunk, time);
                let rot_vehicle = outcome.t_leaf_trunk.rotation_magnitude();
                let rot_camera = camera_frame_error(chain, &self.graph)
                    .map(|e| e.rotation_magnitude())
                    .ok();
                LocalizationRecord {
                    leaf,
                    trunk,
                    success: true,
                    inliers: outcome.inliers,
                    matches: outcome.matches,
                    rot_err_vehicle_rad: Some(rot_vehicle),
                    rot_err_camera_rad: rot_camera,
                    error: None,
                    position_correction: Some(correction),
                }
            }
            Err(e) => {
                chain.record_localization_failure();
                LocalizationRecord {
                    leaf,
                    trunk,
                    success: false,
                    inliers: 0,
                    matches: 0,
                    rot_err_vehicle_rad: None,
                    rot_err_camera_rad: None,
                    error: Some(e.to_string()),
                    position_correction: None,
                }
            }
        }
    }
}
