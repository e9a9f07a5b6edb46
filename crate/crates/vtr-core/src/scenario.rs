//! Scenario configuration: everything a run needs, in one TOML file.
//!
//! Every field has a default; the default scenario is a 450 m rectangular
//! loop with a 20 m gap between start and end, flown at 12 m over a flat
//! 200x200 m landmark field with a few container boxes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::StereoCameraModel;
use crate::chain::ChainConfig;
use crate::control::ControllerGains;
use crate::gimbal::GimbalConfig;
use crate::metrics::OutputFormat;
use crate::mlesac::MlesacConfig;
use crate::optimize::{GnConfig, RefinementConfig};
use crate::pipeline::{KeyframePolicy, PipelineConfig};
use crate::safety::SafetyTimeouts;
use crate::vehicle::{PlantConfig, WindModel};
use crate::world::{ContainerBox, Extent, HeightProfile};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario parse: {0}")]
    Parse(String),
    #[error("scenario serialise: {0}")]
    Serialize(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub seed: u64,
    pub extent: Extent,
    /// Ground landmark density (landmarks / m^2).
    pub density: f64,
    /// Uniform landmark height variation above ground (m).
    pub height_variation_m: f64,
    pub containers: Vec<ContainerBox>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            extent: Extent {
                x_min: -100.0,
                x_max: 100.0,
                y_min: -100.0,
                y_max: 100.0,
            },
            density: 0.25,
            height_variation_m: 1.0,
            containers: vec![
                ContainerBox {
                    center: [30.0, -15.0],
                    yaw: 0.4,
                    ..ContainerBox::default()
                },
                ContainerBox {
                    center: [-35.0, 10.0],
                    yaw: -0.8,
                    ..ContainerBox::default()
                },
                ContainerBox {
                    center: [5.0, 20.0],
                    yaw: 1.2,
                    ..ContainerBox::default()
                },
                ContainerBox {
                    center: [55.0, 20.0],
                    yaw: 0.0,
                    ..ContainerBox::default()
                },
                ContainerBox {
                    center: [-60.0, -25.0],
                    yaw: 0.3,
                    ..ContainerBox::default()
                },
                ContainerBox {
                    center: [0.0, -60.0],
                    yaw: -0.2,
                    ..ContainerBox::default()
                },
            ],
        }
    }
}

impl WorldConfig {
    pub fn height_profile(&self) -> HeightProfile {
        if self.height_variation_m > 0.0 {
            HeightProfile::Uniform {
                max: self.height_variation_m,
            }
        } else {
            HeightProfile::Flat
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeachConfig {
    /// Waypoints (m, world frame). At least two.
    pub waypoints: Vec<[f64; 3]>,
    /// Target teach speed (m/s).
    pub speed_mps: f64,
    /// Carrot look-ahead distance; zero picks `2 * speed` clamped to
    /// [4, 12] m.
    pub lookahead_m: f64,
    /// Waypoint-completion tolerance at the path end (m).
    pub completion_radius_m: f64,
}

impl Default for TeachConfig {
    fn default() -> Self {
        // 145 x 90 m rectangle, final leg stopped 20 m short of closing:
        // 145 + 90 + 145 + 70 = 450 m of taught path.
        Self {
            waypoints: vec![
                [-72.5, -45.0, 12.0],
                [72.5, -45.0, 12.0],
                [72.5, 45.0, 12.0],
                [-72.5, 45.0, 12.0],
                [-72.5, -25.0, 12.0],
            ],
            speed_mps: 3.0,
            lookahead_m: 0.0,
            completion_radius_m: 2.5,
        }
    }
}

impl TeachConfig {
    pub fn lookahead(&self) -> f64 {
        if self.lookahead_m > 0.0 {
            self.lookahead_m
        } else {
            (2.0 * self.speed_mps).clamp(4.0, 12.0)
        }
    }

    pub fn path_length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| {
                let a = nalgebra::Vector3::from(w[0]);
                let b = nalgebra::Vector3::from(w[1]);
                (b - a).norm()
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReturnMode {
    /// The path-following controller closes the loop on the vision estimate.
    ClosedLoop,
    /// The recorded teach trajectory is re-flown in reverse by the
    /// waypoint tracker (with optional offsets); the vision stack runs
    /// open-loop for evaluation.
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReturnConfig {
    pub mode: ReturnMode,
    /// Target return speed (m/s); also sets `v_des` of the controller.
    pub speed_mps: f64,
    /// Deliberate altitude offset of the scripted return (m).
    pub altitude_offset_m: f64,
    /// Distance to the first privileged vertex that completes the mission.
    pub completion_radius_m: f64,
}

impl Default for ReturnConfig {
    fn default() -> Self {
        Self {
            mode: ReturnMode::ClosedLoop,
            speed_mps: 3.0,
            altitude_offset_m: 0.0,
            completion_radius_m: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    /// Observation noise and per-frame detection draws.
    pub observation: u64,
    /// Estimator RNG (hypothesis sampling, descriptor confusion).
    pub estimator: u64,
    /// Gimbal encoder noise.
    pub encoder: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            observation: 101,
            estimator: 202,
            encoder: 303,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Limits {
    /// Hard wall on simulated time (s).
    pub max_sim_time_s: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            max_sim_time_s: 900.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VoConfig {
    pub confusion_rate: f64,
    pub mlesac: MlesacConfig,
    pub gauss_newton: GnConfig,
    pub keyframe: KeyframePolicy,
    pub refinement: RefinementConfig,
    pub refinement_window: usize,
}

impl Default for VoConfig {
    fn default() -> Self {
        let d = PipelineConfig::default();
        Self {
            confusion_rate: d.confusion_rate,
            mlesac: d.mlesac,
            gauss_newton: d.gauss_newton,
            keyframe: d.keyframe,
            refinement: d.refinement,
            refinement_window: d.refinement_window,
        }
    }
}

/// One runnable scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub name: String,
    pub world: WorldConfig,
    pub camera: StereoCameraModel,
    pub gimbal: GimbalConfig,
    pub wind: WindModel,
    pub plant: PlantConfig,
    pub gains: ControllerGains,
    pub safety: SafetyTimeouts,
    pub vo: VoConfig,
    pub chain: ChainConfig,
    pub teach: TeachConfig,
    #[serde(rename = "return")]
    pub return_: ReturnConfig,
    pub seeds: Seeds,
    pub output_format: OutputFormat,
    pub limits: Limits,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "default-loop".into(),
            world: WorldConfig::default(),
            camera: StereoCameraModel::default(),
            gimbal: GimbalConfig::default(),
            wind: WindModel::default(),
            plant: PlantConfig::default(),
            gains: ControllerGains::default(),
            safety: SafetyTimeouts::default(),
            vo: VoConfig::default(),
            chain: ChainConfig::default(),
            teach: TeachConfig::default(),
            return_: ReturnConfig::default(),
            seeds: Seeds::default(),
            output_format: OutputFormat::Csv,
            limits: Limits::default(),
        }
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ScenarioError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String, ScenarioError> {
        toml::to_string_pretty(self).map_err(|e| ScenarioError::Serialize(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.teach.waypoints.len() < 2 {
            return Err(ScenarioError::Invalid(format!(
                "need at least 2 teach waypoints, got {}",
                self.teach.waypoints.len()
            )));
        }
        if self.teach.speed_mps <= 0.0 || self.return_.speed_mps <= 0.0 {
            return Err(ScenarioError::Invalid(
                "teach and return speeds must be positive".into(),
            ));
        }
        if self.world.density <= 0.0 {
            return Err(ScenarioError::Invalid(
                "landmark density must be positive".into(),
            ));
        }
        let kf = &self.vo.keyframe;
        if kf.min_inliers == 0 || kf.max_translation_m <= 0.0 || kf.max_rotation_rad <= 0.0 {
            return Err(ScenarioError::Invalid(
                "keyframe policy thresholds must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Pipeline configuration assembled from the scenario sections.
    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            confusion_rate: self.vo.confusion_rate,
            mlesac: self.vo.mlesac.clone(),
            gauss_newton: self.vo.gauss_newton.clone(),
            keyframe: self.vo.keyframe.clone(),
            refinement: self.vo.refinement.clone(),
            refinement_window: self.vo.refinement_window,
            chain: self.chain.clone(),
            estimator_seed: self.seeds.estimator,
        }
    }

    /// Controller gains with `v_des` bound to the return speed.
    pub fn controller_gains(&self) -> ControllerGains {
        ControllerGains {
            v_des: self.return_.speed_mps,
            ..self.gains.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scenario_is_valid_450m_loop() {
        let s = Scenario::default();
        s.validate().unwrap();
        let len = s.teach.path_length();
        assert!((len - 450.0).abs() < 1e-9, "path length {len}");
    }

    #[test]
    fn toml_round_trip_is_identity() {
        let s = Scenario::default();
        let text = s.to_toml().unwrap();
        let back = Scenario::from_toml(&text).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let s = Scenario::from_toml(
            r#"
            name = "short"
            [teach]
            speed_mps = 7.0
            [return]
            mode = "scripted"
            altitude_offset_m = 2.0
            "#,
        )
        .unwrap();
        assert_eq!(s.name, "short");
        assert_eq!(s.teach.speed_mps, 7.0);
        assert_eq!(s.return_.mode, ReturnMode::Scripted);
        assert_eq!(s.return_.altitude_offset_m, 2.0);
        // Everything else at defaults.
        assert_eq!(s.camera, StereoCameraModel::default());
        assert_eq!(s.teach.waypoints, TeachConfig::default().waypoints);
    }

    #[test]
    fn invalid_scenarios_rejected() {
        let mut s = Scenario::default();
        s.teach.waypoints.truncate(1);
        assert!(s.validate().is_err());

        let mut s = Scenario::default();
        s.return_.speed_mps = 0.0;
        assert!(s.validate().is_err());

        let mut s = Scenario::default();
        s.vo.keyframe.max_translation_m = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn lookahead_scales_with_speed() {
        let mut t = TeachConfig {
            speed_mps: 3.0,
            ..TeachConfig::default()
        };
        assert_eq!(t.lookahead(), 6.0);
        t.speed_mps = 15.0;
        assert_eq!(t.lookahead(), 12.0);
        t.speed_mps = 1.0;
        assert_eq!(t.lookahead(), 4.0);
        t.lookahead_m = 5.5;
        assert_eq!(t.lookahead(), 5.5);
    }
}
