//! Vision-only teach-and-return navigation for a simulated multirotor.
//!
//! An outbound "learn" flight builds a relative, locally-metric pose graph
//! from simulated stereo observations; the "return" phase then flies the
//! path home in reverse by localising live views against the learnt map and
//! feeding a path-following controller. No global position is used anywhere
//! in the return loop.
//!
//! The crate is organised along the pipeline:
//!
//! * [`se3`] - rigid transform algebra;
//! * [`world`], [`camera`], [`gimbal`], [`vehicle`] - the deterministic simulator;
//! * [`matching`], [`mlesac`], [`optimize`] - the visual odometry estimators;
//! * [`graph`] - the privileged pose graph and its disk format;
//! * [`chain`] - trunk/branch/twig/leaf localisation bookkeeping;
//! * [`control`], [`safety`] - path-following, gimbal and mission control;
//! * [`pipeline`], [`scenario`], [`harness`], [`metrics`] - the scenario runner.

pub mod camera;
pub mod chain;
pub mod control;
pub mod gimbal;
pub mod graph;
pub mod harness;
pub mod matching;
pub mod metrics;
pub mod mlesac;
pub mod optimize;
pub mod pipeline;
pub mod safety;
pub mod scenario;
pub mod se3;
pub mod vehicle;
pub mod world;

pub use camera::{ObservationFrame, ObservationRecord, StereoCameraModel};
pub use chain::{LocalizationChain, MigratedMap};
pub use control::{ControlCommand, ControllerGains, MissionEvent, MissionState, PathReference};
pub use gimbal::{GimbalConfig, GimbalState};
pub use graph::{GraphEdge, GraphVertex, PoseGraph, VertexId};
pub use matching::FeatureMatch;
pub use mlesac::RobustEstimate;
pub use scenario::Scenario;
pub use se3::{AxisAngle, RigidTransform};
pub use vehicle::{VehicleState, WindModel};
pub use world::LandmarkWorld;
