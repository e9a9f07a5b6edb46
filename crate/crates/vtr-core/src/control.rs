//! Path-following control, reference generation, velocity estimation and the
//! mission state machine.
//!
//! All controller arithmetic happens in the trunk frame: the vehicle state is
//! the leaf pose/velocity expressed at the trunk, the reference lies on the
//! straight segment from the trunk to the next privileged vertex, and yaw is
//! the heading mismatch between leaf and trunk. Commands are (z-velocity,
//! yaw-rate, pitch, roll) as the autopilot consumes them.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::LocalizationChain;
use crate::graph::{PoseGraph, VertexId};

#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    #[error("velocity fit needs >= 2 samples spanning > 1 ms (got {samples} over {span_s:.6} s)")]
    DegenerateTimestamps { samples: usize, span_s: f64 },
    #[error("no next privileged vertex beyond {0}: path complete")]
    PathComplete(VertexId),
    #[error("illegal mission transition: {state:?} on {event:?}")]
    IllegalTransition {
        state: MissionState,
        event: MissionEvent,
    },
}

/// Tuned constants of the path-following and yaw controllers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerGains {
    /// z-axis damping ratio.
    pub zeta_z: f64,
    /// z-axis time constant (s).
    pub tau_z: f64,
    /// Yaw time constant (s).
    pub tau_yaw: f64,
    /// Lateral damping ratio.
    pub zeta_lat: f64,
    /// Lateral time constant (s).
    pub tau_lat: f64,
    /// Desired path speed (m/s).
    pub v_des: f64,
    /// Gravitational constant (m/s^2).
    pub gravity: f64,
    /// Pitch/roll command saturation (rad).
    pub max_tilt: f64,
    /// z-velocity command saturation (m/s).
    pub max_z_velocity: f64,
    /// Yaw-rate command saturation (rad/s).
    pub max_yaw_rate: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            zeta_z: 0.7,
            tau_z: 1.0,
            tau_yaw: 0.8,
            zeta_lat: 0.7,
            tau_lat: 1.2,
            v_des: 3.0,
            gravity: 9.81,
            max_tilt: 20.0f64.to_radians(),
            max_z_velocity: 3.0,
            max_yaw_rate: 1.2,
        }
    }
}

/// Autopilot-facing command tuple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlCommand {
    /// Commanded vertical velocity (m/s, up positive).
    pub z_velocity: f64,
    /// Commanded yaw rate (rad/s).
    pub yaw_rate: f64,
    /// Commanded pitch (rad).
    pub pitch: f64,
    /// Commanded roll (rad).
    pub roll: f64,
}

impl ControlCommand {
    pub fn zero() -> Self {
        Self {
            z_velocity: 0.0,
            yaw_rate: 0.0,
            pitch: 0.0,
            roll: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.z_velocity.is_finite()
            && self.yaw_rate.is_finite()
            && self.pitch.is_finite()
            && self.roll.is_finite()
    }
}

/// Reference point and velocity on the privileged path, trunk frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathReference {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// The segment producing the reference: (trunk, next privileged vertex).
    pub segment: (VertexId, VertexId),
}

/// Constant-velocity fit over recent leaf positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityEstimate {
    pub velocity: Vector3<f64>,
    /// Time span of the samples the fit used.
    pub window: (f64, f64),
}

/// Least-squares constant-velocity fit through timestamped positions.
pub fn estimate_velocity(samples: &[(f64, Vector3<f64>)]) -> Result<VelocityEstimate, ControlError> {
    let n = samples.len();
    let span = if n >= 2 {
        samples[n - 1].0 - samples[0].0
    } else {
        0.0
    };
    if n < 2 || span <= 1e-3 {
        return Err(ControlError::DegenerateTimestamps { samples: n, span_s: span });
    }
    let t_mean = samples.iter().map(|(t, _)| t).sum::<f64>() / n as f64;
    let p_mean = samples.iter().map(|(_, p)| p).sum::<Vector3<f64>>() / n as f64;
    let mut num = Vector3::zeros();
    let mut den = 0.0;
    for (t, p) in samples {
        let dt = t - t_mean;
        num += dt * (p - p_mean);
        den += dt * dt;
    }
    Ok(VelocityEstimate {
        velocity: num / den,
        window: (samples[0].0, samples[n - 1].0),
    })
}

/// Project a trunk-frame position onto the segment from the trunk to the next
/// privileged vertex, clamped to the segment ends.
pub fn project_onto_segment(p: &Vector3<f64>, segment_end: &Vector3<f64>) -> Vector3<f64> {
    let len = segment_end.norm();
    if len < 1e-12 {
        return Vector3::zeros();
    }
    let u = segment_end / len;
    let s = p.dot(&u).clamp(0.0, len);
    s * u
}

/// Build the path-following reference from the localisation chain.
///
/// The reference position is the orthogonal projection of the leaf position
/// onto the trunk-to-next segment (clamped to the segment); the reference
/// velocity has magnitude `v_des` toward the next vertex. Zero-length
/// segments are skipped. Fails with `PathComplete` when no next privileged
/// vertex remains, which drives the Return -> Hover transition.
pub fn path_reference(
    chain: &LocalizationChain,
    graph: &PoseGraph,
    gains: &ControllerGains,
) -> Result<PathReference, ControlError> {
    let p_leaf = *chain.trunk_from_leaf().translation();
    let mut trunk = chain.trunk();
    loop {
        let next = graph
            .privileged_prev(trunk)
            .ok_or(ControlError::PathComplete(trunk))?;
        let t_tn = graph
            .privileged_transform(chain.trunk(), next)
            .expect("privileged vertices are connected");
        let p_next = *t_tn.translation();
        let seg = p_next
            - *graph
                .privileged_transform(chain.trunk(), trunk)
                .expect("privileged vertices are connected")
                .translation();
        if seg.norm() < 1e-9 {
            trunk = next;
            continue;
        }
        // Work relative to the current trunk origin: for trunk == chain.trunk
        // the segment starts at zero and ends at p_next.
        let base = *graph
            .privileged_transform(chain.trunk(), trunk)
            .expect("privileged vertices are connected")
            .translation();
        let local = p_leaf - base;
        let projected = base + project_onto_segment(&local, &seg);
        let direction = seg / seg.norm();
        return Ok(PathReference {
            position: projected,
            velocity: gains.v_des * direction,
            segment: (trunk, next),
        });
    }
}

/// Feedback linearization: desired planar accelerations to pitch/roll.
///
/// The arcsin argument is saturated to `sin(max_tilt)` first, so large
/// accelerations can never produce a domain fault.
pub fn acceleration_to_attitude(ax: f64, ay: f64, yaw: f64, gains: &ControllerGains) -> (f64, f64) {
    let (sy, cy) = yaw.sin_cos();
    let sin_max = gains.max_tilt.sin();
    let pitch_arg = ((ax * cy + ay * sy) / gains.gravity).clamp(-sin_max, sin_max);
    let roll_arg = ((-ax * sy + ay * cy) / gains.gravity).clamp(-sin_max, sin_max);
    (pitch_arg.asin(), -roll_arg.asin())
}

/// One control step: leaf state in the trunk frame plus the reference.
///
/// z-velocity and lateral accelerations follow P-D laws weighted by the
/// damping ratio and time constant; yaw is a pure P law on the leaf/trunk
/// heading mismatch; accelerations map to pitch/roll through the feedback
/// linearization above, then saturate.
pub fn compute_command(
    position: &Vector3<f64>,
    velocity: &Vector3<f64>,
    yaw: f64,
    reference: &PathReference,
    gains: &ControllerGains,
) -> ControlCommand {
    let z_velocity = (2.0 * gains.zeta_z / gains.tau_z) * (reference.position.z - position.z)
        + (1.0 / (gains.tau_z * gains.tau_z)) * (reference.velocity.z - velocity.z);

    let yaw_rate = -yaw / gains.tau_yaw;

    let kp = 2.0 * gains.zeta_lat / gains.tau_lat;
    let kv = 1.0 / (gains.tau_lat * gains.tau_lat);
    let ax = kp * (reference.position.x - position.x) + kv * (reference.velocity.x - velocity.x);
    let ay = kp * (reference.position.y - position.y) + kv * (reference.velocity.y - velocity.y);
    let (pitch, roll) = acceleration_to_attitude(ax, ay, yaw, gains);

    ControlCommand {
        z_velocity: z_velocity.clamp(-gains.max_z_velocity, gains.max_z_velocity),
        yaw_rate: yaw_rate.clamp(-gains.max_yaw_rate, gains.max_yaw_rate),
        pitch: pitch.clamp(-gains.max_tilt, gains.max_tilt),
        roll: roll.clamp(-gains.max_tilt, gains.max_tilt),
    }
}

/// High-level mission phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MissionState {
    Idle,
    Learn,
    Return,
    Hover,
    SafetyAbort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissionEvent {
    StartLearn,
    ReturnRequested,
    PathStartReached,
    SafetyTriggered,
}

/// Transition table of the mission state machine. Any state may abort; all
/// other transitions are restricted to the learn -> return -> hover flow.
pub fn state_machine_step(
    state: MissionState,
    event: MissionEvent,
) -> Result<MissionState, ControlError> {
    use MissionEvent::*;
    use MissionState::*;
    match (state, event) {
        (_, SafetyTriggered) => Ok(SafetyAbort),
        (Idle, StartLearn) => Ok(Learn),
        (Learn, ReturnRequested) => Ok(Return),
        (Return, PathStartReached) => Ok(Hover),
        (state, event) => Err(ControlError::IllegalTransition { state, event }),
    }
}
