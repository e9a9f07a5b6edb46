//! Multirotor plant: kinematics with first-order actuation lags.
//!
//! The model is deliberately simple - attitude tracks the commanded pitch and
//! roll through a lag, horizontal acceleration is the exact tilt-to-thrust
//! inverse of the controller's feedback linearization, vertical velocity
//! tracks its command through a lag, and a linear drag term acts on the
//! velocity relative to the wind. It is a plant for exercising the control
//! structure, not an aerodynamic simulation.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::control::ControlCommand;
use crate::se3::{rot_x, rot_y, rot_z, RigidTransform};

/// Physical constants of the plant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantConfig {
    /// Attitude (pitch/roll) first-order time constant (s).
    pub attitude_tau: f64,
    /// Vertical-velocity tracking time constant (s).
    pub vertical_tau: f64,
    /// Linear drag coefficient (1/s) on velocity relative to the wind.
    pub drag_coeff: f64,
    /// Gravitational acceleration (m/s^2).
    pub gravity: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            attitude_tau: 0.15,
            vertical_tau: 0.3,
            drag_coeff: 0.15,
            gravity: 9.81,
        }
    }
}

/// Mean wind plus an Ornstein-Uhlenbeck gust process, seeded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindModel {
    /// Mean wind velocity (m/s, world frame).
    pub mean: [f64; 3],
    /// Gust standard deviation (m/s).
    pub gust_sigma: f64,
    /// Gust correlation time (s).
    pub gust_tau: f64,
    pub seed: u64,
}

impl Default for WindModel {
    fn default() -> Self {
        Self {
            mean: [0.0, 0.0, 0.0],
            gust_sigma: 0.0,
            gust_tau: 2.0,
            seed: 0,
        }
    }
}

/// Running wind state. With zero sigma and zero mean this contributes exactly
/// nothing, so such runs are bit-identical to wind-free ones.
#[derive(Debug, Clone)]
pub struct WindSim {
    model: WindModel,
    gust: Vector3<f64>,
    rng: ChaCha12Rng,
    noise: Normal<f64>,
}

impl WindSim {
    pub fn new(model: WindModel) -> Self {
        let rng = ChaCha12Rng::seed_from_u64(model.seed);
        let noise = Normal::new(0.0, 1.0).expect("unit normal");
        Self {
            model,
            gust: Vector3::zeros(),
            rng,
            noise,
        }
    }

    /// Advance the gust process and return the current wind velocity.
    pub fn step(&mut self, dt: f64) -> Vector3<f64> {
        if self.model.gust_sigma > 0.0 {
            let tau = self.model.gust_tau.max(1e-3);
            let decay = (-dt / tau).exp();
            let scale = self.model.gust_sigma * (1.0 - decay * decay).sqrt();
            for i in 0..3 {
                self.gust[i] = self.gust[i] * decay + scale * self.noise.sample(&mut self.rng);
            }
        }
        Vector3::from(self.model.mean) + self.gust
    }

    pub fn current(&self) -> Vector3<f64> {
        Vector3::from(self.model.mean) + self.gust
    }
}

/// World-frame vehicle state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    /// Position (m, world frame).
    pub position: Vector3<f64>,
    /// Velocity (m/s, world frame).
    pub velocity: Vector3<f64>,
    /// Attitude: roll, pitch, yaw (rad), Z-Y-X convention, world z up.
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub timestamp: f64,
}

impl VehicleState {
    pub fn hovering(position: Vector3<f64>, yaw: f64) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            roll: 0.0,
            pitch: 0.0,
            yaw,
            timestamp: 0.0,
        }
    }

    /// World-from-vehicle transform: `R = Rz(yaw) Ry(pitch) Rx(roll)`.
    pub fn world_from_vehicle(&self) -> RigidTransform {
        RigidTransform::from_parts_unchecked(
            rot_z(self.yaw) * rot_y(self.pitch) * rot_x(self.roll),
            self.position,
        )
    }
}

/// Horizontal acceleration produced by a tilt at a given yaw - the exact
/// inverse of the controller's feedback linearization.
pub fn tilt_to_acceleration(pitch: f64, roll: f64, yaw: f64, gravity: f64) -> (f64, f64) {
    let (sy, cy) = yaw.sin_cos();
    let st = pitch.sin();
    let sp = roll.sin();
    let ax = gravity * (st * cy + sp * sy);
    let ay = gravity * (st * sy - sp * cy);
    (ax, ay)
}

/// Advance the plant one step of `dt` seconds under a held command.
///
/// `dt` must lie in (0, 0.1]. Attitude and vertical velocity track their
/// commands through first-order lags; yaw integrates the commanded rate;
/// drag acts on velocity relative to the wind.
pub fn step_dynamics(
    state: &VehicleState,
    cmd: &ControlCommand,
    wind: &Vector3<f64>,
    dt: f64,
    config: &PlantConfig,
) -> VehicleState {
    assert!(dt > 0.0 && dt <= 0.1, "dt {dt} outside (0, 0.1]");
    let alpha = 1.0 - (-dt / config.attitude_tau).exp();
    let roll = state.roll + alpha * (cmd.roll - state.roll);
    let pitch = state.pitch + alpha * (cmd.pitch - state.pitch);
    let yaw = crate::se3::half_open_pi(state.yaw + cmd.yaw_rate * dt);

    let (ax, ay) = tilt_to_acceleration(pitch, roll, yaw, config.gravity);
    let az = (cmd.z_velocity - state.velocity.z) / config.vertical_tau;
    let accel = Vector3::new(ax, ay, az) - config.drag_coeff * (state.velocity - wind);

    let velocity = state.velocity + accel * dt;
    let position = state.position + velocity * dt;

    VehicleState {
        position,
        velocity,
        roll,
        pitch,
        yaw,
        timestamp: state.timestamp + dt,
    }
}
