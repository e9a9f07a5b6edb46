//! Three-axis gimbal: forward kinematics, internal stabilisation and joint
//! servo dynamics.
//!
//! Joint order from the vehicle outward is yaw (about vehicle z), roll
//! (about x), pitch (about y), each separated by a fixed link translation.
//! The vehicle frame is FLU (x forward, y left, z up); the camera optical
//! frame hangs off the innermost link through a fixed plate-to-optical
//! rotation (camera z forward, x right, y down). Positive pitch tips the
//! camera down.
//!
//! `T_sv` follows the sensor-from-vehicle convention used everywhere else:
//! `p_sensor = T_sv * p_vehicle`.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::se3::{rot_x, rot_y, rot_z, RigidTransform};

#[derive(Debug, Error, PartialEq)]
pub enum GimbalError {
    #[error("joint {joint} angle {angle:.4} rad outside limits [{min:.4}, {max:.4}]")]
    JointLimit {
        joint: &'static str,
        angle: f64,
        min: f64,
        max: f64,
    },
}

/// Fixed geometry, joint limits and servo behaviour of the gimbal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GimbalConfig {
    /// Vehicle-frame offset from vehicle origin to the yaw joint (m).
    pub mount_offset: [f64; 3],
    /// Offset yaw joint -> roll joint, in the yawed frame (m).
    pub link_yaw_to_roll: [f64; 3],
    /// Offset roll joint -> pitch joint (m).
    pub link_roll_to_pitch: [f64; 3],
    /// Offset pitch joint -> camera optical centre, in the plate frame (m).
    pub link_pitch_to_camera: [f64; 3],
    /// Joint limits (rad): [min, max] per axis.
    pub yaw_limits: [f64; 2],
    pub roll_limits: [f64; 2],
    pub pitch_limits: [f64; 2],
    /// First-order servo time constant (s).
    pub servo_tau: f64,
    /// Camera look-down angle below the horizon held by the stabiliser (rad).
    pub look_down: f64,
    /// Smoothing time constant for yaw-follow of the vehicle heading (s).
    pub yaw_follow_tau: f64,
    /// Encoder noise sigma per joint (rad).
    pub encoder_noise_sigma: f64,
    /// Proportional gain of the active pointing correction.
    pub pointing_gain: f64,
}

impl Default for GimbalConfig {
    fn default() -> Self {
        Self {
            mount_offset: [0.15, 0.0, -0.10],
            link_yaw_to_roll: [0.0, 0.0, -0.06],
            link_roll_to_pitch: [0.0, 0.0, -0.05],
            link_pitch_to_camera: [0.06, 0.0, 0.0],
            yaw_limits: [-2.96, 2.96],
            roll_limits: [-0.6, 0.6],
            pitch_limits: [-0.4, 1.5],
            servo_tau: 0.03,
            look_down: std::f64::consts::FRAC_PI_4,
            yaw_follow_tau: 0.5,
            encoder_noise_sigma: 0.003,
            pointing_gain: 0.6,
        }
    }
}

impl GimbalConfig {
    fn check_limits(&self, roll: f64, pitch: f64, yaw: f64) -> Result<(), GimbalError> {
        for (joint, angle, lim) in [
            ("roll", roll, self.roll_limits),
            ("pitch", pitch, self.pitch_limits),
            ("yaw", yaw, self.yaw_limits),
        ] {
            if angle < lim[0] || angle > lim[1] {
                return Err(GimbalError::JointLimit {
                    joint,
                    angle,
                    min: lim[0],
                    max: lim[1],
                });
            }
        }
        Ok(())
    }

    fn clamp(&self, roll: f64, pitch: f64, yaw: f64) -> (f64, f64, f64, bool) {
        let r = roll.clamp(self.roll_limits[0], self.roll_limits[1]);
        let p = pitch.clamp(self.pitch_limits[0], self.pitch_limits[1]);
        let y = yaw.clamp(self.yaw_limits[0], self.yaw_limits[1]);
        let saturated = r != roll || p != pitch || y != yaw;
        (r, p, y, saturated)
    }
}

/// Fixed rotation from the plate (FLU) frame to the camera optical frame:
/// camera x = -plate y, camera y = -plate z, camera z = plate x.
pub fn plate_from_optical() -> Matrix3<f64> {
    Matrix3::from_columns(&[-Vector3::y(), -Vector3::z(), Vector3::x()])
}

/// Vehicle-from-sensor transform for a joint configuration: the kinematic
/// chain mount -> Rz(yaw) -> Rx(roll) -> Ry(pitch) -> optical frame.
pub fn fk_vehicle_from_sensor(
    roll: f64,
    pitch: f64,
    yaw: f64,
    config: &GimbalConfig,
) -> Result<RigidTransform, GimbalError> {
    config.check_limits(roll, pitch, yaw)?;
    let chain = RigidTransform::from_translation(Vector3::from(config.mount_offset))
        .compose(&RigidTransform::from_parts_unchecked(rot_z(yaw), Vector3::zeros()))
        .compose(&RigidTransform::from_translation(Vector3::from(config.link_yaw_to_roll)))
        .compose(&RigidTransform::from_parts_unchecked(rot_x(roll), Vector3::zeros()))
        .compose(&RigidTransform::from_translation(Vector3::from(config.link_roll_to_pitch)))
        .compose(&RigidTransform::from_parts_unchecked(rot_y(pitch), Vector3::zeros()))
        .compose(&RigidTransform::from_parts_unchecked(
            plate_from_optical(),
            Vector3::from(config.link_pitch_to_camera),
        ));
    Ok(chain)
}

/// Sensor-from-vehicle transform (`T_sv`) for a joint configuration.
pub fn gimbal_fk(roll: f64, pitch: f64, yaw: f64, config: &GimbalConfig) -> Result<RigidTransform, GimbalError> {
    fk_vehicle_from_sensor(roll, pitch, yaw, config).map(|t| t.invert())
}

/// Joint angles captured at an instant plus the derived `T_sv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GimbalState {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub t_sv: RigidTransform,
}

impl GimbalState {
    pub fn new(roll: f64, pitch: f64, yaw: f64, config: &GimbalConfig) -> Result<Self, GimbalError> {
        Ok(Self {
            roll,
            pitch,
            yaw,
            t_sv: gimbal_fk(roll, pitch, yaw, config)?,
        })
    }
}

/// Decompose a rotation as `Rz(yaw) * Rx(roll) * Ry(pitch)` (the joint order
/// of the kinematic chain). Returns (roll, pitch, yaw).
pub fn decompose_zxy(r: &Matrix3<f64>) -> (f64, f64, f64) {
    let roll = r[(2, 1)].clamp(-1.0, 1.0).asin();
    let pitch = (-r[(2, 0)]).atan2(r[(2, 2)]);
    let yaw = (-r[(0, 1)]).atan2(r[(1, 1)]);
    (roll, pitch, yaw)
}

/// The simulated gimbal unit: joint servo state plus stabiliser bookkeeping.
#[derive(Debug, Clone)]
pub struct Gimbal {
    pub config: GimbalConfig,
    joints: (f64, f64, f64),
    setpoints: (f64, f64, f64),
    /// Smoothed vehicle yaw the stabiliser follows in passive mode.
    yaw_follow: f64,
    noise: Normal<f64>,
}

/// Gravity-referenced pointing setpoints of the active controller: the
/// gimbal's internal stabilisation realises them against vehicle motion at
/// servo rate, the way a commercial stabilised gimbal interprets angle
/// commands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GimbalSetpoints {
    /// Camera depression below the horizon (rad; positive looks down).
    pub pitch_down: f64,
    /// Camera heading in the world frame (rad).
    pub world_yaw: f64,
    pub saturated: bool,
}

impl Gimbal {
    pub fn new(config: GimbalConfig, vehicle_yaw: f64) -> Self {
        let noise = Normal::new(0.0, config.encoder_noise_sigma.max(0.0)).expect("finite sigma");
        let mut g = Self {
            config,
            joints: (0.0, 0.0, 0.0),
            setpoints: (0.0, 0.0, 0.0),
            yaw_follow: vehicle_yaw,
            noise,
        };
        // Start settled on the stabiliser solution for a level vehicle.
        let (r, p, y, _) = g.stabilizer_ik(&rot_z(vehicle_yaw), vehicle_yaw, g.config.look_down);
        g.joints = (r, p, y);
        g.setpoints = (r, p, y);
        g
    }

    pub fn joints(&self) -> (f64, f64, f64) {
        self.joints
    }

    pub fn setpoints(&self) -> (f64, f64, f64) {
        self.setpoints
    }

    /// Joint solution holding the camera level in roll, pitched
    /// `target_pitch` below the horizon, yawed to `target_yaw` in the world
    /// frame. Solves `R_vehicle_from_plate = R_wv^T * Rz(yaw) * Ry(pitch)`
    /// for the Z-X-Y joint angles.
    pub fn stabilizer_ik(
        &self,
        vehicle_rotation: &Matrix3<f64>,
        target_yaw: f64,
        target_pitch: f64,
    ) -> (f64, f64, f64, bool) {
        let desired = vehicle_rotation.transpose() * rot_z(target_yaw) * rot_y(target_pitch);
        let (roll, pitch, yaw) = decompose_zxy(&desired);
        self.config.clamp(roll, pitch, yaw)
    }

    /// Passive stabilisation step (learn phase): roll/pitch level the camera
    /// at the configured look-down angle, yaw smoothly follows the vehicle
    /// heading.
    pub fn stabilize(&mut self, vehicle_rotation: &Matrix3<f64>, vehicle_yaw: f64, dt: f64) {
        let alpha = 1.0 - (-dt / self.config.yaw_follow_tau).exp();
        let err = crate::se3::half_open_pi(vehicle_yaw - self.yaw_follow);
        self.yaw_follow = crate::se3::half_open_pi(self.yaw_follow + alpha * err);
        let (r, p, y, _) =
            self.stabilizer_ik(vehicle_rotation, self.yaw_follow, self.config.look_down);
        self.setpoints = (r, p, y);
    }

    /// Active pointing step (return phase): the internal stabilisation
    /// realises the gravity-referenced setpoints against the current vehicle
    /// attitude; roll stays level.
    pub fn point(&mut self, vehicle_rotation: &Matrix3<f64>, setpoints: &GimbalSetpoints) {
        let (r, p, y, _) =
            self.stabilizer_ik(vehicle_rotation, setpoints.world_yaw, setpoints.pitch_down);
        self.setpoints = (r, p, y);
    }

    /// Current gravity-referenced pointing of the camera, for initialising
    /// the active controller at the phase switch.
    pub fn current_pointing(&self, vehicle_rotation: &Matrix3<f64>) -> GimbalSetpoints {
        let plate = fk_vehicle_from_sensor(self.joints.0, self.joints.1, self.joints.2, &self.config)
            .expect("joints within limits")
            .rotation()
            * plate_from_optical().transpose();
        let world_plate = vehicle_rotation * plate;
        let (_, pitch_down, world_yaw) = decompose_zxy(&world_plate);
        GimbalSetpoints {
            pitch_down,
            world_yaw,
            saturated: false,
        }
    }

    /// Advance the joint servos one step of `dt` seconds.
    pub fn step(&mut self, dt: f64) {
        let alpha = 1.0 - (-dt / self.config.servo_tau).exp();
        self.joints.0 += alpha * (self.setpoints.0 - self.joints.0);
        self.joints.1 += alpha * (self.setpoints.1 - self.joints.1);
        self.joints.2 += alpha * (self.setpoints.2 - self.joints.2);
    }

    /// Ground-truth vehicle-from-sensor transform of the current joints.
    pub fn true_vehicle_from_sensor(&self) -> RigidTransform {
        fk_vehicle_from_sensor(self.joints.0, self.joints.1, self.joints.2, &self.config)
            .expect("servoed joints stay within limits")
    }

    /// Encoder capture: joint angles with measurement noise and the `T_sv`
    /// compounded from them, as the navigation stack sees it.
    pub fn read_encoders(&self, rng: &mut impl Rng) -> GimbalState {
        let (mut r, mut p, mut y) = self.joints;
        if self.config.encoder_noise_sigma > 0.0 {
            r += self.noise.sample(rng);
            p += self.noise.sample(rng);
            y += self.noise.sample(rng);
        }
        let (r, p, y, _) = self.config.clamp(r, p, y);
        GimbalState::new(r, p, y, &self.config).expect("clamped joints are within limits")
    }
}

/// Active pointing law: move the pitch/yaw setpoints proportionally toward
/// the pointing that nulls the camera-frame orientation error.
///
/// `camera_error` is the sensor-frame localisation error (leaf camera from
/// trunk camera). Composing the current camera world orientation (vehicle
/// attitude through the encoder-derived mounting) with it gives the pointing
/// that would make the leaf view coincide with the trunk view; its yaw and
/// pitch components become the new gravity-referenced setpoints. Roll is
/// left to the internal stabilisation. The saturated flag reports a target
/// outside the joint-reachable envelope at the current attitude.
pub fn gimbal_command(
    camera_error: &RigidTransform,
    state: &GimbalState,
    vehicle_rotation: &Matrix3<f64>,
    current: &GimbalSetpoints,
    config: &GimbalConfig,
) -> GimbalSetpoints {
    let world_from_sensor = vehicle_rotation * state.t_sv.rotation().transpose();
    let desired_plate =
        world_from_sensor * camera_error.rotation() * plate_from_optical().transpose();
    let (_, pitch_target, yaw_target) = decompose_zxy(&desired_plate);
    let pitch_down = current.pitch_down
        + config.pointing_gain * crate::se3::half_open_pi(pitch_target - current.pitch_down);
    let world_yaw = crate::se3::half_open_pi(
        current.world_yaw
            + config.pointing_gain * crate::se3::half_open_pi(yaw_target - current.world_yaw),
    );
    // Reachability check at the current attitude.
    let desired = vehicle_rotation.transpose() * rot_z(world_yaw) * rot_y(pitch_down);
    let (roll_j, pitch_j, yaw_j) = decompose_zxy(&desired);
    let (_, _, _, saturated) = config.clamp(roll_j, pitch_j, yaw_j);
    GimbalSetpoints {
        pitch_down,
        world_yaw,
        saturated,
    }
}
