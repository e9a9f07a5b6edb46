//! Scenario runner: the master simulation loop wiring the world, vehicle,
//! gimbal and navigation pipeline together, plus parameter sweeps.
//!
//! The loop ticks at 150 Hz so the 50 Hz controller, 15 Hz camera and 10 Hz
//! gimbal all land on exact tick multiples; commands are zero-order-held
//! between control ticks. Runs are deterministic under the scenario seeds.
//!
//! The learn phase is flown by a scripted waypoint tracker standing in for
//! the GPS autopilot. The return phase either closes the loop through the
//! vision estimate and the path-following controller, or (scripted mode)
//! re-flies the recorded teach trajectory in reverse under the waypoint
//! tracker while the vision stack is evaluated open-loop.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::control::{
    acceleration_to_attitude, compute_command, estimate_velocity, path_reference,
    state_machine_step, ControlCommand, ControlError, ControllerGains, MissionEvent, MissionState,
};
use crate::gimbal::{gimbal_command, Gimbal, GimbalSetpoints};
use crate::graph::{io as graph_io, GraphError, VertexId};
use crate::metrics::{
    CommandRow, FrameRow, LocalizationRow, MetricsError, MetricsReport, TimingCollector,
};
use crate::pipeline::{Phase, VtrPipeline};
use crate::safety::{SafetyMonitor, SafetyStatus};
use crate::scenario::{ReturnMode, Scenario, ScenarioError};
use crate::se3::half_open_pi;
use crate::vehicle::{step_dynamics, VehicleState, WindSim};
use crate::world::{splitmix64, LandmarkWorld, WorldError};

const SIM_RATE_HZ: u64 = 150;
const CONTROL_EVERY: u64 = 3; // 50 Hz
const FRAME_EVERY: u64 = 10; // 15 Hz
const GIMBAL_EVERY: u64 = 15; // 10 Hz

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("harness i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// How a run ended. Safety aborts surface separately so callers can map
/// them to a distinct exit code with partial metrics already flushed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExitStatus {
    Completed,
    SafetyAbort(String),
    TimedOut,
}

impl ExitStatus {
    pub fn label(&self) -> String {
        match self {
            ExitStatus::Completed => "completed".into(),
            ExitStatus::SafetyAbort(reason) => format!("safety-abort:{reason}"),
            ExitStatus::TimedOut => "timed-out".into(),
        }
    }
}

pub struct ScenarioOutcome {
    pub report: MetricsReport,
    pub exit: ExitStatus,
    pub graph_path: Option<PathBuf>,
    pub out_dir: PathBuf,
}

/// Piecewise-linear path with arc-length parameterisation.
struct Polyline {
    points: Vec<Vector3<f64>>,
    cum: Vec<f64>,
}

impl Polyline {
    fn new(points: Vec<Vector3<f64>>) -> Self {
        let mut cum = Vec::with_capacity(points.len());
        let mut s = 0.0;
        for i in 0..points.len() {
            if i > 0 {
                s += (points[i] - points[i - 1]).norm();
            }
            cum.push(s);
        }
        Self { points, cum }
    }

    fn total(&self) -> f64 {
        *self.cum.last().unwrap_or(&0.0)
    }

    fn point_at(&self, s: f64) -> Vector3<f64> {
        let s = s.clamp(0.0, self.total());
        let i = match self.cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        if i + 1 >= self.points.len() {
            return self.points[self.points.len() - 1];
        }
        let seg = self.cum[i + 1] - self.cum[i];
        if seg < 1e-12 {
            return self.points[i];
        }
        let t = (s - self.cum[i]) / seg;
        self.points[i] + t * (self.points[i + 1] - self.points[i])
    }

    fn tangent_at(&self, s: f64) -> Vector3<f64> {
        let s = s.clamp(0.0, self.total());
        let mut i = match self.cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        if i + 1 >= self.points.len() {
            i = self.points.len().saturating_sub(2);
        }
        let d = self.points[i + 1] - self.points[i];
        let n = d.norm();
        if n < 1e-12 {
            Vector3::x()
        } else {
            d / n
        }
    }

    /// Arc length of the closest point, searched globally.
    fn project(&self, p: &Vector3<f64>) -> (f64, f64) {
        self.project_windowed(p, 0.0, f64::INFINITY)
    }

    /// Arc length of the closest point among segments whose arc length lies
    /// in `[s_lo, s_hi]`. A tracker advancing monotonically must not snap to
    /// a far part of the path that happens to pass nearby (the taught loop
    /// brings its start within metres of its end).
    fn project_windowed(&self, p: &Vector3<f64>, s_lo: f64, s_hi: f64) -> (f64, f64) {
        let mut best_s = s_lo.clamp(0.0, self.total());
        let mut best_d = f64::INFINITY;
        for i in 0..self.points.len().saturating_sub(1) {
            if self.cum[i + 1] < s_lo || self.cum[i] > s_hi {
                continue;
            }
            let a = self.points[i];
            let b = self.points[i + 1];
            let ab = b - a;
            let len2 = ab.norm_squared();
            let t = if len2 < 1e-18 {
                0.0
            } else {
                ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
            };
            let q = a + t * ab;
            let d = (p - q).norm();
            if d < best_d {
                best_d = d;
                best_s = self.cum[i] + t * (self.cum[i + 1] - self.cum[i]);
            }
        }
        (best_s, best_d)
    }
}

/// Carrot tracker standing in for the GPS autopilot: P-D position control
/// toward a look-ahead point with velocity feedforward along the path.
struct PathTracker {
    path: Polyline,
    /// Per-point yaw setpoints; when absent the tracker faces the tangent.
    yaw_samples: Option<Vec<f64>>,
    progress: f64,
    speed: f64,
    lookahead: f64,
    kp: f64,
    kv: f64,
    yaw_tau: f64,
}

impl PathTracker {
    fn new(points: Vec<Vector3<f64>>, yaw_samples: Option<Vec<f64>>, speed: f64, lookahead: f64) -> Self {
        Self {
            path: Polyline::new(points),
            yaw_samples,
            progress: 0.0,
            speed,
            lookahead,
            kp: 1.2,
            kv: 1.8,
            yaw_tau: 0.6,
        }
    }

    fn yaw_at(&self, s: f64) -> Option<f64> {
        let samples = self.yaw_samples.as_ref()?;
        let s = s.clamp(0.0, self.path.total());
        let i = match self
            .path
            .cum
            .binary_search_by(|c| c.partial_cmp(&s).unwrap())
        {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        if i + 1 >= samples.len() {
            return samples.last().copied();
        }
        let seg = self.path.cum[i + 1] - self.path.cum[i];
        let t = if seg < 1e-12 { 0.0 } else { (s - self.path.cum[i]) / seg };
        Some(half_open_pi(
            samples[i] + t * half_open_pi(samples[i + 1] - samples[i]),
        ))
    }

    fn done(&self, position: &Vector3<f64>, tol: f64) -> bool {
        let end = self.path.point_at(self.path.total());
        self.progress >= self.path.total() - 0.3 && (position - end).norm() < tol
    }

    /// Curvature-limited speed at arc position `s`: the turn angle across
    /// one look-ahead span sets an effective corner radius.
    fn allowed_speed(&self, s: f64) -> f64 {
        const LATERAL_ACCEL: f64 = 2.5; // m/s^2, inside the tilt authority
        let l = self.lookahead.max(2.0);
        let t0 = self.path.tangent_at(s);
        let t1 = self.path.tangent_at((s + l).min(self.path.total()));
        let theta = t0.dot(&t1).clamp(-1.0, 1.0).acos();
        if theta < 1e-3 {
            return self.speed;
        }
        let effective_radius = (l / theta).max(0.5);
        (LATERAL_ACCEL * effective_radius).sqrt().min(self.speed)
    }

    /// Target speed respecting upcoming corners under a braking envelope,
    /// the way a waypoint autopilot slows into turns.
    fn envelope_speed(&self) -> f64 {
        const BRAKE: f64 = 2.8; // m/s^2
        let l = self.lookahead.max(2.0);
        let horizon = self.speed * self.speed / (2.0 * BRAKE) + l;
        let mut v = self.allowed_speed(self.progress);
        let mut ahead = 2.0;
        while ahead <= horizon {
            let v_there = self.allowed_speed(self.progress + ahead);
            let v_env = (v_there * v_there + 2.0 * BRAKE * ahead).sqrt();
            v = v.min(v_env);
            ahead += 2.0;
        }
        v
    }

    fn command(
        &mut self,
        state: &VehicleState,
        gains: &ControllerGains,
        drag_coeff: f64,
    ) -> ControlCommand {
        // Monotonic progress restricted to a local window: never track
        // backwards, never snap across distant path segments.
        let (s, _) = self.path.project_windowed(
            &state.position,
            self.progress - 2.0,
            self.progress + self.lookahead + 8.0,
        );
        self.progress = self.progress.max(s);

        let total = self.path.total();
        let carrot_s = (self.progress + self.lookahead).min(total);
        let target = self.path.point_at(carrot_s);
        // Corner slowdown plus a taper toward the path end.
        let remaining = total - self.progress;
        let taper = (remaining / (2.0 * self.speed).max(4.0)).clamp(0.0, 1.0);
        let v_mag = self.envelope_speed().min(self.speed * taper);
        let v_ref = self.path.tangent_at(carrot_s) * v_mag;

        // Position feedback acts on the cross-track component only; the
        // along-track motion is regulated by the velocity term, otherwise
        // the carrot distance would drive the speed far past its target.
        let to_target = target - state.position;
        let tangent = self.path.tangent_at(carrot_s);
        let e_perp = to_target - to_target.dot(&tangent) * tangent;

        let ax = self.kp * e_perp.x + self.kv * (v_ref.x - state.velocity.x) + drag_coeff * v_ref.x;
        let ay = self.kp * e_perp.y + self.kv * (v_ref.y - state.velocity.y) + drag_coeff * v_ref.y;
        let (pitch, roll) = acceleration_to_attitude(ax, ay, state.yaw, gains);

        let z_velocity = (self.kp * (target.z - state.position.z) + v_ref.z)
            .clamp(-gains.max_z_velocity, gains.max_z_velocity);

        let yaw_target = self
            .yaw_at(self.progress)
            .unwrap_or_else(|| {
                let tangent = self.path.tangent_at(carrot_s);
                tangent.y.atan2(tangent.x)
            });
        let yaw_rate = (half_open_pi(yaw_target - state.yaw) / self.yaw_tau)
            .clamp(-gains.max_yaw_rate, gains.max_yaw_rate);

        ControlCommand {
            z_velocity,
            yaw_rate,
            pitch,
            roll,
        }
    }
}

/// P-D hold at a fixed point with a fixed heading.
fn hold_command(
    target: &Vector3<f64>,
    yaw_target: f64,
    state: &VehicleState,
    gains: &ControllerGains,
) -> ControlCommand {
    let kp = 1.0;
    let kv = 1.6;
    let ax = kp * (target.x - state.position.x) - kv * state.velocity.x;
    let ay = kp * (target.y - state.position.y) - kv * state.velocity.y;
    let (pitch, roll) = acceleration_to_attitude(ax, ay, state.yaw, gains);
    ControlCommand {
        z_velocity: (kp * (target.z - state.position.z)).clamp(-gains.max_z_velocity, gains.max_z_velocity),
        yaw_rate: (half_open_pi(yaw_target - state.yaw) / 0.8).clamp(-gains.max_yaw_rate, gains.max_yaw_rate),
        pitch,
        roll,
    }
}

/// Decimate a dense trace into a polyline with roughly `spacing` metres
/// between points.
fn decimate(trace: &[(Vector3<f64>, f64)], spacing: f64) -> (Vec<Vector3<f64>>, Vec<f64>) {
    let mut points = Vec::new();
    let mut yaws = Vec::new();
    let mut last: Option<Vector3<f64>> = None;
    for (p, yaw) in trace {
        if last.is_none_or(|l| (p - l).norm() >= spacing) {
            points.push(*p);
            yaws.push(*yaw);
            last = Some(*p);
        }
    }
    if let Some((p, yaw)) = trace.last() {
        if last.is_none_or(|l| (p - l).norm() > 1e-9) {
            points.push(*p);
            yaws.push(*yaw);
        }
    }
    (points, yaws)
}

/// Run one scenario, writing metrics (and the taught graph) under `out_dir`.
pub fn run_scenario(scenario: &Scenario, out_dir: &Path) -> Result<ScenarioOutcome, HarnessError> {
    scenario.validate()?;
    std::fs::create_dir_all(out_dir)?;

    let world = LandmarkWorld::generate(
        scenario.world.seed,
        scenario.world.extent,
        scenario.world.density,
        scenario.world.height_profile(),
        &scenario.world.containers,
    )?;
    let gains = scenario.controller_gains();
    let mut pipeline = VtrPipeline::new(scenario.pipeline_config(), scenario.camera.clone());

    let wp0 = Vector3::from(scenario.teach.waypoints[0]);
    let wp1 = Vector3::from(scenario.teach.waypoints[1]);
    let initial_yaw = (wp1.y - wp0.y).atan2(wp1.x - wp0.x);
    let mut vehicle = VehicleState::hovering(wp0, initial_yaw);
    let mut gimbal = Gimbal::new(scenario.gimbal.clone(), initial_yaw);
    let mut wind = WindSim::new(scenario.wind.clone());
    let mut monitor = SafetyMonitor::new(scenario.safety.clone());
    let mut encoder_rng = ChaCha12Rng::seed_from_u64(scenario.seeds.encoder);

    let mut mission = state_machine_step(MissionState::Idle, MissionEvent::StartLearn)
        .expect("idle accepts start-learn");
    let mut teach_tracker = PathTracker::new(
        scenario
            .teach
            .waypoints
            .iter()
            .map(|w| Vector3::from(*w))
            .collect(),
        None,
        scenario.teach.speed_mps,
        scenario.teach.lookahead(),
    );

    let mut report = MetricsReport::default();
    report.meta.scenario = scenario.name.clone();
    let mut capture_timer = TimingCollector::default();

    let dt = 1.0 / SIM_RATE_HZ as f64;
    let mut cmd = ControlCommand::zero();
    let mut frame_idx: u64 = 0;
    let mut teach_trace: Vec<(Vector3<f64>, f64)> = Vec::new();
    let mut taught_path: Option<Polyline> = None;
    let mut scripted: Option<PathTracker> = None;
    let mut recent_leaf: VecDeque<(f64, Vector3<f64>, VertexId)> = VecDeque::new();
    let mut settle_target: Option<(Vector3<f64>, f64)> = None;
    let mut controller_engaged = false;
    let mut return_start_time = f64::NAN;
    let mut settle_deadline = 0.0f64;
    let mut hover: Option<(Vector3<f64>, f64, f64)> = None; // point, yaw, end time
    let mut vtr_pointing: Option<GimbalSetpoints> = None;
    let graph_path = out_dir.join("graph.vtrg");
    let mut graph_saved = false;

    let exit = 'sim: loop {
        let tick = (vehicle.timestamp / dt).round() as u64;
        let t = vehicle.timestamp;
        if t > scenario.limits.max_sim_time_s {
            break 'sim ExitStatus::TimedOut;
        }

        // 15 Hz: capture and process a frame.
        if tick.is_multiple_of(FRAME_EVERY) && mission != MissionState::SafetyAbort {
            let t0 = Instant::now();
            let cam_pose = vehicle
                .world_from_vehicle()
                .compose(&gimbal.true_vehicle_from_sensor());
            let frame_seed = splitmix64(scenario.seeds.observation ^ (frame_idx << 17));
            let frame = world.observe(&scenario.camera, &cam_pose, t, frame_seed);
            capture_timer.record("capture", t0.elapsed());

            let enc = gimbal.read_encoders(&mut encoder_rng);
            let outcome = pipeline.process_frame(&frame, enc.t_sv, t);

            let phase_label = match pipeline.phase() {
                Phase::Learn => "learn",
                Phase::Return => "return",
            };
            let (mut cross_track, mut cross_track_true) = (None, None);
            if pipeline.phase() == Phase::Return {
                if let Some(chain) = pipeline.chain() {
                    // A localisation correction shifts the whole absolute
                    // offset; re-baseline the velocity-fit history by the
                    // same shift so the fitted slope stays continuous.
                    if let Some(correction) = outcome
                        .localization
                        .as_ref()
                        .and_then(|l| l.position_correction)
                    {
                        for (_, p, sample_trunk) in recent_leaf.iter_mut() {
                            let shift = pipeline
                                .graph
                                .privileged_transform(*sample_trunk, chain.trunk())
                                .map(|t| t.rotate(&correction))
                                .unwrap_or(correction);
                            *p += shift;
                        }
                    }
                    if outcome.vo_success {
                        let p = *chain.trunk_from_leaf().translation();
                        recent_leaf.push_back((t, p, chain.trunk()));
                        while recent_leaf.len() > 5 {
                            recent_leaf.pop_front();
                        }
                    }
                    if let Ok(reference) = path_reference(chain, &pipeline.graph, &gains) {
                        let p = chain.trunk_from_leaf();
                        cross_track = Some((p.translation() - reference.position).norm());
                    }
                }
                if let Some(path) = &taught_path {
                    let (_, d) = path.project(&vehicle.position);
                    cross_track_true = Some(d);
                }
            }
            report.frames.push(FrameRow {
                time_s: t,
                phase: phase_label.into(),
                frame: frame_idx,
                vo_success: outcome.vo_success,
                vo_inliers: outcome.vo_inliers as u64,
                keyframe: outcome.keyframe.map(|v| v.0),
                cross_track_m: cross_track,
                cross_track_true_m: cross_track_true,
                speed_mps: vehicle.velocity.norm(),
            });
            if let Some(loc) = &outcome.localization {
                report.localizations.push(LocalizationRow {
                    time_s: t,
                    leaf: loc.leaf.0,
                    trunk: loc.trunk.0,
                    success: loc.success,
                    inliers: loc.inliers as u64,
                    matches: loc.matches as u64,
                    rot_err_vehicle_rad: loc.rot_err_vehicle_rad,
                    rot_err_camera_rad: loc.rot_err_camera_rad,
                    error: loc.error.clone().unwrap_or_default(),
                });
                if !loc.success {
                    report.meta.localization_failures += 1;
                }
                report.meta.localization_attempts += 1;
                if let Some(chain) = pipeline.chain() {
                    report.meta.max_consecutive_localization_failures = report
                        .meta
                        .max_consecutive_localization_failures
                        .max(chain.consecutive_failures() as u64);
                }
            }
            frame_idx += 1;
        }

        // 10 Hz: the active pointing law updates its gravity-referenced
        // setpoints from the latest camera-frame error.
        if tick.is_multiple_of(GIMBAL_EVERY) && pipeline.phase() == Phase::Return {
            if let Some(err) = pipeline.pointing_error() {
                let rot = *vehicle.world_from_vehicle().rotation();
                let enc = gimbal.read_encoders(&mut encoder_rng);
                let current = vtr_pointing.unwrap_or_else(|| gimbal.current_pointing(&rot));
                vtr_pointing = Some(gimbal_command(&err, &enc, &rot, &current, &scenario.gimbal));
            }
        }

        // 50 Hz: mission logic, control and the safety monitor.
        if tick.is_multiple_of(CONTROL_EVERY) {
            match mission {
                MissionState::Learn => {
                    cmd = teach_tracker.command(&vehicle, &gains, scenario.plant.drag_coeff);
                    teach_trace.push((vehicle.position, vehicle.yaw));
                    if teach_tracker.done(&vehicle.position, scenario.teach.completion_radius_m) {
                        mission = state_machine_step(mission, MissionEvent::ReturnRequested)
                            .expect("learn accepts return request");
                        // Persist the taught graph before the return so the
                        // memory manager can evict and reload payloads.
                        graph_io::save(&mut pipeline.graph, &graph_path)?;
                        graph_saved = true;
                        pipeline.begin_return(t);
                        return_start_time = t;
                        recent_leaf.clear();

                        let (points, yaws) = decimate(&teach_trace, 0.5);
                        report.meta.path_length_m = Polyline::new(points.clone()).total();
                        taught_path = Some(Polyline::new(points.clone()));
                        let offset = Vector3::new(0.0, 0.0, scenario.return_.altitude_offset_m);
                        if scenario.return_.mode == ReturnMode::Scripted {
                            let mut rev: Vec<Vector3<f64>> =
                                points.iter().rev().map(|p| p + offset).collect();
                            let mut rev_yaws: Vec<f64> = yaws.iter().rev().copied().collect();
                            if rev.len() < 2 {
                                rev.push(rev[0] + Vector3::new(0.1, 0.0, 0.0));
                                rev_yaws.push(rev_yaws[0]);
                            }
                            scripted = Some(PathTracker::new(
                                rev,
                                Some(rev_yaws),
                                scenario.return_.speed_mps,
                                (2.0 * scenario.return_.speed_mps).clamp(4.0, 12.0),
                            ));
                        }
                        settle_target = Some((vehicle.position + offset, vehicle.yaw));
                        settle_deadline = t + 20.0;
                        controller_engaged = false;
                    }
                }
                MissionState::Return => {
                    if !controller_engaged {
                        let (target, yaw) = settle_target.expect("settle target set at switch");
                        cmd = hold_command(&target, yaw, &vehicle, &gains);
                        let alt_err = (vehicle.position.z - target.z).abs();
                        if (vehicle.velocity.norm() < 0.6 && alt_err < 0.8) || t > settle_deadline
                        {
                            controller_engaged = true;
                        }
                    } else {
                        match scenario.return_.mode {
                            ReturnMode::Scripted => {
                                let tracker = scripted.as_mut().expect("scripted tracker built");
                                cmd = tracker.command(&vehicle, &gains, scenario.plant.drag_coeff);
                                if tracker.done(&vehicle.position, scenario.return_.completion_radius_m)
                                {
                                    mission =
                                        state_machine_step(mission, MissionEvent::PathStartReached)
                                            .expect("return accepts completion");
                                    hover = Some((vehicle.position, vehicle.yaw, t + 2.0));
                                }
                            }
                            ReturnMode::ClosedLoop => {
                                cmd = closed_loop_command(
                                    &pipeline,
                                    &recent_leaf,
                                    &gains,
                                    cmd,
                                );
                                // Completion: trunk reached the path start and
                                // the estimated offset is inside the radius.
                                if let Some(chain) = pipeline.chain() {
                                    let at_start = pipeline
                                        .graph
                                        .privileged_path()
                                        .first()
                                        .is_some_and(|&v0| chain.trunk() == v0);
                                    let close = chain.trunk_from_leaf().translation().norm()
                                        < scenario.return_.completion_radius_m;
                                    let no_next =
                                        pipeline.graph.privileged_prev(chain.trunk()).is_none();
                                    if at_start && (close || no_next) {
                                        mission = state_machine_step(
                                            mission,
                                            MissionEvent::PathStartReached,
                                        )
                                        .expect("return accepts completion");
                                        hover = Some((vehicle.position, vehicle.yaw, t + 2.0));
                                    }
                                }
                            }
                        }
                    }
                }
                MissionState::Hover => {
                    let (p, yaw, until) = hover.expect("hover target set on completion");
                    cmd = hold_command(&p, yaw, &vehicle, &gains);
                    if t >= until {
                        break 'sim ExitStatus::Completed;
                    }
                }
                MissionState::Idle | MissionState::SafetyAbort => {}
            }
            report.commands.push(CommandRow {
                time_s: t,
                z_velocity: cmd.z_velocity,
                yaw_rate: cmd.yaw_rate,
                pitch: cmd.pitch,
                roll: cmd.roll,
            });

            // Safety monitor: localisation staleness counts only during the
            // return; the baseline is the phase-switch time.
            let (loc_time, failures) = match (mission, pipeline.chain()) {
                (MissionState::Return, Some(chain)) => (
                    Some(chain.last_localization_time().unwrap_or(return_start_time)),
                    chain.consecutive_failures(),
                ),
                _ => (None, 0),
            };
            let status = monitor.check(t, loc_time, vehicle.timestamp, t, failures);
            if let SafetyStatus::Abort(reason) = status {
                mission = state_machine_step(mission, MissionEvent::SafetyTriggered)
                    .expect("any state accepts safety abort");
                break 'sim ExitStatus::SafetyAbort(reason.to_string());
            }
        }

        // Every tick: the gimbal's internal stabilisation rejects vehicle
        // motion (learn: level hold with yaw follow; return: hold the
        // commanded pointing), then the plant advances.
        let rot = *vehicle.world_from_vehicle().rotation();
        match (pipeline.phase(), vtr_pointing.as_ref()) {
            (Phase::Return, Some(sp)) => gimbal.point(&rot, sp),
            _ => gimbal.stabilize(&rot, vehicle.yaw, dt),
        }
        let w = wind.step(dt);
        vehicle = step_dynamics(&vehicle, &cmd, &w, dt, &scenario.plant);
        gimbal.step(dt);
    };

    if let MissionState::Hover = mission {
        report.meta.completed = true;
    }
    if exit == ExitStatus::Completed {
        report.meta.completed = true;
    }
    report.meta.exit = exit.label();
    report.meta.teach_keyframes = pipeline.graph.privileged_path().len() as u64;
    report.meta.return_keyframes = pipeline.graph.len() as u64 - report.meta.teach_keyframes;
    report.meta.payload_cache_misses = pipeline.graph.cache_miss_count();
    if return_start_time.is_finite() {
        report.meta.return_duration_s = vehicle.timestamp - return_start_time;
    }

    let mut timers = TimingCollector::default();
    timers.merge(capture_timer);
    timers.merge(pipeline.timers.clone());
    report.timings = timers.finish();

    report.emit(out_dir, scenario.output_format)?;
    Ok(ScenarioOutcome {
        report,
        exit,
        graph_path: graph_saved.then_some(graph_path),
        out_dir: out_dir.to_path_buf(),
    })
}

/// Closed-loop control step from the chain snapshot: trunk-frame position,
/// fitted velocity and yaw mismatch through the path-following laws.
fn closed_loop_command(
    pipeline: &VtrPipeline,
    recent_leaf: &VecDeque<(f64, Vector3<f64>, VertexId)>,
    gains: &ControllerGains,
    previous: ControlCommand,
) -> ControlCommand {
    let Some(chain) = pipeline.chain() else {
        return previous;
    };
    let t_tl = chain.trunk_from_leaf();
    let position = *t_tl.translation();
    let yaw = t_tl.yaw().unwrap_or(0.0);

    // Re-express the recent leaf positions in the current trunk frame and
    // fit a constant velocity through them.
    let samples: Vec<(f64, Vector3<f64>)> = recent_leaf
        .iter()
        .filter_map(|(time, p, trunk)| {
            let t = pipeline
                .graph
                .privileged_transform(chain.trunk(), *trunk)
                .ok()?;
            Some((*time, t.apply(p)))
        })
        .collect();
    let velocity = estimate_velocity(&samples)
        .map(|e| e.velocity)
        .unwrap_or_else(|_| Vector3::zeros());

    match path_reference(chain, &pipeline.graph, gains) {
        Ok(reference) => compute_command(&position, &velocity, yaw, &reference, gains),
        Err(ControlError::PathComplete(_)) => previous,
        Err(_) => previous,
    }
}

/// Sweepable scenario parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    ReturnSpeed,
    ReturnAltitudeOffset,
    ConfusionRate,
    WindSigma,
}

impl std::str::FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "return-speed" => Ok(SweepParam::ReturnSpeed),
            "return-altitude-offset" => Ok(SweepParam::ReturnAltitudeOffset),
            "confusion-rate" => Ok(SweepParam::ConfusionRate),
            "wind-sigma" => Ok(SweepParam::WindSigma),
            other => Err(format!(
                "unknown sweep parameter '{other}' (expected return-speed, \
                 return-altitude-offset, confusion-rate or wind-sigma)"
            )),
        }
    }
}

impl SweepParam {
    pub fn label(&self) -> &'static str {
        match self {
            SweepParam::ReturnSpeed => "return-speed",
            SweepParam::ReturnAltitudeOffset => "return-altitude-offset",
            SweepParam::ConfusionRate => "confusion-rate",
            SweepParam::WindSigma => "wind-sigma",
        }
    }

    pub fn apply(&self, scenario: &mut Scenario, value: f64) {
        match self {
            SweepParam::ReturnSpeed => scenario.return_.speed_mps = value,
            SweepParam::ReturnAltitudeOffset => scenario.return_.altitude_offset_m = value,
            SweepParam::ConfusionRate => scenario.vo.confusion_rate = value,
            SweepParam::WindSigma => scenario.wind.gust_sigma = value,
        }
    }
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("sweep needs at least one value")]
    Empty,
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("sweep i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Run the base scenario once per value of the swept parameter, sharing the
/// world seed, and write a comparative summary table.
pub fn sweep(
    base: &Scenario,
    param: SweepParam,
    values: &[f64],
    out_root: &Path,
) -> Result<Vec<(f64, ScenarioOutcome)>, SweepError> {
    if values.is_empty() {
        return Err(SweepError::Empty);
    }
    std::fs::create_dir_all(out_root)?;
    let mut outcomes = Vec::new();
    for &value in values {
        let mut scenario = base.clone();
        param.apply(&mut scenario, value);
        scenario.name = format!("{}-{}-{}", base.name, param.label(), value);
        let dir = out_root.join(format!("{}-{}", param.label(), value));
        let outcome = run_scenario(&scenario, &dir)?;
        outcomes.push((value, outcome));
    }

    use std::io::Write;
    let mut f = std::fs::File::create(out_root.join("sweep_summary.csv"))?;
    writeln!(
        f,
        "value,exit,completed,loc_median_inliers,loc_mean_inliers,loc_inlier_variance,\
         loc_attempts,loc_failures,cross_track_median_m,cross_track_max_m"
    )?;
    for (value, outcome) in &outcomes {
        let s = outcome.report.summary();
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{}",
            value,
            s.meta.exit,
            s.meta.completed,
            s.localization_inliers.median,
            s.localization_inliers.mean,
            s.localization_inliers.variance,
            s.meta.localization_attempts,
            s.meta.localization_failures,
            s.cross_track_m.median,
            s.cross_track_m.max
        )?;
    }
    Ok(outcomes)
}
