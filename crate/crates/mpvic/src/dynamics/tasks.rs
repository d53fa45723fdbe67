//! Task force models layered on the impedance plant.
//!
//! Each task owns a plant plus a disturbance model and advances in 100 Hz
//! sensor steps (10 per control period). Event schedules are drawn once at
//! construction from the task seed, so a task replays identically per seed.

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    clamp_to_sensor_range, CartesianState, DynamicsError, ImpedanceParams, Plant,
    DEFAULT_WORKSPACE_RADIUS, STIFFNESS_MAX, STIFFNESS_MIN,
};
use crate::seeding;

pub const GRAVITY: f64 = 9.81;

/// Substep for the push contact loop [s]; the 1e4 N/m contact spring needs a
/// finer grid than the 100 Hz sensor interval.
const CONTACT_DT: f64 = 1e-4;

/// Object velocities below this count as stuck [m/s].
const STICK_EPS: f64 = 1e-9;

/// Hold a fixed target under a sinusoidal axis force with uniform noise.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ComplianceTask {
    #[serde(default = "default_amplitude")]
    pub amplitude_n: f64,
    #[serde(default = "default_noise")]
    pub noise_n: f64,
    #[serde(default = "default_period")]
    pub period_s: f64,
    #[serde(default)]
    pub axis: usize,
}

impl Default for ComplianceTask {
    fn default() -> Self {
        Self {
            amplitude_n: default_amplitude(),
            noise_n: default_noise(),
            period_s: default_period(),
            axis: 0,
        }
    }
}

/// Objects dropped onto the end-effector at a fixed interval; each impact is
/// an inelastic velocity jump, then the carried weight loads the arm.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FallingTask {
    #[serde(default = "default_drop_interval")]
    pub drop_interval_s: f64,
    #[serde(default = "default_drop_interval")]
    pub first_drop_s: f64,
    #[serde(default = "default_drops")]
    pub drops: usize,
    #[serde(default = "default_heights")]
    pub height_range_m: [f64; 2],
    #[serde(default = "default_drop_masses")]
    pub mass_range_kg: [f64; 2],
}

impl Default for FallingTask {
    fn default() -> Self {
        Self {
            drop_interval_s: default_drop_interval(),
            first_drop_s: default_drop_interval(),
            drops: default_drops(),
            height_range_m: default_heights(),
            mass_range_kg: default_drop_masses(),
        }
    }
}

/// Push an object along a direction against Coulomb friction through a stiff
/// unilateral contact spring.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PushTask {
    #[serde(default = "default_push_offset")]
    pub target_offset_m: [f64; 3],
    #[serde(default = "default_command_time")]
    pub command_time_s: f64,
    #[serde(default = "default_push_masses")]
    pub object_mass_range_kg: [f64; 2],
    #[serde(default = "default_mu")]
    pub friction_mu: f64,
    #[serde(default = "default_contact_stiffness")]
    pub contact_stiffness: f64,
}

impl Default for PushTask {
    fn default() -> Self {
        Self {
            target_offset_m: default_push_offset(),
            command_time_s: default_command_time(),
            object_mass_range_kg: default_push_masses(),
            friction_mu: default_mu(),
            contact_stiffness: default_contact_stiffness(),
        }
    }
}

fn default_amplitude() -> f64 { 10.0 }
fn default_noise() -> f64 { 5.0 }
fn default_period() -> f64 { 4.0 }
fn default_drop_interval() -> f64 { 2.0 }
fn default_drops() -> usize { 4 }
fn default_heights() -> [f64; 2] { [0.5, 1.0] }
fn default_drop_masses() -> [f64; 2] { [0.5, 3.0] }
// 10 cm travel along the x-y diagonal.
fn default_push_offset() -> [f64; 3] {
    let d = 0.1 / std::f64::consts::SQRT_2;
    [d, d, 0.0]
}
fn default_command_time() -> f64 { 1.0 }
fn default_push_masses() -> [f64; 2] { [0.5, 3.0] }
fn default_mu() -> f64 { 0.5 }
fn default_contact_stiffness() -> f64 { 1e4 }

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Compliance(ComplianceTask),
    Falling(FallingTask),
    Push(PushTask),
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::Compliance(_) => "compliance",
            TaskKind::Falling(_) => "falling",
            TaskKind::Push(_) => "push",
        }
    }

    pub fn default_duration_s(&self) -> f64 {
        match self {
            TaskKind::Compliance(_) => 6.0,
            TaskKind::Falling(_) => 10.0,
            TaskKind::Push(_) => 8.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub task: TaskKind,
    /// Episode length; task-specific default when omitted.
    #[serde(default)]
    pub duration_s: Option<f64>,
    #[serde(default = "default_control_period")]
    pub control_period_s: f64,
    #[serde(default = "default_sensor_period")]
    pub sensor_period_s: f64,
    #[serde(default = "default_inertia")]
    pub inertia: [f64; 3],
    #[serde(default = "default_radius")]
    pub workspace_radius_m: f64,
    #[serde(default = "default_k_init")]
    pub initial_stiffness: [f64; 3],
    #[serde(default = "default_k_min")]
    pub stiffness_min: f64,
    #[serde(default = "default_k_max")]
    pub stiffness_max: f64,
}

fn default_control_period() -> f64 { 0.1 }
fn default_sensor_period() -> f64 { 0.01 }
fn default_inertia() -> [f64; 3] { [1.0, 1.0, 1.0] }
fn default_radius() -> f64 { DEFAULT_WORKSPACE_RADIUS }
fn default_k_init() -> [f64; 3] { [100.0, 100.0, 100.0] }
fn default_k_min() -> f64 { STIFFNESS_MIN }
fn default_k_max() -> f64 { STIFFNESS_MAX }

impl TaskConfig {
    pub fn new(task: TaskKind) -> Self {
        Self {
            task,
            duration_s: None,
            control_period_s: default_control_period(),
            sensor_period_s: default_sensor_period(),
            inertia: default_inertia(),
            workspace_radius_m: default_radius(),
            initial_stiffness: default_k_init(),
            stiffness_min: default_k_min(),
            stiffness_max: default_k_max(),
        }
    }

    pub fn duration(&self) -> f64 {
        self.duration_s.unwrap_or_else(|| self.task.default_duration_s())
    }

    pub fn control_steps(&self) -> u64 {
        (self.duration() / self.control_period_s).round() as u64
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        for (name, v) in [
            ("control_period_s", self.control_period_s),
            ("sensor_period_s", self.sensor_period_s),
            ("workspace_radius_m", self.workspace_radius_m),
            ("stiffness_min", self.stiffness_min),
            ("stiffness_max", self.stiffness_max),
            ("duration_s", self.duration()),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(DynamicsError::NonPositiveParam { name, value: v });
            }
        }
        for v in self.inertia {
            if !(v.is_finite() && v > 0.0) {
                return Err(DynamicsError::NonPositiveParam { name: "inertia", value: v });
            }
        }
        if let TaskKind::Push(p) = &self.task {
            let norm = Vector3::from(p.target_offset_m).norm();
            if !(norm.is_finite() && norm > 0.0) {
                return Err(DynamicsError::NonPositiveParam {
                    name: "target_offset_m norm",
                    value: norm,
                });
            }
        }
        Ok(())
    }
}

/// Sinusoidal disturbance with per-sample uniform noise on one axis.
pub fn compliance_force(
    task: &ComplianceTask,
    t: f64,
    rng: &mut ChaCha8Rng,
) -> Vector3<f64> {
    let mut f = Vector3::zeros();
    let noise =
        if task.noise_n > 0.0 { rng.random_range(-task.noise_n..=task.noise_n) } else { 0.0 };
    f[task.axis.min(2)] =
        task.amplitude_n * (2.0 * std::f64::consts::PI * t / task.period_s).sin() + noise;
    f
}

/// One scheduled drop: an inelastic impact at a fixed sensor step.
#[derive(Clone, Copy, Debug)]
pub struct ScheduledDrop {
    pub sensor_step: u64,
    pub mass_kg: f64,
    pub height_m: f64,
    /// Velocity jump −m·√(2gh)/(m_carried + m_z + m) at the impact.
    pub delta_v: f64,
}

/// Falling-objects bookkeeping: carried mass and remaining drops.
#[derive(Clone, Debug)]
pub struct FallingState {
    pub schedule: Vec<ScheduledDrop>,
    pub next: usize,
    pub carried_kg: f64,
}

impl FallingState {
    /// Draw the full drop schedule. Impact Δv depends on the mass already
    /// carried when the drop lands, so it is computed in schedule order.
    pub fn draw(
        task: &FallingTask,
        inertia_z: f64,
        sensor_period_s: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut schedule = Vec::with_capacity(task.drops);
        let mut carried = 0.0;
        for i in 0..task.drops {
            let mass = rng.random_range(task.mass_range_kg[0]..=task.mass_range_kg[1]);
            let height = rng.random_range(task.height_range_m[0]..=task.height_range_m[1]);
            let t = task.first_drop_s + i as f64 * task.drop_interval_s;
            let delta_v = -mass * (2.0 * GRAVITY * height).sqrt() / (carried + inertia_z + mass);
            schedule.push(ScheduledDrop {
                sensor_step: (t / sensor_period_s).round() as u64,
                mass_kg: mass,
                height_m: height,
                delta_v,
            });
            carried += mass;
        }
        Self { schedule, next: 0, carried_kg: 0.0 }
    }

    /// Advance to `sensor_step`: returns the velocity jump if a drop lands now,
    /// plus the current carried-weight force (always downward).
    pub fn falling_object_step(&mut self, sensor_step: u64) -> (Option<f64>, Vector3<f64>) {
        let mut jump = None;
        if self.next < self.schedule.len() {
            let d = self.schedule[self.next];
            if sensor_step >= d.sensor_step {
                jump = Some(d.delta_v);
                self.carried_kg += d.mass_kg;
                self.next += 1;
            }
        }
        (jump, Vector3::new(0.0, 0.0, -self.carried_kg * GRAVITY))
    }
}

/// Pushed object sliding along a fixed direction: position and velocity of its
/// contact face along that direction, both relative to the start.
#[derive(Clone, Copy, Debug, Default)]
pub struct PushObjectState {
    pub s: f64,
    pub v: f64,
}

/// Advance the pushed object one substep under a known contact force (≥ 0,
/// along the push direction) and stick/slip Coulomb friction. Returns the new
/// object state and the reaction force on the robot (−contact force).
pub fn push_object_step(
    mass_kg: f64,
    mu_static: f64,
    mu_kinetic: f64,
    contact_force: f64,
    state: PushObjectState,
    dt: f64,
) -> (PushObjectState, f64) {
    let normal = mass_kg * GRAVITY;
    let mut s = state.s;
    let mut v = state.v;
    if v.abs() < STICK_EPS {
        if contact_force <= mu_static * normal {
            v = 0.0; // static friction holds
        } else {
            let a = (contact_force - mu_kinetic * normal) / mass_kg;
            v = a * dt;
            s += v * dt;
        }
    } else {
        let a = (contact_force - mu_kinetic * normal * v.signum()) / mass_kg;
        let v_next = v + a * dt;
        v = if v_next * v > 0.0 { v_next } else { 0.0 }; // crossed zero: stop
        s += v * dt;
    }
    (PushObjectState { s, v }, -contact_force)
}

#[derive(Clone, Debug)]
enum KindState {
    Compliance,
    Falling(FallingState),
    Push {
        dir: Vector3<f64>,
        mass_kg: f64,
        object: PushObjectState,
        /// Object displacement along `dir` that puts it on target.
        object_target_s: f64,
    },
}

/// A runnable task: plant + disturbance model + event schedule.
#[derive(Clone, Debug)]
pub struct TaskSim {
    cfg: TaskConfig,
    plant: Plant,
    kind: KindState,
    sensor_step: u64,
    sensors_per_control: u64,
    /// True external force on the plant over the interval starting now.
    applied_force: Vector3<f64>,
    /// What the force sensor reports for that force (range-limited).
    sensed_force: Vector3<f64>,
    rng: ChaCha8Rng,
    clamp_events: u64,
}

impl TaskSim {
    pub fn new(cfg: TaskConfig, seed: u64) -> Result<Self, DynamicsError> {
        cfg.validate()?;
        let mut rng = seeding::stream(seed, "task", 0);
        let inertia = Vector3::from(cfg.inertia);
        let k0 = Vector3::from(cfg.initial_stiffness);
        let params = ImpedanceParams::critically_damped(inertia, k0)?;
        let plant = Plant::new(
            params,
            Vector3::zeros(),
            CartesianState::zero(),
            cfg.workspace_radius_m,
        )?;
        let kind = match &cfg.task {
            TaskKind::Compliance(_) => KindState::Compliance,
            TaskKind::Falling(f) => KindState::Falling(FallingState::draw(
                f,
                inertia.z,
                cfg.sensor_period_s,
                &mut rng,
            )),
            TaskKind::Push(p) => {
                let offset = Vector3::from(p.target_offset_m);
                KindState::Push {
                    dir: offset.normalize(),
                    mass_kg: rng
                        .random_range(p.object_mass_range_kg[0]..=p.object_mass_range_kg[1]),
                    object: PushObjectState::default(),
                    object_target_s: offset.norm(),
                }
            }
        };
        let sensors_per_control = (cfg.control_period_s / cfg.sensor_period_s).round() as u64;
        let mut sim = Self {
            cfg,
            plant,
            kind,
            sensor_step: 0,
            sensors_per_control,
            applied_force: Vector3::zeros(),
            sensed_force: Vector3::zeros(),
            rng,
            clamp_events: 0,
        };
        sim.refresh_force();
        Ok(sim)
    }

    pub fn config(&self) -> &TaskConfig {
        &self.cfg
    }

    pub fn time(&self) -> f64 {
        self.sensor_step as f64 * self.cfg.sensor_period_s
    }

    /// Measured state and sensed external force at the current instant. The
    /// sensed force is range-limited; the plant feels the true force.
    pub fn observe(&self) -> (CartesianState, Vector3<f64>) {
        (self.plant.state, self.sensed_force)
    }

    /// Commanded reference position at the current instant.
    pub fn target(&self) -> Vector3<f64> {
        match &self.kind {
            KindState::Push { dir, object_target_s, .. } => {
                let command_step = match &self.cfg.task {
                    TaskKind::Push(p) => {
                        (p.command_time_s / self.cfg.sensor_period_s).round() as u64
                    }
                    _ => unreachable!(),
                };
                if self.sensor_step >= command_step {
                    dir * *object_target_s
                } else {
                    Vector3::zeros()
                }
            }
            _ => Vector3::zeros(),
        }
    }

    /// Executed stiffness (diagonal).
    pub fn stiffness(&self) -> Vector3<f64> {
        self.plant.params.stiffness
    }

    /// Object displacement along the push direction and the on-target
    /// displacement, if this is a push task.
    pub fn push_progress(&self) -> Option<(f64, f64)> {
        match &self.kind {
            KindState::Push { object, object_target_s, .. } => Some((object.s, *object_target_s)),
            _ => None,
        }
    }

    pub fn carried_mass(&self) -> f64 {
        match &self.kind {
            KindState::Falling(f) => f.carried_kg,
            _ => 0.0,
        }
    }

    pub fn clamp_events(&self) -> u64 {
        self.clamp_events
    }

    /// Recompute the sensed force for the interval starting now.
    fn refresh_force(&mut self) {
        let t = self.time();
        let raw = match (&mut self.kind, &self.cfg.task) {
            (KindState::Compliance, TaskKind::Compliance(c)) => {
                compliance_force(c, t, &mut self.rng)
            }
            (KindState::Falling(state), _) => {
                let (jump, weight) = state.falling_object_step(self.sensor_step);
                if let Some(dv) = jump {
                    self.plant.state.vel.z += dv;
                }
                weight
            }
            (KindState::Push { dir, object, .. }, TaskKind::Push(p)) => {
                let robot_s = self.plant.state.pos.dot(dir);
                let penetration = robot_s - object.s;
                let fc = if penetration > 0.0 { p.contact_stiffness * penetration } else { 0.0 };
                -fc * *dir
            }
            _ => unreachable!(),
        };
        let (clamped, hit) = clamp_to_sensor_range(raw);
        if hit {
            self.clamp_events += 1;
        }
        self.applied_force = raw;
        self.sensed_force = clamped;
    }

    /// Apply a stiffness command and advance one control period (10 sensor
    /// steps at the defaults). The command is validated against the task's
    /// stiffness bounds.
    pub fn advance_control_period(&mut self, stiffness: Vector3<f64>) -> Result<(), DynamicsError> {
        for i in 0..3 {
            if !stiffness[i].is_finite()
                || stiffness[i] < self.cfg.stiffness_min
                || stiffness[i] > self.cfg.stiffness_max
            {
                return Err(DynamicsError::StiffnessOutOfBounds {
                    axis: i,
                    value: stiffness[i],
                    lo: self.cfg.stiffness_min,
                    hi: self.cfg.stiffness_max,
                });
            }
        }
        self.plant.command_stiffness(stiffness)?;
        self.plant.target = self.target();
        for _ in 0..self.sensors_per_control {
            self.advance_sensor_step()?;
        }
        Ok(())
    }

    fn advance_sensor_step(&mut self) -> Result<(), DynamicsError> {
        let dt = self.cfg.sensor_period_s;
        match (&mut self.kind, &self.cfg.task) {
            (KindState::Push { dir, mass_kg, object, .. }, TaskKind::Push(p)) => {
                // Contact and object co-integrate on a finer grid; the sensed
                // force the controller sees is refreshed at sensor boundaries.
                let n = (dt / CONTACT_DT).round().max(1.0) as u64;
                let h = dt / n as f64;
                let dir = *dir;
                let mass = *mass_kg;
                for _ in 0..n {
                    let robot_s = self.plant.state.pos.dot(&dir);
                    let penetration = robot_s - object.s;
                    let fc = if penetration > 0.0 { p.contact_stiffness * penetration } else { 0.0 };
                    let (next, reaction) =
                        push_object_step(mass, p.friction_mu, p.friction_mu, fc, *object, h);
                    *object = next;
                    self.plant.step(&(reaction * dir), h)?;
                }
            }
            _ => {
                let f = self.applied_force;
                self.plant.step(&f, dt)?;
            }
        }
        self.sensor_step += 1;
        self.plant.target = self.target();
        self.refresh_force();
        Ok(())
    }
}
