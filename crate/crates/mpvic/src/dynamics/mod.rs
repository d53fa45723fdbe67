//! Closed-loop Cartesian impedance plant.
//!
//! The inner torque controller renders the robot as a diagonal mass-spring-
//! damper about a commanded reference: per axis,
//! `m·e¨ + d·e˙ + k·e = f_ext` with `e = x − x_r` and `f_ext` the force the
//! environment applies to the end-effector. Axes are fully decoupled, so the
//! plant is three independent second-order systems with piecewise-constant
//! inputs. Integration is semi-implicit Euler with an adaptive substep.

use nalgebra::Vector3;
use thiserror::Error;

pub mod tasks;

/// Lowest commandable stiffness [N/m].
pub const STIFFNESS_MIN: f64 = 0.1;
/// Highest commandable stiffness [N/m].
pub const STIFFNESS_MAX: f64 = 1000.0;
/// Force sensor saturation per axis [N].
pub const SENSOR_FORCE_LIMIT: f64 = 100.0;
/// Reach limit about the workspace centre [m].
pub const DEFAULT_WORKSPACE_RADIUS: f64 = 1.0;
/// Hard ceiling on the integrator substep [s].
pub const MAX_INNER_DT: f64 = 1e-3;

// Substep quality: phase advance ω·h per substep and damping rate d·h/m are
// both capped. 1e-3 rad keeps the first-order global error around 2.5e-5 m at
// 5 cm amplitudes, comfortably under the 1e-4 m budget against the closed form.
const MAX_STEP_PHASE: f64 = 1e-3;
const MAX_STEP_DAMPING: f64 = 5e-2;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("{name} must be strictly positive and finite, got {value}")]
    NonPositiveParam { name: &'static str, value: f64 },
    #[error("stiffness[{axis}] must be non-negative and finite, got {value}")]
    NegativeStiffness { axis: usize, value: f64 },
    #[error("stiffness[{axis}] = {value} outside commanded bounds [{lo}, {hi}]")]
    StiffnessOutOfBounds { axis: usize, value: f64, lo: f64, hi: f64 },
    #[error("non-finite {what}")]
    NonFinite { what: &'static str },
    #[error("dt must be strictly positive and finite, got {0}")]
    BadDt(f64),
    #[error("position ({:.4}, {:.4}, {:.4}) left the workspace (radius {radius} m)", pos[0], pos[1], pos[2])]
    WorkspaceViolation { pos: [f64; 3], radius: f64 },
}

/// End-effector translational state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CartesianState {
    pub pos: Vector3<f64>,
    pub vel: Vector3<f64>,
}

impl CartesianState {
    pub fn new(pos: Vector3<f64>, vel: Vector3<f64>) -> Self {
        Self { pos, vel }
    }

    pub fn zero() -> Self {
        Self { pos: Vector3::zeros(), vel: Vector3::zeros() }
    }

    /// [x, y, z, vx, vy, vz]
    pub fn to_array(&self) -> [f64; 6] {
        [self.pos.x, self.pos.y, self.pos.z, self.vel.x, self.vel.y, self.vel.z]
    }

    pub fn from_array(a: &[f64; 6]) -> Self {
        Self {
            pos: Vector3::new(a[0], a[1], a[2]),
            vel: Vector3::new(a[3], a[4], a[5]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Diagonal impedance parameters, all entries strictly positive.
#[derive(Clone, Copy, Debug)]
pub struct ImpedanceParams {
    pub inertia: Vector3<f64>,
    pub damping: Vector3<f64>,
    pub stiffness: Vector3<f64>,
}

impl ImpedanceParams {
    pub fn new(
        inertia: Vector3<f64>,
        damping: Vector3<f64>,
        stiffness: Vector3<f64>,
    ) -> Result<Self, DynamicsError> {
        for (name, v) in [("inertia", &inertia), ("damping", &damping), ("stiffness", &stiffness)] {
            for i in 0..3 {
                if !(v[i].is_finite() && v[i] > 0.0) {
                    return Err(DynamicsError::NonPositiveParam { name, value: v[i] });
                }
            }
        }
        Ok(Self { inertia, damping, stiffness })
    }

    /// Stiffness plus the matched damping `d = 2·√k`.
    pub fn critically_damped(
        inertia: Vector3<f64>,
        stiffness: Vector3<f64>,
    ) -> Result<Self, DynamicsError> {
        let damping = damping_from_stiffness(&stiffness)?;
        Self::new(inertia, damping, stiffness)
    }
}

/// Damping rule `d_i = 2·√k_i`. Negative or non-finite stiffness is an error,
/// never clamped.
pub fn damping_from_stiffness(stiffness: &Vector3<f64>) -> Result<Vector3<f64>, DynamicsError> {
    for i in 0..3 {
        if !stiffness[i].is_finite() || stiffness[i] < 0.0 {
            return Err(DynamicsError::NegativeStiffness { axis: i, value: stiffness[i] });
        }
    }
    Ok(stiffness.map(|k| 2.0 * k.sqrt()))
}

fn inner_step(params: &ImpedanceParams, dt: f64) -> (usize, f64) {
    let mut h = MAX_INNER_DT;
    for i in 0..3 {
        let omega = (params.stiffness[i] / params.inertia[i]).sqrt();
        if omega > 0.0 {
            h = h.min(MAX_STEP_PHASE / omega);
        }
        h = h.min(MAX_STEP_DAMPING * params.inertia[i] / params.damping[i]);
    }
    let n = (dt / h).ceil().max(1.0) as usize;
    (n, dt / n as f64)
}

/// Advance the closed loop `dt` seconds under constant `f_ext` and reference.
///
/// Per axis and substep h:  a = (f − d·v − k·(x − r)) / m;  v += h·a;  x += h·v.
pub fn step_closed_loop(
    state: &CartesianState,
    params: &ImpedanceParams,
    target: &Vector3<f64>,
    f_ext: &Vector3<f64>,
    dt: f64,
) -> Result<CartesianState, DynamicsError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(DynamicsError::BadDt(dt));
    }
    if !f_ext.iter().all(|v| v.is_finite()) {
        return Err(DynamicsError::NonFinite { what: "external force" });
    }
    if !target.iter().all(|v| v.is_finite()) {
        return Err(DynamicsError::NonFinite { what: "reference position" });
    }
    if !state.is_finite() {
        return Err(DynamicsError::NonFinite { what: "state" });
    }

    let (n, h) = inner_step(params, dt);
    let mut pos = state.pos;
    let mut vel = state.vel;
    for _ in 0..n {
        for i in 0..3 {
            let e = pos[i] - target[i];
            let a = (f_ext[i] - params.damping[i] * vel[i] - params.stiffness[i] * e)
                / params.inertia[i];
            vel[i] += h * a;
            pos[i] += h * vel[i];
        }
    }
    Ok(CartesianState { pos, vel })
}

/// Saturate a force vector to the sensor range. Returns the clamped vector and
/// whether any axis saturated.
pub fn clamp_to_sensor_range(f: Vector3<f64>) -> (Vector3<f64>, bool) {
    let clamped = f.map(|v| v.clamp(-SENSOR_FORCE_LIMIT, SENSOR_FORCE_LIMIT));
    (clamped, clamped != f)
}

/// Plant with a workspace bound. Positions are relative to the workspace
/// centre; leaving the sphere is a hard error, never a silent clamp.
#[derive(Clone, Debug)]
pub struct Plant {
    pub params: ImpedanceParams,
    pub target: Vector3<f64>,
    pub state: CartesianState,
    pub workspace_radius: f64,
}

impl Plant {
    pub fn new(
        params: ImpedanceParams,
        target: Vector3<f64>,
        state: CartesianState,
        workspace_radius: f64,
    ) -> Result<Self, DynamicsError> {
        if !(workspace_radius.is_finite() && workspace_radius > 0.0) {
            return Err(DynamicsError::NonPositiveParam {
                name: "workspace_radius",
                value: workspace_radius,
            });
        }
        Ok(Self { params, target, state, workspace_radius })
    }

    /// Swap in a new stiffness command; damping follows the d = 2·√k rule.
    pub fn command_stiffness(&mut self, stiffness: Vector3<f64>) -> Result<(), DynamicsError> {
        let damping = damping_from_stiffness(&stiffness)?;
        self.params = ImpedanceParams::new(self.params.inertia, damping, stiffness)?;
        Ok(())
    }

    pub fn step(&mut self, f_ext: &Vector3<f64>, dt: f64) -> Result<(), DynamicsError> {
        let next = step_closed_loop(&self.state, &self.params, &self.target, f_ext, dt)?;
        if next.pos.norm() > self.workspace_radius {
            return Err(DynamicsError::WorkspaceViolation {
                pos: [next.pos.x, next.pos.y, next.pos.z],
                radius: self.workspace_radius,
            });
        }
        self.state = next;
        Ok(())
    }
}
