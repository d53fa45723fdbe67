//! Receding-horizon stiffness planning on a dynamics model.
//!
//! Each control step holds the measured force and the current reference
//! constant over the horizon, searches stiffness sequences with the
//! cross-entropy method, scores candidates by particle rollouts through the
//! model, executes the first stiffness of the winner, and warm-starts the
//! next step from the shifted search distribution.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cem::{self, Bound, CemConfig, SequenceDistribution};
use crate::dynamics::tasks::TaskSim;
use crate::dynamics::DynamicsError;
use crate::episode::{EpisodeLog, EpisodeRow};
use crate::penn::{rollout_population, DynamicsModel, ModelError};

#[derive(Error, Debug)]
pub enum MpcError {
    #[error("bad controller configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Cem(#[from] cem::CemError),
}

/// Quadratic cost weights. The state penalty acts on the deviation from the
/// reference position (velocity reference is zero); the stiffness penalty
/// acts on the eigenvalues of the diagonal stiffness matrix, which are its
/// diagonal entries, each paired with its own axis weight so a consistent
/// relabeling of axes leaves the cost unchanged.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostWeights {
    /// Diagonal state-error weights: three position, then three velocity.
    pub q_base: [f64; 6],
    /// Diagonal stiffness-eigenvalue weights, one per axis.
    pub r_base: [f64; 3],
    pub alpha_q: f64,
    pub alpha_r: f64,
    /// Scale the state penalty linearly with the position error norm, so the
    /// controller goes soft near the reference and stiff far from it.
    pub q_scheduling: bool,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            q_base: [1.0, 1.0, 1.0, 0.0, 0.0, 0.0],
            r_base: [1.0, 1.0, 1.0],
            alpha_q: 1.0,
            alpha_r: 0.1,
            q_scheduling: true,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<(), MpcError> {
        for v in self.q_base.iter().chain(self.r_base.iter()) {
            if !v.is_finite() || *v < 0.0 {
                return Err(MpcError::Config(format!("weights must be finite and >= 0, got {v}")));
            }
        }
        for (name, v) in [("alpha_q", self.alpha_q), ("alpha_r", self.alpha_r)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(MpcError::Config(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Eigenvalues of a diagonal stiffness matrix, ascending.
pub fn stiffness_eigenvalues(stiffness: &[f64; 3]) -> [f64; 3] {
    let mut v = *stiffness;
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite stiffness"));
    v
}

/// One-step cost: position and velocity error against the reference plus the
/// stiffness penalty.
pub fn step_cost(
    state: &[f64; 6],
    target: &[f64; 3],
    stiffness: &[f64; 3],
    w: &CostWeights,
) -> f64 {
    let ds = [
        target[0] - state[0],
        target[1] - state[1],
        target[2] - state[2],
        -state[3],
        -state[4],
        -state[5],
    ];
    let pos_norm = (ds[0] * ds[0] + ds[1] * ds[1] + ds[2] * ds[2]).sqrt();
    let q_scale = if w.q_scheduling { w.alpha_q * pos_norm } else { w.alpha_q };
    let mut c = 0.0;
    for i in 0..6 {
        c += q_scale * w.q_base[i] * ds[i] * ds[i];
    }
    for j in 0..3 {
        c += w.alpha_r * w.r_base[j] * stiffness[j] * stiffness[j];
    }
    c
}

/// Mean over particles of the summed step cost along the horizon. Each
/// trajectory is (horizon+1, 6) with the shared start in row 0; predicted
/// state t+1 pays the cost of the stiffness that produced it. A particle
/// containing a non-finite state is charged an infinite cost so the whole
/// sequence ranks behind every finite one.
pub fn trajectory_cost(
    trajectories: &[Array2<f64>],
    stiffness_seq: &Array2<f64>,
    target: &[f64; 3],
    w: &CostWeights,
) -> f64 {
    let t_len = stiffness_seq.nrows();
    assert!(!trajectories.is_empty(), "no particles");
    let mut total = 0.0;
    for tr in trajectories {
        assert_eq!(tr.dim(), (t_len + 1, 6), "trajectory shape");
        let mut c = 0.0;
        for t in 0..t_len {
            let row = tr.row(t + 1);
            let state = [row[0], row[1], row[2], row[3], row[4], row[5]];
            let k_row = stiffness_seq.row(t);
            let k = [k_row[0], k_row[1], k_row[2]];
            if state.iter().any(|v| !v.is_finite()) {
                c = f64::INFINITY;
                break;
            }
            c += step_cost(&state, target, &k, w);
        }
        total += if c.is_finite() { c } else { f64::INFINITY };
    }
    total / trajectories.len() as f64
}

/// Same cost on the batched rollout layout: `steps[t]` holds row q·p + j for
/// particle j of sequence q. Must agree with [`trajectory_cost`] applied to
/// the per-particle trajectories.
pub(crate) fn population_costs(
    steps: &[Array2<f64>],
    particles: usize,
    stiffness_seqs: &[Array2<f64>],
    target: &[f64; 3],
    w: &CostWeights,
) -> Vec<f64> {
    let t_len = steps.len();
    let mut costs = Vec::with_capacity(stiffness_seqs.len());
    for (q, k_seq) in stiffness_seqs.iter().enumerate() {
        let mut total = 0.0;
        for j in 0..particles {
            let r = q * particles + j;
            let mut c = 0.0;
            for (t, step) in steps.iter().enumerate().take(t_len) {
                let row = step.row(r);
                let state = [row[0], row[1], row[2], row[3], row[4], row[5]];
                let k_row = k_seq.row(t);
                let k = [k_row[0], k_row[1], k_row[2]];
                if state.iter().any(|v| !v.is_finite()) {
                    c = f64::INFINITY;
                    break;
                }
                c += step_cost(&state, target, &k, w);
            }
            total += if c.is_finite() { c } else { f64::INFINITY };
        }
        costs.push(total / particles as f64);
    }
    costs
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    /// Planning horizon in control steps.
    pub horizon: usize,
    /// Particles per candidate sequence; must be a multiple of the member
    /// count of the model in use.
    pub particles: usize,
    pub population: usize,
    pub elites: usize,
    pub iterations: usize,
    pub smoothing: f64,
    pub stiffness_min: f64,
    pub stiffness_max: f64,
    /// Axes pinned to a fixed stiffness and excluded from the search.
    pub frozen_stiffness: [Option<f64>; 3],
    /// Per-step re-search width as a fraction of the stiffness range. Wide
    /// widths re-optimize globally every step; narrow ones let a settled
    /// plan persist against sampling noise.
    pub warm_sd_frac: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 5,
            particles: 10,
            population: cem::DEFAULT_POPULATION,
            elites: cem::DEFAULT_ELITES,
            iterations: cem::DEFAULT_ITERATIONS,
            smoothing: cem::DEFAULT_SMOOTHING,
            stiffness_min: crate::dynamics::STIFFNESS_MIN,
            stiffness_max: crate::dynamics::STIFFNESS_MAX,
            frozen_stiffness: [None, None, None],
            warm_sd_frac: DEFAULT_WARM_SD_FRAC,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<(), MpcError> {
        if self.horizon == 0 {
            return Err(MpcError::Config("horizon must be at least 1".into()));
        }
        if self.particles == 0 {
            return Err(MpcError::Config("need at least one particle".into()));
        }
        if !(self.stiffness_min.is_finite()
            && self.stiffness_max.is_finite()
            && self.stiffness_min > 0.0
            && self.stiffness_min < self.stiffness_max)
        {
            return Err(MpcError::Config(format!(
                "stiffness bounds [{}, {}] invalid",
                self.stiffness_min, self.stiffness_max
            )));
        }
        for (axis, frozen) in self.frozen_stiffness.iter().enumerate() {
            if let Some(v) = frozen {
                if !v.is_finite() || *v < self.stiffness_min || *v > self.stiffness_max {
                    return Err(MpcError::Config(format!(
                        "frozen stiffness {v} on axis {axis} outside bounds"
                    )));
                }
            }
        }
        if self.free_axes().is_empty() {
            return Err(MpcError::Config("all axes frozen, nothing to plan".into()));
        }
        if !(self.warm_sd_frac > 0.0 && self.warm_sd_frac <= 1.0) {
            return Err(MpcError::Config(format!(
                "warm_sd_frac {} outside (0, 1]",
                self.warm_sd_frac
            )));
        }
        self.cem_config().validate()?;
        Ok(())
    }

    pub fn free_axes(&self) -> Vec<usize> {
        (0..3).filter(|&i| self.frozen_stiffness[i].is_none()).collect()
    }

    fn cem_config(&self) -> CemConfig {
        let bound = Bound::new(self.stiffness_min, self.stiffness_max);
        CemConfig {
            population: self.population,
            elites: self.elites,
            smoothing: self.smoothing,
            iterations: self.iterations,
            bounds: vec![bound; self.free_axes().len()],
        }
    }

    /// Search distribution centered in the box with the box-derived variance.
    pub fn initial_distribution(&self) -> Result<SequenceDistribution, MpcError> {
        Ok(SequenceDistribution::boxed_init(self.horizon, &self.cem_config().bounds)?)
    }

    /// Search distribution whose mean holds the given stiffness command, so
    /// the first plan starts from what the arm is already doing.
    pub fn distribution_about(&self, stiffness: &[f64; 3]) -> Result<SequenceDistribution, MpcError> {
        let mut dist = self.initial_distribution()?;
        for (col, &axis) in self.free_axes().iter().enumerate() {
            dist.mean.column_mut(col).fill(stiffness[axis]);
        }
        Ok(dist)
    }

    /// Full 3-axis stiffness row from a sampled row over the free axes.
    fn expand_row(&self, free: &[f64]) -> [f64; 3] {
        let mut k = [0.0; 3];
        let mut it = free.iter();
        for (axis, slot) in k.iter_mut().enumerate() {
            *slot = match self.frozen_stiffness[axis] {
                Some(v) => v,
                None => *it.next().expect("free axis value"),
            };
        }
        k
    }
}

/// Default per-step re-search width: a quarter of the box, the same spread a
/// fresh boxed distribution starts with.
pub const DEFAULT_WARM_SD_FRAC: f64 = 0.25;

/// Warm start: drop the executed first step, repeat the last, reset the
/// variance to the given width so the search keeps probing without
/// collapsing across control steps.
pub fn shifted_for_next_step(dist: &SequenceDistribution, sd_frac: f64) -> SequenceDistribution {
    let t_len = dist.mean.nrows();
    let mut mean = Array2::zeros(dist.mean.dim());
    for t in 0..t_len {
        let src = (t + 1).min(t_len - 1);
        mean.row_mut(t).assign(&dist.mean.row(src));
    }
    let mut var = Array2::zeros(dist.var.dim());
    for (j, b) in dist.bounds.iter().enumerate() {
        let sd = sd_frac * (b.hi - b.lo);
        var.column_mut(j).fill(sd * sd);
    }
    SequenceDistribution { mean, var, bounds: dist.bounds.clone() }
}

/// Outcome of one planning step.
#[derive(Clone, Debug)]
pub struct StepPlan {
    pub stiffness: [f64; 3],
    pub dist: SequenceDistribution,
    pub best_cost: f64,
    pub iteration_best: Vec<f64>,
    pub nonfinite_samples: usize,
    pub plan_seconds: f64,
}

/// Plan one control step: CEM over stiffness sequences, scored by particle
/// rollouts with the measured force and the reference held constant. The
/// shifted previous plan is scored alongside the population and kept, mean
/// included, whenever no sampled sequence beats it.
pub fn mpc_step<M: DynamicsModel + ?Sized>(
    model: &M,
    state: &[f64; 6],
    force: &[f64; 3],
    target: &[f64; 3],
    warm: &SequenceDistribution,
    weights: &CostWeights,
    cfg: &MpcConfig,
    rng: &mut ChaCha8Rng,
) -> Result<StepPlan, MpcError> {
    let started = std::time::Instant::now();
    let members = model.member_count();
    if members == 0 || cfg.particles % members != 0 {
        return Err(MpcError::Config(format!(
            "{} particles not a multiple of {} members",
            cfg.particles, members
        )));
    }
    let cem_cfg = cfg.cem_config();
    let init = shifted_for_next_step(warm, cfg.warm_sd_frac);

    // The optimizer and the rollouts each own a generator so the closure can
    // draw particle noise while the optimizer samples candidates.
    let mut roll_seed = [0u8; 32];
    rng.fill(&mut roll_seed);
    let mut roll_rng = ChaCha8Rng::from_seed(roll_seed);

    let mut failure: Option<ModelError> = None;
    let (incumbent_cost, result) = {
        let failure = &mut failure;
        let mut cost_fn = |cands: &[Array2<f64>]| -> Vec<f64> {
            let mut k_seqs = Vec::with_capacity(cands.len());
            let mut action_seqs = Vec::with_capacity(cands.len());
            for cand in cands {
                let t_len = cand.nrows();
                let mut k_seq = Array2::zeros((t_len, 3));
                let mut actions = Array2::zeros((t_len, 9));
                for t in 0..t_len {
                    let free: Vec<f64> = cand.row(t).to_vec();
                    let k = cfg.expand_row(&free);
                    for a in 0..3 {
                        k_seq[(t, a)] = k[a];
                        actions[(t, a)] = k[a];
                        actions[(t, 3 + a)] = force[a];
                        actions[(t, 6 + a)] = target[a];
                    }
                }
                k_seqs.push(k_seq);
                action_seqs.push(actions);
            }
            match rollout_population(model, state, &action_seqs, cfg.particles, &mut roll_rng) {
                Ok(steps) => population_costs(&steps, cfg.particles, &k_seqs, target, weights),
                Err(e) => {
                    *failure = Some(e);
                    vec![f64::INFINITY; cands.len()]
                }
            }
        };
        // Score the carried plan itself before optimizing, so a settled plan
        // competes against the sampled population instead of being lost.
        let incumbent_cost = cost_fn(std::slice::from_ref(&init.mean))[0];
        let result = cem::optimize(&mut cost_fn, &init, &cem_cfg, rng)?;
        (incumbent_cost, result)
    };
    if let Some(e) = failure {
        return Err(MpcError::Model(e));
    }

    let retained = incumbent_cost.is_finite() && incumbent_cost < result.best_cost;
    let mut dist = result.final_dist;
    let (first, best_cost) = if retained {
        dist.mean = init.mean.clone();
        (init.mean.row(0).to_vec(), incumbent_cost)
    } else {
        (result.best_sequence.row(0).to_vec(), result.best_cost)
    };
    let mut stiffness = cfg.expand_row(&first);
    for v in stiffness.iter_mut() {
        *v = v.clamp(cfg.stiffness_min, cfg.stiffness_max);
    }
    Ok(StepPlan {
        stiffness,
        dist,
        best_cost,
        iteration_best: result.stats.iter().map(|s| s.best_cost).collect(),
        nonfinite_samples: result.nonfinite_total,
        plan_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Per-step planning record kept alongside the episode log.
#[derive(Clone, Debug)]
pub struct StepDiagnostics {
    pub stiffness: [f64; 3],
    pub best_cost: f64,
    pub iteration_best: Vec<f64>,
    pub nonfinite_samples: usize,
    pub plan_seconds: f64,
    /// Planning failed and the previous stiffness was reused.
    pub fallback: bool,
}

/// Stateful wrapper carrying the warm-start distribution and the last
/// executed stiffness between control steps. A failed planning step falls
/// back to the previous stiffness and flags the record instead of aborting.
pub struct Controller<'a, M: DynamicsModel + ?Sized> {
    model: &'a M,
    pub weights: CostWeights,
    pub cfg: MpcConfig,
    dist: SequenceDistribution,
    prev_stiffness: [f64; 3],
    rng: ChaCha8Rng,
}

impl<'a, M: DynamicsModel + ?Sized> Controller<'a, M> {
    pub fn new(
        model: &'a M,
        weights: CostWeights,
        cfg: MpcConfig,
        initial_stiffness: [f64; 3],
        rng: ChaCha8Rng,
    ) -> Result<Self, MpcError> {
        weights.validate()?;
        cfg.validate()?;
        for v in initial_stiffness {
            if !(cfg.stiffness_min..=cfg.stiffness_max).contains(&v) {
                return Err(MpcError::Config(format!(
                    "initial stiffness {v} outside [{}, {}]",
                    cfg.stiffness_min, cfg.stiffness_max
                )));
            }
        }
        let dist = cfg.distribution_about(&initial_stiffness)?;
        Ok(Self { model, weights, cfg, dist, prev_stiffness: initial_stiffness, rng })
    }

    pub fn plan(&mut self, state: &[f64; 6], force: &[f64; 3], target: &[f64; 3]) -> StepDiagnostics {
        match mpc_step(
            self.model,
            state,
            force,
            target,
            &self.dist,
            &self.weights,
            &self.cfg,
            &mut self.rng,
        ) {
            Ok(plan) => {
                self.dist = plan.dist;
                self.prev_stiffness = plan.stiffness;
                StepDiagnostics {
                    stiffness: plan.stiffness,
                    best_cost: plan.best_cost,
                    iteration_best: plan.iteration_best,
                    nonfinite_samples: plan.nonfinite_samples,
                    plan_seconds: plan.plan_seconds,
                    fallback: false,
                }
            }
            Err(_) => StepDiagnostics {
                stiffness: self.prev_stiffness,
                best_cost: f64::NAN,
                iteration_best: Vec::new(),
                nonfinite_samples: 0,
                plan_seconds: 0.0,
                fallback: true,
            },
        }
    }
}

/// A finished closed-loop run.
#[derive(Debug)]
pub struct Episode {
    pub log: EpisodeLog,
    pub diagnostics: Vec<StepDiagnostics>,
}

/// Drive a task with the planner: observe, plan, execute one control period,
/// log. A workspace violation ends the episode early with the log preserved.
pub fn run_episode<M: DynamicsModel + ?Sized>(
    sim: &mut TaskSim,
    controller: &mut Controller<'_, M>,
) -> Result<Episode, MpcError> {
    let steps = sim.config().control_steps();
    let mut log = EpisodeLog::new();
    let mut diagnostics = Vec::with_capacity(steps as usize);
    for _ in 0..steps {
        let (state, force) = sim.observe();
        let s = state.to_array();
        let f = [force.x, force.y, force.z];
        let tv = sim.target();
        let target = [tv.x, tv.y, tv.z];
        let d = controller.plan(&s, &f, &target);
        let cost = step_cost(&s, &target, &d.stiffness, &controller.weights);
        log.push(EpisodeRow::new(sim.time(), &s, &d.stiffness, &f, cost));
        let k = nalgebra::Vector3::new(d.stiffness[0], d.stiffness[1], d.stiffness[2]);
        diagnostics.push(d);
        match sim.advance_control_period(k) {
            Ok(()) => {}
            Err(DynamicsError::WorkspaceViolation { .. }) => {
                log.terminated_early = true;
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Episode { log, diagnostics })
}
