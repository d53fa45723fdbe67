//! Analytic stand-in model and a brute-force planner check.
//!
//! The oracle wraps the closed-loop plant integration as a single-member,
//! zero-variance dynamics model: a prediction is what the plant does over one
//! control period under the queried stiffness, force, and reference. A grid
//! search over constant-stiffness sequences through the same rollout and cost
//! machinery then gives an independent near-optimal cost the planner must
//! stay close to.

use nalgebra::Vector3;
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cem::Bound;
use crate::dynamics::tasks::TaskConfig;
use crate::dynamics::{step_closed_loop, CartesianState, ImpedanceParams};
use crate::mpc::{mpc_step, population_costs, CostWeights, MpcConfig, MpcError};
use crate::penn::{rollout_population, DynamicsModel, ModelError};
use crate::seeding;

#[derive(Clone, Debug)]
pub struct PlantOracleModel {
    pub inertia: Vector3<f64>,
    pub control_period_s: f64,
}

impl PlantOracleModel {
    pub fn new(inertia: Vector3<f64>, control_period_s: f64) -> Self {
        Self { inertia, control_period_s }
    }

    pub fn for_task(cfg: &TaskConfig) -> Self {
        Self::new(
            Vector3::new(cfg.inertia[0], cfg.inertia[1], cfg.inertia[2]),
            cfg.control_period_s,
        )
    }
}

impl Default for PlantOracleModel {
    fn default() -> Self {
        Self::new(Vector3::new(1.0, 1.0, 1.0), 0.1)
    }
}

impl DynamicsModel for PlantOracleModel {
    fn member_count(&self) -> usize {
        1
    }

    fn predict_member(
        &self,
        member: usize,
        states: &Array2<f64>,
        actions: &Array2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>), ModelError> {
        if member != 0 {
            return Err(ModelError::BadMember { member, members: 1 });
        }
        if states.ncols() != 6 || actions.ncols() != 9 || states.nrows() != actions.nrows() {
            return Err(ModelError::BadShape(format!(
                "want (n,6) states and (n,9) actions, got {:?} and {:?}",
                states.dim(),
                actions.dim()
            )));
        }
        let n = states.nrows();
        let mut next = Array2::zeros((n, 6));
        for r in 0..n {
            let s = states.row(r);
            let a = actions.row(r);
            let state = CartesianState::new(
                Vector3::new(s[0], s[1], s[2]),
                Vector3::new(s[3], s[4], s[5]),
            );
            let stiffness = Vector3::new(a[0], a[1], a[2]);
            let force = Vector3::new(a[3], a[4], a[5]);
            let target = Vector3::new(a[6], a[7], a[8]);
            let params = ImpedanceParams::critically_damped(self.inertia, stiffness)
                .map_err(|e| ModelError::Inference(e.to_string()))?;
            let out = step_closed_loop(&state, &params, &target, &force, self.control_period_s)
                .map_err(|e| ModelError::Inference(e.to_string()))?;
            for i in 0..3 {
                next[(r, i)] = out.pos[i];
                next[(r, 3 + i)] = out.vel[i];
            }
        }
        let var = Array2::zeros((n, 6));
        Ok((next, var))
    }
}

#[derive(Clone, Debug)]
pub struct GridSearchResult {
    pub best_stiffness: [f64; 3],
    pub best_cost: f64,
    pub evaluated: usize,
}

/// Exhaustive search over constant-stiffness sequences on an axis-aligned
/// grid, scored exactly like the planner scores its candidates. Frozen axes
/// keep their pinned value.
pub fn grid_search_constant_k<M: DynamicsModel + ?Sized>(
    model: &M,
    state: &[f64; 6],
    force: &[f64; 3],
    target: &[f64; 3],
    weights: &CostWeights,
    cfg: &MpcConfig,
    points_per_axis: usize,
) -> Result<GridSearchResult, MpcError> {
    if points_per_axis < 2 {
        return Err(MpcError::Config("grid needs at least 2 points per axis".into()));
    }
    let free = cfg.free_axes();
    let bound = Bound::new(cfg.stiffness_min, cfg.stiffness_max);
    let axis_values: Vec<f64> = (0..points_per_axis)
        .map(|i| {
            bound.lo + (bound.hi - bound.lo) * i as f64 / (points_per_axis - 1) as f64
        })
        .collect();

    // Cross product over the free axes only.
    let mut combos: Vec<[f64; 3]> = Vec::new();
    let mut idx = vec![0usize; free.len()];
    loop {
        let mut k = [0.0; 3];
        for axis in 0..3 {
            k[axis] = match cfg.frozen_stiffness[axis] {
                Some(v) => v,
                None => {
                    let slot = free.iter().position(|&a| a == axis).expect("free axis");
                    axis_values[idx[slot]]
                }
            };
        }
        combos.push(k);
        let mut carry = free.len();
        while carry > 0 {
            idx[carry - 1] += 1;
            if idx[carry - 1] < points_per_axis {
                break;
            }
            idx[carry - 1] = 0;
            carry -= 1;
        }
        if carry == 0 {
            break;
        }
    }

    let t_len = cfg.horizon;
    let mut k_seqs = Vec::with_capacity(combos.len());
    let mut action_seqs = Vec::with_capacity(combos.len());
    for k in &combos {
        let mut k_seq = Array2::zeros((t_len, 3));
        let mut actions = Array2::zeros((t_len, 9));
        for t in 0..t_len {
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

    // One particle per member; with a deterministic model the draws fall on
    // zero variance and the result is exact.
    let particles = model.member_count();
    let mut rng = seeding::stream(0, "grid-search", 0);
    let steps = rollout_population(model, state, &action_seqs, particles, &mut rng)?;
    let costs = population_costs(&steps, particles, &k_seqs, target, weights);

    let mut best = 0;
    for (i, c) in costs.iter().enumerate() {
        if c < &costs[best] {
            best = i;
        }
    }
    Ok(GridSearchResult {
        best_stiffness: combos[best],
        best_cost: costs[best],
        evaluated: combos.len(),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleCase {
    pub state: [f64; 6],
    pub force: [f64; 3],
    pub planner_cost: f64,
    pub grid_cost: f64,
    /// planner cost over grid cost; at or below 1 the planner matched or
    /// beat every constant-stiffness sequence.
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleCheckReport {
    pub cases: Vec<OracleCase>,
    pub worst_ratio: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Weights giving an interior stiffness optimum, so the comparison exercises
/// a real tradeoff instead of saturating at a bound.
pub fn oracle_check_weights() -> CostWeights {
    CostWeights {
        q_base: [1e7, 1e7, 1e7, 0.0, 0.0, 0.0],
        r_base: [1.0, 1.0, 1.0],
        alpha_q: 1.0,
        alpha_r: 0.1,
        q_scheduling: true,
    }
}

/// Planner settings for the comparison: enough iterations to converge, one
/// particle since the oracle is deterministic.
pub fn oracle_check_config() -> MpcConfig {
    MpcConfig {
        horizon: 5,
        particles: 1,
        population: 200,
        elites: 20,
        iterations: 25,
        smoothing: 0.8,
        ..MpcConfig::default()
    }
}

/// Compare the planner against the constant-stiffness grid on random states.
/// Passes when every planner cost is within `tolerance` (e.g. 0.05 for 5%) of
/// the grid optimum.
pub fn oracle_check(
    seed: u64,
    cases: usize,
    points_per_axis: usize,
    tolerance: f64,
) -> Result<OracleCheckReport, MpcError> {
    let oracle = PlantOracleModel::default();
    let weights = oracle_check_weights();
    let cfg = oracle_check_config();
    let mut out = Vec::with_capacity(cases);
    let mut worst = 0.0f64;
    for i in 0..cases {
        let mut srng = seeding::stream(seed, "oracle-state", i as u64);
        let mut state = [0.0; 6];
        for v in state.iter_mut().take(3) {
            *v = srng.random_range(-0.2..=0.2);
        }
        for v in state.iter_mut().skip(3) {
            *v = srng.random_range(-0.5..=0.5);
        }
        let mut force = [0.0; 3];
        for v in force.iter_mut() {
            *v = srng.random_range(-20.0..=20.0);
        }
        let target = [0.0; 3];

        let warm = cfg.initial_distribution()?;
        let mut prng = seeding::stream(seed, "oracle-plan", i as u64);
        let plan = mpc_step(&oracle, &state, &force, &target, &warm, &weights, &cfg, &mut prng)?;
        let grid = grid_search_constant_k(
            &oracle,
            &state,
            &force,
            &target,
            &weights,
            &cfg,
            points_per_axis,
        )?;
        let ratio = plan.best_cost / grid.best_cost.max(1e-12);
        worst = worst.max(ratio);
        out.push(OracleCase {
            state,
            force,
            planner_cost: plan.best_cost,
            grid_cost: grid.best_cost,
            ratio,
        });
    }
    Ok(OracleCheckReport {
        cases: out,
        worst_ratio: worst,
        tolerance,
        pass: worst <= 1.0 + tolerance,
    })
}
