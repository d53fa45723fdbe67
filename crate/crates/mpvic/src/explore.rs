//! Curiosity-driven data collection.
//!
//! Trials alternate with training rounds: the first trials act randomly, the
//! rest plan stiffness sequences that maximize disagreement between ensemble
//! members while the force and reference excitations are drawn fresh every
//! control step. The product is a dataset covering the impedance dynamics
//! plus a model fitted to it.

use nalgebra::Vector3;
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cem::{self, Bound, CemConfig, SequenceDistribution};
use crate::dynamics::{CartesianState, DynamicsError, ImpedanceParams, Plant};
use crate::mpc::shifted_for_next_step;
use crate::penn::{
    rollout_mean, Dataset, EnsembleConfig, EnsembleModel, ModelError, TrainConfig, TrainError,
    Transition,
};
use crate::seeding;

pub const DEFAULT_FORCE_RANGE_N: f64 = 20.0;
pub const DEFAULT_REFERENCE_RANGE_M: f64 = 0.1;

#[derive(Error, Debug)]
pub enum ExploreError {
    #[error("bad exploration configuration: {0}")]
    Config(String),
    #[error("training failed with {rows} transitions collected: {source}")]
    Training {
        rows: usize,
        source: TrainError,
        /// Everything collected before the failure, preserved for saving.
        dataset: Box<Dataset>,
    },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Cem(#[from] cem::CemError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplorationConfig {
    /// Trials acting uniformly at random before any planning.
    pub initial_random_trials: usize,
    /// Trials planned by the curiosity objective, one training round before
    /// each and one more after the last.
    pub planned_trials: usize,
    /// Control steps per trial.
    pub trial_steps: usize,
    /// Per-axis excitation force drawn uniformly in ±this every step.
    pub force_range_n: f64,
    /// Per-axis reference offset drawn uniformly in ±this every step.
    pub reference_range_m: f64,
    pub stiffness_min: f64,
    pub stiffness_max: f64,
    pub control_period_s: f64,
    pub inertia: [f64; 3],
    pub workspace_radius_m: f64,
    /// Planning horizon for the curiosity search.
    pub horizon: usize,
    pub population: usize,
    pub elites: usize,
    pub iterations: usize,
    pub smoothing: f64,
    /// Fixed query points for tracking how the spread shrinks.
    pub probe_points: usize,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        Self {
            initial_random_trials: 5,
            planned_trials: 15,
            trial_steps: 100,
            force_range_n: DEFAULT_FORCE_RANGE_N,
            reference_range_m: DEFAULT_REFERENCE_RANGE_M,
            stiffness_min: crate::dynamics::STIFFNESS_MIN,
            stiffness_max: crate::dynamics::STIFFNESS_MAX,
            control_period_s: 0.1,
            inertia: [1.0, 1.0, 1.0],
            workspace_radius_m: crate::dynamics::DEFAULT_WORKSPACE_RADIUS,
            horizon: 5,
            population: 50,
            elites: 10,
            iterations: 5,
            smoothing: 0.7,
            probe_points: 20,
        }
    }
}

impl ExplorationConfig {
    pub fn validate(&self) -> Result<(), ExploreError> {
        if self.trial_steps == 0 {
            return Err(ExploreError::Config("trial_steps must be at least 1".into()));
        }
        if self.initial_random_trials == 0 {
            return Err(ExploreError::Config("need at least one random trial".into()));
        }
        for (name, v) in [
            ("force_range_n", self.force_range_n),
            ("reference_range_m", self.reference_range_m),
            ("control_period_s", self.control_period_s),
            ("workspace_radius_m", self.workspace_radius_m),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(ExploreError::Config(format!("{name} must be finite and > 0")));
            }
        }
        if !(self.stiffness_min > 0.0 && self.stiffness_min < self.stiffness_max) {
            return Err(ExploreError::Config("stiffness bounds invalid".into()));
        }
        if self.horizon == 0 || self.probe_points == 0 {
            return Err(ExploreError::Config("horizon and probe_points must be positive".into()));
        }
        self.cem_config().validate()?;
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        (self.initial_random_trials + self.planned_trials) * self.trial_steps
    }

    fn cem_config(&self) -> CemConfig {
        CemConfig {
            population: self.population,
            elites: self.elites,
            smoothing: self.smoothing,
            iterations: self.iterations,
            bounds: vec![Bound::new(self.stiffness_min, self.stiffness_max); 3],
        }
    }

    fn fresh_plant(&self) -> Result<Plant, DynamicsError> {
        let inertia = Vector3::new(self.inertia[0], self.inertia[1], self.inertia[2]);
        let stiffness = Vector3::from_element(self.stiffness_min.max(1.0));
        let params = ImpedanceParams::critically_damped(inertia, stiffness)?;
        Plant::new(params, Vector3::zeros(), CartesianState::zero(), self.workspace_radius_m)
    }
}

/// One per-step excitation draw: stiffness only for planned trials, all three
/// for random ones.
fn draw_excitation(cfg: &ExplorationConfig, rng: &mut ChaCha8Rng) -> ([f64; 3], [f64; 3]) {
    let mut f = [0.0; 3];
    let mut r = [0.0; 3];
    for i in 0..3 {
        f[i] = rng.random_range(-cfg.force_range_n..=cfg.force_range_n);
        r[i] = rng.random_range(-cfg.reference_range_m..=cfg.reference_range_m);
    }
    (f, r)
}

fn execute_step(
    plant: &mut Plant,
    stiffness: [f64; 3],
    force: [f64; 3],
    reference: [f64; 3],
    dt: f64,
) -> Result<Option<Transition>, DynamicsError> {
    let before = plant.state.to_array();
    plant.command_stiffness(Vector3::new(stiffness[0], stiffness[1], stiffness[2]))?;
    plant.target = Vector3::new(reference[0], reference[1], reference[2]);
    match plant.step(&Vector3::new(force[0], force[1], force[2]), dt) {
        Ok(()) => {
            let mut action = [0.0; 9];
            action[..3].copy_from_slice(&stiffness);
            action[3..6].copy_from_slice(&force);
            action[6..].copy_from_slice(&reference);
            Ok(Some(Transition {
                state: before,
                action,
                next_state: plant.state.to_array(),
            }))
        }
        Err(DynamicsError::WorkspaceViolation { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Uniformly random stiffness, force, and reference each step. A workspace
/// violation ends the trial early; everything collected so far is kept.
pub fn random_trial(
    cfg: &ExplorationConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Transition>, ExploreError> {
    let mut plant = cfg.fresh_plant()?;
    let mut out = Vec::with_capacity(cfg.trial_steps);
    for _ in 0..cfg.trial_steps {
        let mut k = [0.0; 3];
        for v in k.iter_mut() {
            *v = rng.random_range(cfg.stiffness_min..=cfg.stiffness_max);
        }
        let (f, r) = draw_excitation(cfg, rng);
        match execute_step(&mut plant, k, f, r, cfg.control_period_s)? {
            Some(tr) => out.push(tr),
            None => break,
        }
    }
    Ok(out)
}

/// Negated spread summed along the mean-propagated rollout; minimizing this
/// steers the search toward queries the members disagree on.
pub fn curiosity_cost(
    model: &EnsembleModel,
    state: &[f64; 6],
    actions: &Array2<f64>,
) -> Result<f64, ModelError> {
    Ok(curiosity_costs(model, state, std::slice::from_ref(actions))?[0])
}

fn curiosity_costs(
    model: &EnsembleModel,
    state: &[f64; 6],
    action_seqs: &[Array2<f64>],
) -> Result<Vec<f64>, ModelError> {
    let roll = rollout_mean(model, state, action_seqs)?;
    Ok((0..action_seqs.len()).map(|q| -roll.rho.row(q).sum()).collect())
}

/// One planned trial: each control step draws the excitation, searches
/// stiffness sequences for maximal ensemble disagreement with the drawn
/// excitation held over the horizon, executes the first stiffness.
fn planned_trial(
    model: &EnsembleModel,
    cfg: &ExplorationConfig,
    env_rng: &mut ChaCha8Rng,
    plan_rng: &mut ChaCha8Rng,
) -> Result<Vec<Transition>, ExploreError> {
    let cem_cfg = cfg.cem_config();
    let mut plant = cfg.fresh_plant()?;
    let mut dist = SequenceDistribution::boxed_init(cfg.horizon, &cem_cfg.bounds)?;
    let mut out = Vec::with_capacity(cfg.trial_steps);
    for _ in 0..cfg.trial_steps {
        let (f, r) = draw_excitation(cfg, env_rng);
        let state = plant.state.to_array();

        let mut failure: Option<ModelError> = None;
        let result = {
            let failure = &mut failure;
            let cost_fn = |cands: &[Array2<f64>]| -> Vec<f64> {
                let action_seqs: Vec<Array2<f64>> = cands
                    .iter()
                    .map(|k_seq| {
                        let mut a = Array2::zeros((k_seq.nrows(), 9));
                        for t in 0..k_seq.nrows() {
                            for i in 0..3 {
                                a[(t, i)] = k_seq[(t, i)];
                                a[(t, 3 + i)] = f[i];
                                a[(t, 6 + i)] = r[i];
                            }
                        }
                        a
                    })
                    .collect();
                match curiosity_costs(model, &state, &action_seqs) {
                    Ok(costs) => costs,
                    Err(e) => {
                        *failure = Some(e);
                        vec![f64::INFINITY; cands.len()]
                    }
                }
            };
            cem::optimize(
                cost_fn,
                &shifted_for_next_step(&dist, crate::mpc::DEFAULT_WARM_SD_FRAC),
                &cem_cfg,
                plan_rng,
            )?
        };
        if let Some(e) = failure {
            return Err(e.into());
        }
        dist = result.final_dist;

        let row = result.best_sequence.row(0);
        let k = [
            row[0].clamp(cfg.stiffness_min, cfg.stiffness_max),
            row[1].clamp(cfg.stiffness_min, cfg.stiffness_max),
            row[2].clamp(cfg.stiffness_min, cfg.stiffness_max),
        ];
        match execute_step(&mut plant, k, f, r, cfg.control_period_s)? {
            Some(tr) => out.push(tr),
            None => break,
        }
    }
    Ok(out)
}

/// Fixed (state, action) query points for tracking the spread across rounds.
fn probe_set(cfg: &ExplorationConfig, seed: u64) -> Vec<([f64; 6], [f64; 9])> {
    let mut rng = seeding::stream(seed, "probe", 0);
    (0..cfg.probe_points)
        .map(|_| {
            let mut s = [0.0; 6];
            for v in s.iter_mut().take(3) {
                *v = rng.random_range(-cfg.reference_range_m..=cfg.reference_range_m);
            }
            for v in s.iter_mut().skip(3) {
                *v = rng.random_range(-0.5..=0.5);
            }
            let mut a = [0.0; 9];
            for v in a.iter_mut().take(3) {
                *v = rng.random_range(cfg.stiffness_min..=cfg.stiffness_max);
            }
            for v in a.iter_mut().skip(3).take(3) {
                *v = rng.random_range(-cfg.force_range_n..=cfg.force_range_n);
            }
            for v in a.iter_mut().skip(6) {
                *v = rng.random_range(-cfg.reference_range_m..=cfg.reference_range_m);
            }
            (s, a)
        })
        .collect()
}

fn probe_rho_mean(
    model: &EnsembleModel,
    probes: &[([f64; 6], [f64; 9])],
) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for (s, a) in probes {
        total += model.predict_uncertainty(s, a)?;
    }
    Ok(total / probes.len() as f64)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RoundStat {
    pub round: usize,
    pub dataset_rows: usize,
    pub holdout_nll: Option<f64>,
    pub probe_rho_mean: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExplorationReport {
    pub rounds: Vec<RoundStat>,
    pub random_trials: usize,
    pub planned_trials: usize,
    pub truncated_trials: usize,
    pub total_transitions: usize,
}

impl ExplorationReport {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        w.write_record(["round", "dataset_rows", "holdout_nll", "probe_rho_mean"])?;
        for r in &self.rounds {
            w.write_record([
                r.round.to_string(),
                r.dataset_rows.to_string(),
                r.holdout_nll.map(|v| v.to_string()).unwrap_or_default(),
                r.probe_rho_mean.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// The full loop: random trials, then train-plan-collect cycles, then a final
/// training round over everything. A training failure reports the dataset
/// collected so far inside the error.
pub fn explore_and_learn(
    cfg: &ExplorationConfig,
    ensemble_cfg: &EnsembleConfig,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<(EnsembleModel, Dataset, ExplorationReport), ExploreError> {
    cfg.validate()?;
    let mut model = EnsembleModel::new(ensemble_cfg.clone())?;
    let mut data = Dataset::new();
    let mut truncated = 0usize;

    for trial in 0..cfg.initial_random_trials {
        let mut rng = seeding::stream(seed, "explore-random", trial as u64);
        let transitions = random_trial(cfg, &mut rng)?;
        if transitions.len() < cfg.trial_steps {
            truncated += 1;
        }
        for tr in transitions {
            data.push(tr);
        }
    }

    let probes = probe_set(cfg, seed);
    let mut rounds = Vec::with_capacity(cfg.planned_trials + 1);
    let train = |model: &mut EnsembleModel, data: &Dataset, round: usize| {
        match model.train_round(data, train_cfg, seed, round as u64) {
            Ok(report) => Ok(report),
            Err(source) => Err(ExploreError::Training {
                rows: data.len(),
                source,
                dataset: Box::new(data.clone()),
            }),
        }
    };

    for trial in 0..cfg.planned_trials {
        let report = train(&mut model, &data, trial)?;
        rounds.push(RoundStat {
            round: trial,
            dataset_rows: data.len(),
            holdout_nll: report.final_holdout_nll,
            probe_rho_mean: probe_rho_mean(&model, &probes)?,
        });
        let mut env_rng = seeding::stream(seed, "explore-planned", trial as u64);
        let mut plan_rng = seeding::stream(seed, "explore-plan", trial as u64);
        let transitions = planned_trial(&model, cfg, &mut env_rng, &mut plan_rng)?;
        if transitions.len() < cfg.trial_steps {
            truncated += 1;
        }
        for tr in transitions {
            data.push(tr);
        }
    }

    let final_round = cfg.planned_trials;
    let report = train(&mut model, &data, final_round)?;
    rounds.push(RoundStat {
        round: final_round,
        dataset_rows: data.len(),
        holdout_nll: report.final_holdout_nll,
        probe_rho_mean: probe_rho_mean(&model, &probes)?,
    });

    let total = data.len();
    Ok((
        model,
        data,
        ExplorationReport {
            rounds,
            random_trials: cfg.initial_random_trials,
            planned_trials: cfg.planned_trials,
            truncated_trials: truncated,
            total_transitions: total,
        },
    ))
}
