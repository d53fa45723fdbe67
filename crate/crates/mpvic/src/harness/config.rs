//! Run configuration: a single JSON document, schema-checked on load, with
//! per-task defaults filled in and command-line overrides applied before
//! anything runs. The resolved document is hashed so a manifest pins the run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::dynamics::tasks::{ComplianceTask, FallingTask, PushTask, TaskConfig, TaskKind};
use crate::explore::ExplorationConfig;
use crate::mpc::{CostWeights, MpcConfig};
use crate::penn::{EnsembleConfig, NetConfig, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Explore,
    Train,
    Eval,
    Sweep,
    OracleCheck,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Explore => "explore",
            Mode::Train => "train",
            Mode::Eval => "eval",
            Mode::Sweep => "sweep",
            Mode::OracleCheck => "oracle-check",
        }
    }
}

/// Where a run reads and writes. Relative dataset/checkpoint paths default to
/// files inside the output directory, so explore → train → eval chain without
/// any path flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub out_dir: PathBuf,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self { out_dir: PathBuf::from("out"), dataset: None, checkpoint: None }
    }
}

impl Paths {
    pub fn dataset_path(&self) -> PathBuf {
        self.dataset.clone().unwrap_or_else(|| self.out_dir.join("dataset.csv"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out_dir.join("checkpoint.json"))
    }
}

/// Cost-weight grid for sweep mode; the run covers the cross product of the
/// two lists exactly once each, in listed order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub alpha_q: Vec<f64>,
    pub alpha_r: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self { alpha_q: vec![1.0], alpha_r: vec![0.1, 0.01] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSettings {
    pub cases: usize,
    pub points_per_axis: usize,
    pub tolerance: f64,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self { cases: 10, points_per_axis: 11, tolerance: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub mode: Option<Mode>,
    pub seed: u64,
    pub task: Option<TaskConfig>,
    /// Cost weights; omitted means the per-task default.
    pub weights: Option<CostWeights>,
    /// Planner settings; omitted means the per-task default.
    pub mpc: Option<MpcConfig>,
    pub exploration: ExplorationConfig,
    pub ensemble: EnsembleConfig,
    pub training: TrainConfig,
    /// Episodes per eval or per sweep point.
    pub trials: usize,
    /// Explore only: cap on total collected steps; trial counts are rescaled.
    pub steps: Option<usize>,
    /// When set, eval also runs the constant-stiffness baseline on the same
    /// trial seeds and reports normalized rewards.
    pub baseline_stiffness: Option<[f64; 3]>,
    pub paths: Paths,
    pub sweep: SweepGrid,
    pub oracle: OracleSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: None,
            seed: 0,
            task: None,
            weights: None,
            mpc: None,
            exploration: ExplorationConfig::default(),
            ensemble: desk_ensemble(),
            training: TrainConfig::default(),
            trials: 20,
            steps: None,
            baseline_stiffness: None,
            paths: Paths::default(),
            sweep: SweepGrid::default(),
            oracle: OracleSettings::default(),
        }
    }
}

/// Ensemble small enough to plan interactively on one core; the full-width
/// network stays available through config.
pub fn desk_ensemble() -> EnsembleConfig {
    EnsembleConfig { members: 5, net: NetConfig { hidden_width: 64, hidden_layers: 2 } }
}

pub fn task_config_by_name(name: &str) -> Result<TaskConfig, HarnessError> {
    let kind = match name {
        "compliance" => TaskKind::Compliance(ComplianceTask::default()),
        "falling" => TaskKind::Falling(FallingTask::default()),
        "push" => TaskKind::Push(PushTask::default()),
        other => {
            return Err(HarnessError::Config(format!(
                "unknown task {other:?}; expected compliance, falling, or push"
            )))
        }
    };
    Ok(TaskConfig::new(kind))
}

/// Position-error weights strong enough that the stiffness optimum sits
/// inside the bounds instead of pinned at one end. The push task needs far
/// heavier weights: progress there costs a contact fight against friction,
/// not just a spring deflection.
pub fn default_weights_for(kind: &TaskKind) -> CostWeights {
    let q_pos = match kind {
        TaskKind::Push(_) => 1e11,
        _ => 1e7,
    };
    CostWeights {
        q_base: [q_pos, q_pos, q_pos, 0.0, 0.0, 0.0],
        r_base: [1.0, 1.0, 1.0],
        alpha_q: 1.0,
        alpha_r: 0.1,
        q_scheduling: true,
    }
}

/// Planner budget sized for a single core: a few hundred rollout rows per
/// control step. Push pins the vertical axis stiff; the task is planar.
pub fn default_mpc_for(kind: &TaskKind) -> MpcConfig {
    let frozen = match kind {
        TaskKind::Push(_) => [None, None, Some(crate::dynamics::STIFFNESS_MAX)],
        _ => [None, None, None],
    };
    MpcConfig {
        horizon: 5,
        particles: 5,
        population: 32,
        elites: 8,
        iterations: 4,
        smoothing: 0.7,
        frozen_stiffness: frozen,
        // Narrow re-search so stiffness settles once the task is quiet.
        warm_sd_frac: 0.1,
        ..MpcConfig::default()
    }
}

/// Command-line flags that override the loaded config.
#[derive(Clone, Debug, Default)]
pub struct CliOverrides {
    pub seed: Option<u64>,
    pub task: Option<String>,
    pub alpha_q: Option<f64>,
    pub alpha_r: Option<f64>,
    pub trials: Option<usize>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub steps: Option<usize>,
}

impl ExperimentConfig {
    /// Parse a config file, rejecting unknown keys with the parser's own
    /// line/column diagnostics.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            HarnessError::Config(format!("cannot read {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    /// Apply overrides, settle the mode, fill per-task defaults, pin paths,
    /// and validate. The result is what gets hashed into the manifest.
    pub fn resolve(mut self, mode: Mode, cli: &CliOverrides) -> Result<Self, HarnessError> {
        match self.mode {
            None => self.mode = Some(mode),
            Some(m) if m == mode => {}
            Some(m) => {
                return Err(HarnessError::Config(format!(
                    "config file says mode {} but the {} subcommand was invoked",
                    m.name(),
                    mode.name()
                )))
            }
        }
        if let Some(s) = cli.seed {
            self.seed = s;
        }
        if let Some(name) = &cli.task {
            let fresh = task_config_by_name(name)?;
            // Keep a file-supplied task of the same kind; the flag only picks which.
            let keep = matches!(
                (&self.task, &fresh.task),
                (Some(TaskConfig { task: TaskKind::Compliance(_), .. }), TaskKind::Compliance(_))
                    | (Some(TaskConfig { task: TaskKind::Falling(_), .. }), TaskKind::Falling(_))
                    | (Some(TaskConfig { task: TaskKind::Push(_), .. }), TaskKind::Push(_))
            );
            if !keep {
                self.task = Some(fresh);
            }
        }
        if let Some(t) = cli.trials {
            self.trials = t;
        }
        if let Some(s) = cli.steps {
            self.steps = Some(s);
        }
        if let Some(out) = &cli.out {
            self.paths.out_dir = out.clone();
        }
        if let Some(ck) = &cli.checkpoint {
            self.paths.checkpoint = Some(ck.clone());
        }

        if let Some(task) = &self.task {
            let kind = &task.task;
            if self.weights.is_none() {
                self.weights = Some(default_weights_for(kind));
            }
            if self.mpc.is_none() {
                self.mpc = Some(default_mpc_for(kind));
            }
        }
        if let Some(aq) = cli.alpha_q {
            let w = self.weights.get_or_insert_with(CostWeights::default);
            w.alpha_q = aq;
        }
        if let Some(ar) = cli.alpha_r {
            let w = self.weights.get_or_insert_with(CostWeights::default);
            w.alpha_r = ar;
        }
        self.paths.dataset = Some(self.paths.dataset_path());
        self.paths.checkpoint = Some(self.paths.checkpoint_path());

        self.validate()?;
        Ok(self)
    }

    pub fn mode(&self) -> Mode {
        self.mode.expect("resolve() settles the mode")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let mode = self
            .mode
            .ok_or_else(|| HarnessError::Config("no mode set".into()))?;
        let cfg_err = |e: String| HarnessError::Config(e);

        if let Some(task) = &self.task {
            task.validate().map_err(|e| cfg_err(format!("task: {e}")))?;
        }
        if let Some(w) = &self.weights {
            w.validate().map_err(|e| cfg_err(format!("weights: {e}")))?;
        }
        if let Some(mpc) = &self.mpc {
            mpc.validate().map_err(|e| cfg_err(format!("mpc: {e}")))?;
            if let Some(task) = &self.task {
                if mpc.stiffness_min < task.stiffness_min
                    || mpc.stiffness_max > task.stiffness_max
                {
                    return Err(cfg_err(format!(
                        "planner stiffness bounds [{}, {}] exceed task bounds [{}, {}]",
                        mpc.stiffness_min,
                        mpc.stiffness_max,
                        task.stiffness_min,
                        task.stiffness_max
                    )));
                }
            }
        }
        self.exploration
            .validate()
            .map_err(|e| cfg_err(format!("exploration: {e}")))?;
        if self.ensemble.members < 2 {
            return Err(cfg_err(format!(
                "ensemble needs at least 2 members, got {}",
                self.ensemble.members
            )));
        }
        if self.ensemble.net.hidden_width == 0 || self.ensemble.net.hidden_layers == 0 {
            return Err(cfg_err("network needs at least one hidden layer and unit".into()));
        }
        if self.training.epochs == 0 || self.training.batch_size == 0 {
            return Err(cfg_err("training epochs and batch_size must be at least 1".into()));
        }
        if !(self.training.learning_rate.is_finite() && self.training.learning_rate > 0.0) {
            return Err(cfg_err(format!(
                "learning rate {} must be finite and > 0",
                self.training.learning_rate
            )));
        }
        if self.trials == 0 {
            return Err(cfg_err("trials must be at least 1".into()));
        }
        if let Some(steps) = self.steps {
            if mode != Mode::Explore {
                return Err(cfg_err("steps only applies to explore mode".into()));
            }
            if steps == 0 {
                return Err(cfg_err("steps must be at least 1".into()));
            }
        }
        if let Some(k) = self.baseline_stiffness {
            let (lo, hi) = match &self.task {
                Some(t) => (t.stiffness_min, t.stiffness_max),
                None => (crate::dynamics::STIFFNESS_MIN, crate::dynamics::STIFFNESS_MAX),
            };
            for v in k {
                if !v.is_finite() || v < lo || v > hi {
                    return Err(cfg_err(format!(
                        "baseline stiffness {v} outside [{lo}, {hi}]"
                    )));
                }
            }
        }
        if self.sweep.alpha_q.is_empty() || self.sweep.alpha_r.is_empty() {
            return Err(cfg_err("sweep lists must be non-empty".into()));
        }
        for v in self.sweep.alpha_q.iter().chain(self.sweep.alpha_r.iter()) {
            if !(v.is_finite() && *v > 0.0) {
                return Err(cfg_err(format!("sweep value {v} must be finite and > 0")));
            }
        }
        if self.oracle.cases == 0 || self.oracle.points_per_axis < 2 {
            return Err(cfg_err(
                "oracle check needs at least 1 case and 2 grid points per axis".into(),
            ));
        }
        if !(self.oracle.tolerance.is_finite() && self.oracle.tolerance > 0.0) {
            return Err(cfg_err(format!(
                "oracle tolerance {} must be finite and > 0",
                self.oracle.tolerance
            )));
        }

        match mode {
            Mode::Eval | Mode::Sweep => {
                if self.task.is_none() {
                    return Err(cfg_err(format!(
                        "{} mode needs a task (set --task or the task config field)",
                        mode.name()
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Canonical serialized form; manifests embed this verbatim.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn sha256(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.canonical_json().as_bytes());
        let digest = h.finalize();
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve_default(mode: Mode, cli: &CliOverrides) -> ExperimentConfig {
        ExperimentConfig::default().resolve(mode, cli).unwrap()
    }

    #[test]
    fn empty_document_resolves_with_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str("{}").unwrap();
        let cfg = cfg.resolve(Mode::Explore, &CliOverrides::default()).unwrap();
        assert_eq!(cfg.mode(), Mode::Explore);
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.trials, 20);
        assert_eq!(cfg.paths.dataset_path(), PathBuf::from("out/dataset.csv"));
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = serde_json::from_str::<ExperimentConfig>("{\"sede\": 3}").unwrap_err();
        assert!(err.to_string().contains("sede"), "{err}");
    }

    #[test]
    fn nested_unknown_keys_are_rejected() {
        for doc in [
            "{\"training\": {\"epoch\": 5}}",
            "{\"ensemble\": {\"member\": 5}}",
            "{\"ensemble\": {\"net\": {\"width\": 64}}}",
            "{\"mpc\": {\"horizons\": 5}}",
        ] {
            assert!(serde_json::from_str::<ExperimentConfig>(doc).is_err(), "{doc}");
        }
    }

    #[test]
    fn mode_mismatch_is_a_config_error() {
        let cfg = ExperimentConfig { mode: Some(Mode::Train), ..Default::default() };
        let err = cfg.resolve(Mode::Explore, &CliOverrides::default()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn task_flag_fills_per_task_defaults() {
        let cli = CliOverrides { task: Some("push".into()), ..Default::default() };
        let cfg = resolve_default(Mode::Eval, &cli);
        let w = cfg.weights.unwrap();
        let mpc = cfg.mpc.unwrap();
        assert_eq!(w.q_base[0], 1e11);
        assert_eq!(mpc.frozen_stiffness[2], Some(1000.0));

        let cli = CliOverrides { task: Some("compliance".into()), ..Default::default() };
        let cfg = resolve_default(Mode::Eval, &cli);
        assert_eq!(cfg.weights.unwrap().q_base[0], 1e7);
        assert_eq!(cfg.mpc.unwrap().frozen_stiffness, [None, None, None]);
    }

    #[test]
    fn alpha_flags_override_the_filled_defaults() {
        let cli = CliOverrides {
            task: Some("compliance".into()),
            alpha_r: Some(0.01),
            alpha_q: Some(2.0),
            ..Default::default()
        };
        let cfg = resolve_default(Mode::Eval, &cli);
        let w = cfg.weights.unwrap();
        assert_eq!(w.alpha_r, 0.01);
        assert_eq!(w.alpha_q, 2.0);
        assert_eq!(w.q_base[0], 1e7);
    }

    #[test]
    fn file_task_of_same_kind_survives_the_flag() {
        let mut file_cfg = ExperimentConfig::default();
        let mut task = task_config_by_name("compliance").unwrap();
        task.duration_s = Some(2.5);
        file_cfg.task = Some(task);
        let cli = CliOverrides { task: Some("compliance".into()), ..Default::default() };
        let cfg = file_cfg.resolve(Mode::Eval, &cli).unwrap();
        assert_eq!(cfg.task.unwrap().duration_s, Some(2.5));
    }

    #[test]
    fn eval_without_task_is_rejected() {
        let err = ExperimentConfig::default()
            .resolve(Mode::Eval, &CliOverrides::default())
            .unwrap_err();
        assert!(err.to_string().contains("task"), "{err}");
    }

    #[test]
    fn steps_outside_explore_is_rejected() {
        let cli = CliOverrides {
            task: Some("compliance".into()),
            steps: Some(100),
            ..Default::default()
        };
        let err = ExperimentConfig::default().resolve(Mode::Eval, &cli).unwrap_err();
        assert!(err.to_string().contains("steps"), "{err}");
    }

    #[test]
    fn planner_bounds_must_fit_task_bounds() {
        let mut cfg = ExperimentConfig::default();
        cfg.task = Some(task_config_by_name("compliance").unwrap());
        cfg.mpc = Some(MpcConfig { stiffness_max: 2000.0, ..default_mpc_for(&cfg.task.as_ref().unwrap().task) });
        let err = cfg.resolve(Mode::Eval, &CliOverrides::default()).unwrap_err();
        assert!(err.to_string().contains("bounds"), "{err}");
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = resolve_default(Mode::Explore, &CliOverrides::default());
        let b = resolve_default(Mode::Explore, &CliOverrides::default());
        assert_eq!(a.sha256(), b.sha256());
        let cli = CliOverrides { seed: Some(1), ..Default::default() };
        let c = resolve_default(Mode::Explore, &cli);
        assert_ne!(a.sha256(), c.sha256());
        assert_eq!(a.sha256().len(), 64);
    }

    #[test]
    fn resolve_is_idempotent() {
        let cli = CliOverrides { task: Some("falling".into()), seed: Some(9), ..Default::default() };
        let once = resolve_default(Mode::Eval, &cli);
        let twice = once.clone().resolve(Mode::Eval, &CliOverrides::default()).unwrap();
        assert_eq!(once, twice);
        assert_eq!(once.sha256(), twice.sha256());
    }

    #[test]
    fn resolved_document_round_trips_through_json() {
        let cli = CliOverrides { task: Some("push".into()), ..Default::default() };
        let cfg = resolve_default(Mode::Eval, &cli);
        let back: ExperimentConfig = serde_json::from_str(&cfg.canonical_json()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn baseline_stiffness_outside_bounds_is_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.task = Some(task_config_by_name("compliance").unwrap());
        cfg.baseline_stiffness = Some([0.0, 100.0, 100.0]);
        let err = cfg.resolve(Mode::Eval, &CliOverrides::default()).unwrap_err();
        assert!(err.to_string().contains("baseline"), "{err}");
    }
}
