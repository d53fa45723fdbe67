//! Mode dispatch: each run resolves to one function here, and every one ends
//! by writing a manifest that lists the files it produced. Trial seeds derive
//! from the run seed, so trial i sees the same disturbances in every mode
//! that shares the seed, including the constant-stiffness baseline.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::RngCore;

use super::config::{default_mpc_for, default_weights_for, ExperimentConfig, Mode};
use super::manifest::{ArtifactVersions, RunManifest, MANIFEST_FILE};
use super::summary::{summarize_to_dir, Reference};
use super::HarnessError;
use crate::dynamics::tasks::{TaskConfig, TaskSim};
use crate::dynamics::DynamicsError;
use crate::episode::{EpisodeLog, EpisodeRow};
use crate::explore::{explore_and_learn, ExploreError};
use crate::mpc::{run_episode, step_cost, Controller, CostWeights, MpcConfig, StepDiagnostics};
use crate::oracle::oracle_check;
use crate::penn::{Dataset, EnsembleModel};
use crate::seeding;

pub const EXPLORATION_FILE: &str = "exploration.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const TRAIN_REPORT_FILE: &str = "train_report.csv";
pub const ORACLE_FILE: &str = "oracle_check.csv";
pub const SWEEP_FILE: &str = "sweep_summary.csv";

#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub manifest_path: PathBuf,
}

/// Per-trial seed: a fresh draw per index so trial streams never overlap.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    seeding::stream(seed, "trial", trial as u64).next_u64()
}

fn rel_to(dir: &Path, path: &Path) -> String {
    path.strip_prefix(dir).unwrap_or(path).display().to_string()
}

/// Run the resolved config and write its manifest. An oracle mismatch still
/// writes the report and manifest before coming back as the run's error.
pub fn cli_run(cfg: &ExperimentConfig, command: Vec<String>) -> Result<RunOutcome, HarnessError> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.paths.out_dir)?;
    let started = Instant::now();
    let mut manifest = RunManifest::new(cfg, command);
    let deferred = match cfg.mode() {
        Mode::Explore => {
            run_explore(cfg, &mut manifest)?;
            None
        }
        Mode::Train => {
            run_train(cfg, &mut manifest)?;
            None
        }
        Mode::Eval => {
            run_eval(cfg, &mut manifest)?;
            None
        }
        Mode::Sweep => {
            run_sweep(cfg, &mut manifest)?;
            None
        }
        Mode::OracleCheck => run_oracle(cfg, &mut manifest)?,
    };
    manifest.wall_time_s = started.elapsed().as_secs_f64();
    let manifest_path = manifest.write_atomic(&cfg.paths.out_dir)?;
    match deferred {
        Some(e) => Err(e),
        None => Ok(RunOutcome { manifest, manifest_path }),
    }
}

/// Collect transitions with the curiosity loop, then persist dataset, model,
/// and the per-round report. A training failure still saves what was
/// collected before reporting the error.
fn run_explore(cfg: &ExperimentConfig, manifest: &mut RunManifest) -> Result<(), HarnessError> {
    let out = &cfg.paths.out_dir;
    let mut expl = cfg.exploration.clone();
    if let Some(steps) = cfg.steps {
        let total = steps.div_ceil(expl.trial_steps).max(1);
        let random = expl.initial_random_trials.min(total).max(1);
        expl.initial_random_trials = random;
        expl.planned_trials = total - random;
        expl.validate().map_err(|e| HarnessError::Config(format!("exploration: {e}")))?;
    }

    let t = Instant::now();
    let outcome = explore_and_learn(&expl, &cfg.ensemble, &cfg.training, cfg.seed);
    manifest.record_phase("explore", t.elapsed().as_secs_f64());

    let dataset_path = cfg.paths.dataset_path();
    match outcome {
        Ok((model, data, report)) => {
            data.write_csv(&dataset_path)?;
            manifest.record_output(rel_to(out, &dataset_path));
            let ck = cfg.paths.checkpoint_path();
            model.save(&ck)?;
            manifest.record_output(rel_to(out, &ck));
            report.write_csv(std::fs::File::create(out.join(EXPLORATION_FILE))?)
                .map_err(|e| HarnessError::Runtime(format!("csv: {e}")))?;
            manifest.record_output(EXPLORATION_FILE);
            Ok(())
        }
        Err(ExploreError::Training { rows, source, dataset }) => {
            dataset.write_csv(&dataset_path)?;
            Err(HarnessError::Runtime(format!(
                "training failed after {rows} transitions (partial dataset saved to {}): {source}",
                dataset_path.display()
            )))
        }
        Err(ExploreError::Config(msg)) => Err(HarnessError::Config(msg)),
        Err(e) => Err(HarnessError::Runtime(e.to_string())),
    }
}

/// One training round over a saved dataset, producing a fresh checkpoint.
fn run_train(cfg: &ExperimentConfig, manifest: &mut RunManifest) -> Result<(), HarnessError> {
    let out = &cfg.paths.out_dir;
    let dataset_path = cfg.paths.dataset_path();
    if !dataset_path.exists() {
        return Err(HarnessError::Runtime(format!(
            "dataset not found at {}; run explore first or point paths.dataset at one",
            dataset_path.display()
        )));
    }
    let data = Dataset::read_csv(&dataset_path)?;
    let mut model = EnsembleModel::new(cfg.ensemble.clone())?;
    let t = Instant::now();
    let report = model.train_round(&data, &cfg.training, cfg.seed, 0)?;
    manifest.record_phase("train", t.elapsed().as_secs_f64());

    let ck = cfg.paths.checkpoint_path();
    model.save(&ck)?;
    manifest.record_output(rel_to(out, &ck));

    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(std::fs::File::create(out.join(TRAIN_REPORT_FILE))?);
    w.write_record(["epoch", "train_nll", "holdout_nll"])?;
    for e in &report.epochs {
        w.write_record([
            e.epoch.to_string(),
            e.train_nll.to_string(),
            e.holdout_nll.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::Runtime(format!("csv: {e}")))?;
    manifest.record_output(TRAIN_REPORT_FILE);
    Ok(())
}

/// Planner episodes over seeded trials.
pub fn run_trials(
    model: &EnsembleModel,
    task: &TaskConfig,
    weights: &CostWeights,
    mpc: &MpcConfig,
    trials: usize,
    seed: u64,
) -> Result<(Vec<EpisodeLog>, Vec<Vec<StepDiagnostics>>), HarnessError> {
    let mut logs = Vec::with_capacity(trials);
    let mut diags = Vec::with_capacity(trials);
    for trial in 0..trials {
        let ts = trial_seed(seed, trial);
        let mut sim = TaskSim::new(*task, ts)?;
        let mut controller = Controller::new(
            model,
            *weights,
            *mpc,
            task.initial_stiffness,
            seeding::stream(ts, "planner", 0),
        )?;
        let episode = run_episode(&mut sim, &mut controller)?;
        logs.push(episode.log);
        diags.push(episode.diagnostics);
    }
    Ok((logs, diags))
}

/// Same trials, constant stiffness held for the whole episode, same log
/// schema. The anchor the adaptive controller is compared against.
pub fn fixed_stiffness_baseline(
    task: &TaskConfig,
    k_const: [f64; 3],
    trials: usize,
    seed: u64,
    weights: &CostWeights,
) -> Result<Vec<EpisodeLog>, HarnessError> {
    for v in k_const {
        if !v.is_finite() || v < task.stiffness_min || v > task.stiffness_max {
            return Err(HarnessError::Config(format!(
                "baseline stiffness {v} outside [{}, {}]",
                task.stiffness_min, task.stiffness_max
            )));
        }
    }
    let k_vec = nalgebra::Vector3::new(k_const[0], k_const[1], k_const[2]);
    let mut logs = Vec::with_capacity(trials);
    for trial in 0..trials {
        let ts = trial_seed(seed, trial);
        let mut sim = TaskSim::new(*task, ts)?;
        let steps = sim.config().control_steps();
        let mut log = EpisodeLog::new();
        for _ in 0..steps {
            let (state, force) = sim.observe();
            let s = state.to_array();
            let f = [force.x, force.y, force.z];
            let tv = sim.target();
            let target = [tv.x, tv.y, tv.z];
            let cost = step_cost(&s, &target, &k_const, weights);
            log.push(EpisodeRow::new(sim.time(), &s, &k_const, &f, cost));
            match sim.advance_control_period(k_vec) {
                Ok(()) => {}
                Err(DynamicsError::WorkspaceViolation { .. }) => {
                    log.terminated_early = true;
                    break;
                }
                Err(e) => return Err(e.into()),
            }
        }
        logs.push(log);
    }
    Ok(logs)
}

fn write_diagnostics_csv<W: Write>(
    diags: &[Vec<StepDiagnostics>],
    out: W,
) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record([
        "trial",
        "step",
        "best_cost",
        "cem_iterations",
        "nonfinite_samples",
        "fallback",
        "kx",
        "ky",
        "kz",
    ])?;
    for (trial, steps) in diags.iter().enumerate() {
        for (step, d) in steps.iter().enumerate() {
            w.write_record([
                trial.to_string(),
                step.to_string(),
                d.best_cost.to_string(),
                d.iteration_best.len().to_string(),
                d.nonfinite_samples.to_string(),
                (d.fallback as u8).to_string(),
                d.stiffness[0].to_string(),
                d.stiffness[1].to_string(),
                d.stiffness[2].to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| HarnessError::Runtime(format!("csv: {e}")))?;
    Ok(())
}

fn planning_seconds(diags: &[Vec<StepDiagnostics>]) -> f64 {
    diags.iter().flatten().map(|d| d.plan_seconds).sum()
}

struct EvalArtifacts {
    logs: Vec<EpisodeLog>,
    reference: Reference,
}

/// Episodes, diagnostics, and per-episode files for one (weights, mpc)
/// setting, written into `dir` with paths recorded relative to the manifest.
fn eval_into(
    cfg: &ExperimentConfig,
    model: &EnsembleModel,
    weights: &CostWeights,
    mpc: &MpcConfig,
    dir: &Path,
    prefix: &str,
    manifest: &mut RunManifest,
) -> Result<EvalArtifacts, HarnessError> {
    let task = cfg.task.as_ref().expect("eval modes validate a task");
    let out = &cfg.paths.out_dir;

    let t = Instant::now();
    let (logs, diags) = run_trials(model, task, weights, mpc, cfg.trials, cfg.seed)?;
    manifest.record_phase("episodes", t.elapsed().as_secs_f64());
    manifest.record_phase("planning", planning_seconds(&diags));

    for (i, log) in logs.iter().enumerate() {
        let path = dir.join(format!("episode_{i:03}.csv"));
        log.save(&path)?;
        manifest.record_output(format!("{prefix}{}", rel_to(dir, &path)));
    }
    write_diagnostics_csv(&diags, std::fs::File::create(dir.join(DIAGNOSTICS_FILE))?)?;
    manifest.record_output(format!("{prefix}{DIAGNOSTICS_FILE}"));

    let baseline = match cfg.baseline_stiffness {
        Some(k) => {
            let t = Instant::now();
            let base_logs = fixed_stiffness_baseline(task, k, cfg.trials, cfg.seed, weights)?;
            manifest.record_phase("baseline", t.elapsed().as_secs_f64());
            for (i, log) in base_logs.iter().enumerate() {
                let path = dir.join(format!("baseline_episode_{i:03}.csv"));
                log.save(&path)?;
                manifest.record_output(format!("{prefix}{}", rel_to(dir, &path)));
            }
            Some(base_logs)
        }
        None => None,
    };

    let reference = Reference::for_task(task);
    let t = Instant::now();
    let files = summarize_to_dir(&logs, baseline.as_deref(), &reference, cfg.seed, dir)?;
    manifest.record_phase("summary", t.elapsed().as_secs_f64());
    for f in files {
        manifest.record_output(format!("{prefix}{f}"));
    }
    let _ = out;
    Ok(EvalArtifacts { logs, reference })
}

fn load_checkpoint(cfg: &ExperimentConfig) -> Result<EnsembleModel, HarnessError> {
    let ck = cfg.paths.checkpoint_path();
    if !ck.exists() {
        return Err(HarnessError::Runtime(format!(
            "checkpoint not found at {}; run explore or train first",
            ck.display()
        )));
    }
    let model = EnsembleModel::load(&ck)?;
    Ok(model)
}

fn planner_settings(cfg: &ExperimentConfig) -> (CostWeights, MpcConfig) {
    let task = cfg.task.as_ref().expect("eval modes validate a task");
    let weights = cfg.weights.unwrap_or_else(|| default_weights_for(&task.task));
    let mpc = cfg.mpc.unwrap_or_else(|| default_mpc_for(&task.task));
    (weights, mpc)
}

fn check_particles(mpc: &MpcConfig, model: &EnsembleModel) -> Result<(), HarnessError> {
    let members = model.member_count();
    if mpc.particles % members != 0 {
        return Err(HarnessError::Config(format!(
            "mpc.particles = {} is not a multiple of the checkpoint's {} members",
            mpc.particles, members
        )));
    }
    Ok(())
}

fn run_eval(cfg: &ExperimentConfig, manifest: &mut RunManifest) -> Result<(), HarnessError> {
    let model = load_checkpoint(cfg)?;
    let (weights, mpc) = planner_settings(cfg);
    check_particles(&mpc, &model)?;
    eval_into(cfg, &model, &weights, &mpc, &cfg.paths.out_dir, "", manifest)?;
    Ok(())
}

fn float_slug(v: f64) -> String {
    format!("{v}").replace('.', "p").replace('-', "m")
}

/// Cross product of the sweep's alpha lists, one eval per cell in its own
/// subdirectory, plus one top-level table comparing them.
fn run_sweep(cfg: &ExperimentConfig, manifest: &mut RunManifest) -> Result<(), HarnessError> {
    let model = load_checkpoint(cfg)?;
    let (base_weights, mpc) = planner_settings(cfg);
    check_particles(&mpc, &model)?;
    let out = &cfg.paths.out_dir;

    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(std::fs::File::create(out.join(SWEEP_FILE))?);
    w.write_record(["alpha_q", "alpha_r", "trials", "pos_err_mean", "lambda_mean", "reward_mean"])?;

    for &aq in &cfg.sweep.alpha_q {
        for &ar in &cfg.sweep.alpha_r {
            let mut weights = base_weights;
            weights.alpha_q = aq;
            weights.alpha_r = ar;
            weights.validate().map_err(|e| HarnessError::Config(format!("sweep weights: {e}")))?;

            let sub_name = format!("aq{}_ar{}", float_slug(aq), float_slug(ar));
            let sub = out.join(&sub_name);
            std::fs::create_dir_all(&sub)?;
            let arts =
                eval_into(cfg, &model, &weights, &mpc, &sub, &format!("{sub_name}/"), manifest)?;

            let mut err_sum = 0.0;
            let mut lambda_sum = 0.0;
            let mut rows = 0usize;
            let mut reward_sum = 0.0;
            for log in &arts.logs {
                reward_sum += super::summary::episode_reward(log);
                for row in &log.rows {
                    let p = row.position();
                    let target = arts.reference.at(row.t);
                    let d = [target[0] - p[0], target[1] - p[1], target[2] - p[2]];
                    err_sum += (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                    let k = row.stiffness();
                    lambda_sum += (k[0] + k[1] + k[2]) / 3.0;
                    rows += 1;
                }
            }
            w.write_record([
                aq.to_string(),
                ar.to_string(),
                arts.logs.len().to_string(),
                (err_sum / rows as f64).to_string(),
                (lambda_sum / rows as f64).to_string(),
                (reward_sum / arts.logs.len() as f64).to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| HarnessError::Runtime(format!("csv: {e}")))?;
    manifest.record_output(SWEEP_FILE);
    Ok(())
}

/// Planner-versus-grid comparison; a miss is reported after the run's files
/// are safely on disk.
fn run_oracle(
    cfg: &ExperimentConfig,
    manifest: &mut RunManifest,
) -> Result<Option<HarnessError>, HarnessError> {
    let t = Instant::now();
    let report = oracle_check(
        cfg.seed,
        cfg.oracle.cases,
        cfg.oracle.points_per_axis,
        cfg.oracle.tolerance,
    )?;
    manifest.record_phase("oracle-check", t.elapsed().as_secs_f64());

    let out = &cfg.paths.out_dir;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(std::fs::File::create(out.join(ORACLE_FILE))?);
    w.write_record([
        "case", "px", "py", "pz", "vx", "vy", "vz", "fx", "fy", "fz", "planner_cost",
        "grid_cost", "ratio",
    ])?;
    for (i, c) in report.cases.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(c.state.iter().map(|v| v.to_string()));
        rec.extend(c.force.iter().map(|v| v.to_string()));
        rec.push(c.planner_cost.to_string());
        rec.push(c.grid_cost.to_string());
        rec.push(c.ratio.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| HarnessError::Runtime(format!("csv: {e}")))?;
    manifest.record_output(ORACLE_FILE);

    if report.pass {
        Ok(None)
    } else {
        Ok(Some(HarnessError::OracleMismatch {
            worst: report.worst_ratio,
            tolerance: report.tolerance,
        }))
    }
}

/// Standalone aggregation over saved episode logs. The optional task config
/// reconstructs the commanded reference; without it the reference is the
/// origin, which matches every task that never moves its goal.
pub fn run_summarize(
    log_paths: &[PathBuf],
    out_dir: &Path,
    seed: u64,
    task: Option<TaskConfig>,
    command: Vec<String>,
) -> Result<RunOutcome, HarnessError> {
    if log_paths.is_empty() {
        return Err(HarnessError::Config("summarize needs at least one episode log".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let started = Instant::now();
    let mut logs = Vec::with_capacity(log_paths.len());
    for p in log_paths {
        logs.push(
            EpisodeLog::load(p)
                .map_err(|e| HarnessError::Runtime(format!("{}: {e}", p.display())))?,
        );
    }
    let reference = match &task {
        Some(t) => Reference::for_task(t),
        None => Reference::zero(),
    };

    let mut synthetic = ExperimentConfig { seed, task, ..ExperimentConfig::default() };
    synthetic.paths.out_dir = out_dir.to_path_buf();
    let mut manifest = RunManifest {
        mode: "summarize".into(),
        seed,
        config_sha256: synthetic.sha256(),
        config: synthetic,
        versions: ArtifactVersions::current(),
        wall_time_s: 0.0,
        phase_seconds: Default::default(),
        outputs: Vec::new(),
        command,
    };

    let files = summarize_to_dir(&logs, None, &reference, seed, out_dir)?;
    for f in files {
        manifest.record_output(f);
    }
    manifest.wall_time_s = started.elapsed().as_secs_f64();
    let manifest_path = manifest.write_atomic(out_dir)?;
    let _ = MANIFEST_FILE;
    Ok(RunOutcome { manifest, manifest_path })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::tasks::{ComplianceTask, TaskKind};
    use crate::explore::ExplorationConfig;
    use crate::harness::config::CliOverrides;
    use crate::penn::{EnsembleConfig, NetConfig, TrainConfig};
    use std::sync::OnceLock;

    fn tiny_exploration() -> ExplorationConfig {
        ExplorationConfig {
            initial_random_trials: 2,
            planned_trials: 1,
            trial_steps: 25,
            horizon: 3,
            population: 12,
            elites: 3,
            iterations: 2,
            smoothing: 0.7,
            probe_points: 5,
            ..ExplorationConfig::default()
        }
    }

    fn tiny_base() -> ExperimentConfig {
        ExperimentConfig {
            exploration: tiny_exploration(),
            ensemble: EnsembleConfig {
                members: 2,
                net: NetConfig { hidden_width: 16, hidden_layers: 1 },
            },
            training: TrainConfig { epochs: 8, batch_size: 32, learning_rate: 1e-3 },
            trials: 2,
            ..ExperimentConfig::default()
        }
    }

    fn tiny_task() -> TaskConfig {
        let mut t = TaskConfig::new(TaskKind::Compliance(ComplianceTask::default()));
        t.duration_s = Some(1.2);
        t
    }

    fn tiny_mpc() -> MpcConfig {
        MpcConfig {
            horizon: 3,
            particles: 2,
            population: 10,
            elites: 3,
            iterations: 2,
            smoothing: 0.7,
            ..MpcConfig::default()
        }
    }

    /// One shared explore run; later tests reuse its dataset and checkpoint.
    fn explored_dir() -> &'static PathBuf {
        static DIR: OnceLock<PathBuf> = OnceLock::new();
        DIR.get_or_init(|| {
            let dir = tempfile::tempdir().unwrap().keep();
            let mut cfg = tiny_base();
            cfg.paths.out_dir = dir.clone();
            let cfg = cfg.resolve(Mode::Explore, &CliOverrides::default()).unwrap();
            cli_run(&cfg, vec!["test".into()]).unwrap();
            dir
        })
    }

    #[test]
    fn explore_writes_dataset_checkpoint_report_and_manifest() {
        let dir = explored_dir();
        for f in ["dataset.csv", "checkpoint.json", EXPLORATION_FILE, MANIFEST_FILE] {
            assert!(dir.join(f).exists(), "{f} missing");
        }
        let manifest = RunManifest::load(&dir.join(MANIFEST_FILE)).unwrap();
        assert_eq!(manifest.mode, "explore");
        for f in ["dataset.csv", "checkpoint.json", EXPLORATION_FILE] {
            assert!(manifest.outputs.iter().any(|o| o == f), "{f} not referenced");
        }
        assert!(manifest.wall_time_s > 0.0);
        assert!(manifest.phase_seconds.contains_key("explore"));
        // 2 random + 1 planned trial, 2 training rounds reported.
        let report = std::fs::read_to_string(dir.join(EXPLORATION_FILE)).unwrap();
        assert_eq!(report.lines().count(), 3);
        assert!(report.starts_with("round,dataset_rows,holdout_nll,probe_rho_mean\n"));
    }

    #[test]
    fn explore_steps_override_rescales_trial_counts() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_base();
        cfg.paths.out_dir = dir.path().to_path_buf();
        cfg.steps = Some(30);
        let cfg = cfg.resolve(Mode::Explore, &CliOverrides::default()).unwrap();
        cli_run(&cfg, vec!["test".into()]).unwrap();
        // ceil(30/25) = 2 trials, both random, none planned: one training round.
        let report = std::fs::read_to_string(dir.path().join(EXPLORATION_FILE)).unwrap();
        assert_eq!(report.lines().count(), 2);
        let data = std::fs::read_to_string(dir.path().join("dataset.csv")).unwrap();
        assert!(data.lines().count() <= 51, "at most 50 transitions plus header");
    }

    #[test]
    fn train_without_dataset_is_an_explicit_runtime_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_base();
        cfg.paths.out_dir = dir.path().to_path_buf();
        let cfg = cfg.resolve(Mode::Train, &CliOverrides::default()).unwrap();
        let err = cli_run(&cfg, vec!["test".into()]).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("dataset not found"), "{err}");
    }

    #[test]
    fn train_from_saved_dataset_writes_checkpoint_and_report() {
        let explored = explored_dir();
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_base();
        cfg.paths.out_dir = dir.path().to_path_buf();
        cfg.paths.dataset = Some(explored.join("dataset.csv"));
        let cfg = cfg.resolve(Mode::Train, &CliOverrides::default()).unwrap();
        cli_run(&cfg, vec!["test".into()]).unwrap();
        assert!(dir.path().join("checkpoint.json").exists());
        let report = std::fs::read_to_string(dir.path().join(TRAIN_REPORT_FILE)).unwrap();
        assert!(report.starts_with("epoch,train_nll,holdout_nll\n"));
        assert_eq!(report.lines().count(), 9, "8 epochs plus header");
        EnsembleModel::load(&dir.path().join("checkpoint.json")).unwrap();
    }

    #[test]
    fn eval_without_checkpoint_is_an_explicit_runtime_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_base();
        cfg.task = Some(tiny_task());
        cfg.mpc = Some(tiny_mpc());
        cfg.paths.out_dir = dir.path().to_path_buf();
        let cfg = cfg.resolve(Mode::Eval, &CliOverrides::default()).unwrap();
        let err = cli_run(&cfg, vec!["test".into()]).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("checkpoint not found"), "{err}");
    }

    fn eval_config(out: &Path) -> ExperimentConfig {
        let mut cfg = tiny_base();
        cfg.task = Some(tiny_task());
        cfg.mpc = Some(tiny_mpc());
        cfg.paths.out_dir = out.to_path_buf();
        cfg.paths.checkpoint = Some(explored_dir().join("checkpoint.json"));
        cfg.resolve(Mode::Eval, &CliOverrides::default()).unwrap()
    }

    #[test]
    fn eval_writes_episodes_diagnostics_and_summaries() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = eval_config(dir.path());
        let outcome = cli_run(&cfg, vec!["test".into()]).unwrap();
        for f in [
            "episode_000.csv",
            "episode_001.csv",
            DIAGNOSTICS_FILE,
            "summary.csv",
            "phase_stiffness.csv",
            "rewards.csv",
        ] {
            assert!(dir.path().join(f).exists(), "{f} missing");
            assert!(outcome.manifest.outputs.iter().any(|o| o == f), "{f} not referenced");
        }
        let log = EpisodeLog::load(&dir.path().join("episode_000.csv")).unwrap();
        assert_eq!(log.len(), 12);
        let diag = std::fs::read_to_string(dir.path().join(DIAGNOSTICS_FILE)).unwrap();
        assert_eq!(diag.lines().count(), 25, "2 trials x 12 steps plus header");
        assert!(outcome.manifest.phase_seconds.contains_key("planning"));
    }

    #[test]
    fn eval_reruns_are_byte_identical() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        cli_run(&eval_config(a.path()), vec!["test".into()]).unwrap();
        cli_run(&eval_config(b.path()), vec!["test".into()]).unwrap();
        for f in ["episode_000.csv", "episode_001.csv", DIAGNOSTICS_FILE, "summary.csv", "rewards.csv"] {
            let x = std::fs::read(a.path().join(f)).unwrap();
            let y = std::fs::read(b.path().join(f)).unwrap();
            assert_eq!(x, y, "{f} differs between identical runs");
        }
    }

    #[test]
    fn eval_with_baseline_reports_normalized_rewards() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_base();
        cfg.task = Some(tiny_task());
        cfg.mpc = Some(tiny_mpc());
        cfg.baseline_stiffness = Some([1000.0; 3]);
        cfg.paths.out_dir = dir.path().to_path_buf();
        cfg.paths.checkpoint = Some(explored_dir().join("checkpoint.json"));
        let cfg = cfg.resolve(Mode::Eval, &CliOverrides::default()).unwrap();
        cli_run(&cfg, vec!["test".into()]).unwrap();
        assert!(dir.path().join("baseline_episode_000.csv").exists());
        let rewards = std::fs::read_to_string(dir.path().join("rewards.csv")).unwrap();
        assert!(rewards.starts_with("trial,steps,reward,baseline_reward,reward_normalized\n"));
        assert_eq!(rewards.lines().count(), 3);
    }

    #[test]
    fn sweep_covers_the_cross_product_exactly_once() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_base();
        cfg.task = Some(tiny_task());
        cfg.mpc = Some(tiny_mpc());
        cfg.trials = 1;
        cfg.sweep.alpha_q = vec![1.0];
        cfg.sweep.alpha_r = vec![0.1, 0.01];
        cfg.paths.out_dir = dir.path().to_path_buf();
        cfg.paths.checkpoint = Some(explored_dir().join("checkpoint.json"));
        let cfg = cfg.resolve(Mode::Sweep, &CliOverrides::default()).unwrap();
        let outcome = cli_run(&cfg, vec!["test".into()]).unwrap();

        let table = std::fs::read_to_string(dir.path().join(SWEEP_FILE)).unwrap();
        assert!(table.starts_with("alpha_q,alpha_r,trials,pos_err_mean,lambda_mean,reward_mean\n"));
        assert_eq!(table.lines().count(), 3, "one row per grid cell");
        for sub in ["aq1_ar0p1", "aq1_ar0p01"] {
            assert!(dir.path().join(sub).join("episode_000.csv").exists(), "{sub}");
            assert!(dir.path().join(sub).join("summary.csv").exists(), "{sub}");
            assert!(
                outcome.manifest.outputs.iter().any(|o| o == &format!("{sub}/summary.csv")),
                "{sub} summary not referenced"
            );
        }
    }

    #[test]
    fn oracle_check_writes_its_report() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_base();
        cfg.seed = 3;
        cfg.oracle.cases = 2;
        cfg.oracle.points_per_axis = 7;
        cfg.paths.out_dir = dir.path().to_path_buf();
        let cfg = cfg.resolve(Mode::OracleCheck, &CliOverrides::default()).unwrap();
        cli_run(&cfg, vec!["test".into()]).unwrap();
        let report = std::fs::read_to_string(dir.path().join(ORACLE_FILE)).unwrap();
        assert_eq!(report.lines().count(), 3);
        assert!(report.starts_with("case,px,py,pz,vx,vy,vz,fx,fy,fz,planner_cost,grid_cost,ratio\n"));
        assert!(dir.path().join(MANIFEST_FILE).exists());
    }

    #[test]
    fn baseline_same_seed_gives_identical_logs() {
        let task = tiny_task();
        let w = default_weights_for(&task.task);
        let a = fixed_stiffness_baseline(&task, [300.0; 3], 2, 11, &w).unwrap();
        let b = fixed_stiffness_baseline(&task, [300.0; 3], 2, 11, &w).unwrap();
        let mut x = Vec::new();
        let mut y = Vec::new();
        a[0].write_csv(&mut x).unwrap();
        b[0].write_csv(&mut y).unwrap();
        assert_eq!(x, y);
        assert_eq!(a[0].len(), 12);
        for row in &a[0].rows {
            assert_eq!(row.stiffness(), [300.0; 3]);
        }
    }

    #[test]
    fn baseline_rejects_out_of_bounds_stiffness() {
        let task = tiny_task();
        let w = default_weights_for(&task.task);
        let err = fixed_stiffness_baseline(&task, [0.0; 3], 1, 0, &w).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn summarize_standalone_aggregates_saved_logs() {
        let dir = tempfile::tempdir().unwrap();
        let task = tiny_task();
        let w = default_weights_for(&task.task);
        let logs = fixed_stiffness_baseline(&task, [200.0; 3], 2, 5, &w).unwrap();
        let mut paths = Vec::new();
        for (i, log) in logs.iter().enumerate() {
            let p = dir.path().join(format!("log_{i}.csv"));
            log.save(&p).unwrap();
            paths.push(p);
        }
        let out = dir.path().join("agg");
        let outcome = run_summarize(&paths, &out, 0, None, vec!["test".into()]).unwrap();
        assert_eq!(outcome.manifest.mode, "summarize");
        for f in ["summary.csv", "phase_stiffness.csv", "rewards.csv"] {
            assert!(out.join(f).exists(), "{f}");
        }
        let text = std::fs::read_to_string(out.join("summary.csv")).unwrap();
        assert_eq!(text.lines().count(), 13, "12 steps plus header");
    }

    #[test]
    fn summarize_with_no_logs_is_a_config_error() {
        let err = run_summarize(&[], Path::new("/tmp/nowhere"), 0, None, vec![]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
