//! Aggregation across trials: per-timestep deviation and stiffness with
//! bootstrap confidence bands, per-quarter stiffness phases, and per-episode
//! rewards. All outputs are tidy CSV meant for plotting as-is.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::dynamics::tasks::{TaskConfig, TaskKind};
use crate::episode::EpisodeLog;
use crate::seeding;

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

pub const SUMMARY_FILE: &str = "summary.csv";
pub const PHASE_FILE: &str = "phase_stiffness.csv";
pub const REWARDS_FILE: &str = "rewards.csv";

/// Commanded reference position over time, reconstructed from the task
/// config; episode logs store only the measured state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Reference {
    Fixed([f64; 3]),
    /// Jumps from `before` to `after` once the sensor step clock reaches
    /// `at_step`, mirroring a task that commands its goal mid-episode.
    Step { before: [f64; 3], after: [f64; 3], at_step: u64, sensor_period_s: f64 },
}

impl Reference {
    pub fn zero() -> Self {
        Reference::Fixed([0.0; 3])
    }

    pub fn for_task(cfg: &TaskConfig) -> Self {
        match &cfg.task {
            TaskKind::Push(p) => {
                let offset = nalgebra::Vector3::from(p.target_offset_m);
                let dir = offset.normalize() * offset.norm();
                Reference::Step {
                    before: [0.0; 3],
                    after: [dir.x, dir.y, dir.z],
                    at_step: (p.command_time_s / cfg.sensor_period_s).round() as u64,
                    sensor_period_s: cfg.sensor_period_s,
                }
            }
            _ => Reference::zero(),
        }
    }

    pub fn at(&self, t: f64) -> [f64; 3] {
        match self {
            Reference::Fixed(r) => *r,
            Reference::Step { before, after, at_step, sensor_period_s } => {
                let step = (t / sensor_period_s).round() as u64;
                if step >= *at_step {
                    *after
                } else {
                    *before
                }
            }
        }
    }
}

/// One aggregated timestep: mean and 95% bootstrap band across the trials
/// that reached it.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TimestepStat {
    pub step: usize,
    pub t: f64,
    pub trials: usize,
    pub pos_err_mean: f64,
    pub pos_err_lo: f64,
    pub pos_err_hi: f64,
    pub lambda_mean: f64,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub cost_mean: f64,
}

/// Percentile bootstrap for the mean: resample with replacement, rank the
/// resample means, read the 2.5% and 97.5% ranks. A single value has no
/// spread, so its band has zero width.
fn bootstrap_ci(values: &[f64], resamples: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let n = values.len();
    if n == 1 {
        return (values[0], values[0]);
    }
    let mut means = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut acc = 0.0;
        for _ in 0..n {
            acc += values[rng.random_range(0..n)];
        }
        means.push(acc / n as f64);
    }
    means.sort_by(|a, b| a.partial_cmp(b).expect("finite bootstrap means"));
    let last = (resamples - 1) as f64;
    let lo = means[(0.025 * last).round() as usize];
    let hi = means[(0.975 * last).round() as usize];
    (lo, hi)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Aggregate logs per timestep. Trials may end early; each step averages the
/// logs that reached it. All logs must agree on the time base.
pub fn per_timestep_summary(
    logs: &[EpisodeLog],
    reference: &Reference,
    seed: u64,
) -> Result<Vec<TimestepStat>, HarnessError> {
    if logs.is_empty() {
        return Err(HarnessError::Runtime("no episode logs to summarize".into()));
    }
    if logs.iter().any(|l| l.is_empty()) {
        return Err(HarnessError::Runtime("empty episode log".into()));
    }
    let longest = logs.iter().map(|l| l.len()).max().unwrap();
    let mut out = Vec::with_capacity(longest);
    for step in 0..longest {
        let rows: Vec<_> = logs.iter().filter_map(|l| l.rows.get(step)).collect();
        let t = rows[0].t;
        if rows.iter().any(|r| r.t != t) {
            return Err(HarnessError::Runtime(format!(
                "episode logs disagree on the time base at step {step}"
            )));
        }
        let target = reference.at(t);
        let pos_errs: Vec<f64> = rows
            .iter()
            .map(|r| {
                let p = r.position();
                let d = [target[0] - p[0], target[1] - p[1], target[2] - p[2]];
                (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
            })
            .collect();
        let lambdas: Vec<f64> = rows
            .iter()
            .map(|r| {
                let k = r.stiffness();
                (k[0] + k[1] + k[2]) / 3.0
            })
            .collect();
        let costs: Vec<f64> = rows.iter().map(|r| r.cost).collect();

        let mut rng = seeding::stream(seed, "bootstrap", step as u64);
        let (pe_lo, pe_hi) = bootstrap_ci(&pos_errs, BOOTSTRAP_RESAMPLES, &mut rng);
        let (la_lo, la_hi) = bootstrap_ci(&lambdas, BOOTSTRAP_RESAMPLES, &mut rng);
        out.push(TimestepStat {
            step,
            t,
            trials: rows.len(),
            pos_err_mean: mean(&pos_errs),
            pos_err_lo: pe_lo,
            pos_err_hi: pe_hi,
            lambda_mean: mean(&lambdas),
            lambda_lo: la_lo,
            lambda_hi: la_hi,
            cost_mean: mean(&costs),
        });
    }
    Ok(out)
}

pub fn write_summary_csv<W: Write>(stats: &[TimestepStat], out: W) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record([
        "step",
        "t",
        "trials",
        "pos_err_mean",
        "pos_err_lo",
        "pos_err_hi",
        "lambda_mean",
        "lambda_lo",
        "lambda_hi",
        "cost_mean",
    ])?;
    for s in stats {
        w.write_record([
            s.step.to_string(),
            s.t.to_string(),
            s.trials.to_string(),
            s.pos_err_mean.to_string(),
            s.pos_err_lo.to_string(),
            s.pos_err_hi.to_string(),
            s.lambda_mean.to_string(),
            s.lambda_lo.to_string(),
            s.lambda_hi.to_string(),
            s.cost_mean.to_string(),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::Runtime(format!("csv: {e}")))?;
    Ok(())
}

/// Stiffness statistics for one quarter of the episode on one axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseStat {
    /// Quarter index, 1 through 4.
    pub phase: usize,
    pub axis: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub rows: usize,
}

/// Quarter each log by its own row count, then pool rows across logs. A
/// truncated trial still contributes four quarters of what it has.
pub fn phase_stats(logs: &[EpisodeLog]) -> Vec<PhaseStat> {
    let mut acc = [[(0.0f64, f64::INFINITY, f64::NEG_INFINITY, 0usize); 3]; 4];
    for log in logs {
        let n = log.len();
        for (i, row) in log.rows.iter().enumerate() {
            let phase = (i * 4 / n).min(3);
            let k = row.stiffness();
            for axis in 0..3 {
                let cell = &mut acc[phase][axis];
                cell.0 += k[axis];
                cell.1 = cell.1.min(k[axis]);
                cell.2 = cell.2.max(k[axis]);
                cell.3 += 1;
            }
        }
    }
    let mut out = Vec::new();
    for (phase, per_axis) in acc.iter().enumerate() {
        for (axis, &(sum, min, max, rows)) in per_axis.iter().enumerate() {
            if rows == 0 {
                continue;
            }
            out.push(PhaseStat {
                phase: phase + 1,
                axis,
                mean: sum / rows as f64,
                min,
                max,
                rows,
            });
        }
    }
    out
}

pub fn write_phase_csv<W: Write>(stats: &[PhaseStat], out: W) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["phase", "axis", "k_mean", "k_min", "k_max", "rows"])?;
    const AXES: [&str; 3] = ["x", "y", "z"];
    for s in stats {
        w.write_record([
            s.phase.to_string(),
            AXES[s.axis].to_string(),
            s.mean.to_string(),
            s.min.to_string(),
            s.max.to_string(),
            s.rows.to_string(),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::Runtime(format!("csv: {e}")))?;
    Ok(())
}

/// Episode return: the realized step costs, summed and negated.
pub fn episode_reward(log: &EpisodeLog) -> f64 {
    -log.rows.iter().map(|r| r.cost).sum::<f64>()
}

/// Per-trial rewards; with a baseline present each row also carries the
/// baseline's reward on the same trial seed and the ratio against its
/// magnitude (closer to zero from below means better).
pub fn write_rewards_csv<W: Write>(
    logs: &[EpisodeLog],
    baseline: Option<&[EpisodeLog]>,
    out: W,
) -> Result<(), HarnessError> {
    if let Some(b) = baseline {
        if b.len() != logs.len() {
            return Err(HarnessError::Runtime(format!(
                "baseline has {} trials, adaptive has {}",
                b.len(),
                logs.len()
            )));
        }
    }
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    match baseline {
        None => {
            w.write_record(["trial", "steps", "reward"])?;
            for (i, log) in logs.iter().enumerate() {
                w.write_record([
                    i.to_string(),
                    log.len().to_string(),
                    episode_reward(log).to_string(),
                ])?;
            }
        }
        Some(base) => {
            w.write_record(["trial", "steps", "reward", "baseline_reward", "reward_normalized"])?;
            for (i, log) in logs.iter().enumerate() {
                let r = episode_reward(log);
                let b = episode_reward(&base[i]);
                let norm = r / b.abs().max(1e-12);
                w.write_record([
                    i.to_string(),
                    log.len().to_string(),
                    r.to_string(),
                    b.to_string(),
                    norm.to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| HarnessError::Runtime(format!("csv: {e}")))?;
    Ok(())
}

/// Write all three aggregate files into `dir`; returns the file names.
pub fn summarize_to_dir(
    logs: &[EpisodeLog],
    baseline: Option<&[EpisodeLog]>,
    reference: &Reference,
    seed: u64,
    dir: &Path,
) -> Result<Vec<String>, HarnessError> {
    let stats = per_timestep_summary(logs, reference, seed)?;
    write_summary_csv(&stats, std::fs::File::create(dir.join(SUMMARY_FILE))?)?;
    write_phase_csv(&phase_stats(logs), std::fs::File::create(dir.join(PHASE_FILE))?)?;
    write_rewards_csv(logs, baseline, std::fs::File::create(dir.join(REWARDS_FILE))?)?;
    Ok(vec![SUMMARY_FILE.into(), PHASE_FILE.into(), REWARDS_FILE.into()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::EpisodeRow;

    fn constant_log(steps: usize, k: f64, cost: f64) -> EpisodeLog {
        let mut log = EpisodeLog::new();
        for i in 0..steps {
            let state = [0.01 * i as f64, 0.0, 0.0, 0.0, 0.0, 0.0];
            log.push(EpisodeRow::new(0.1 * i as f64, &state, &[k; 3], &[0.0; 3], cost));
        }
        log
    }

    #[test]
    fn single_log_summary_echoes_the_log_with_zero_width_bands() {
        let log = constant_log(5, 100.0, 2.0);
        let stats = per_timestep_summary(std::slice::from_ref(&log), &Reference::zero(), 0).unwrap();
        assert_eq!(stats.len(), 5);
        for (i, s) in stats.iter().enumerate() {
            assert_eq!(s.trials, 1);
            assert_eq!(s.pos_err_mean, 0.01 * i as f64);
            assert_eq!(s.pos_err_lo, s.pos_err_mean);
            assert_eq!(s.pos_err_hi, s.pos_err_mean);
            assert_eq!(s.lambda_mean, 100.0);
            assert_eq!(s.lambda_lo, 100.0);
            assert_eq!(s.lambda_hi, 100.0);
            assert_eq!(s.cost_mean, 2.0);
        }
    }

    #[test]
    fn two_constant_stiffness_logs_average_to_the_midpoint() {
        let logs = [constant_log(4, 100.0, 1.0), constant_log(4, 200.0, 3.0)];
        let stats = per_timestep_summary(&logs, &Reference::zero(), 0).unwrap();
        for s in &stats {
            assert_eq!(s.trials, 2);
            assert_eq!(s.lambda_mean, 150.0);
            assert_eq!(s.cost_mean, 2.0);
            assert!(s.lambda_lo >= 100.0 && s.lambda_hi <= 200.0);
            assert!(s.lambda_lo <= 150.0 && s.lambda_hi >= 150.0);
        }
    }

    #[test]
    fn truncated_trial_drops_out_of_later_steps() {
        let logs = [constant_log(6, 100.0, 1.0), constant_log(3, 200.0, 1.0)];
        let stats = per_timestep_summary(&logs, &Reference::zero(), 0).unwrap();
        assert_eq!(stats.len(), 6);
        assert_eq!(stats[2].trials, 2);
        assert_eq!(stats[2].lambda_mean, 150.0);
        assert_eq!(stats[3].trials, 1);
        assert_eq!(stats[3].lambda_mean, 100.0);
    }

    #[test]
    fn disagreeing_time_bases_are_rejected() {
        let a = constant_log(3, 100.0, 1.0);
        let mut b = EpisodeLog::new();
        for i in 0..3 {
            b.push(EpisodeRow::new(
                0.2 * i as f64,
                &[0.0; 6],
                &[100.0; 3],
                &[0.0; 3],
                1.0,
            ));
        }
        let err = per_timestep_summary(&[a, b], &Reference::zero(), 0).unwrap_err();
        assert!(err.to_string().contains("time base"), "{err}");
    }

    #[test]
    fn bootstrap_bands_are_seeded() {
        let logs: Vec<EpisodeLog> = (0..10)
            .map(|i| constant_log(3, 100.0 + 17.3 * i as f64, 1.0))
            .collect();
        let a = per_timestep_summary(&logs, &Reference::zero(), 7).unwrap();
        let b = per_timestep_summary(&logs, &Reference::zero(), 7).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.lambda_lo, y.lambda_lo);
            assert_eq!(x.lambda_hi, y.lambda_hi);
        }
        let c = per_timestep_summary(&logs, &Reference::zero(), 8).unwrap();
        assert!(a.iter().zip(&c).any(|(x, y)| x.lambda_lo != y.lambda_lo));
    }

    #[test]
    fn phases_quarter_each_log_by_its_own_length() {
        let mut log = EpisodeLog::new();
        for i in 0..8 {
            let k = if i < 2 { 500.0 } else { 50.0 };
            log.push(EpisodeRow::new(0.1 * i as f64, &[0.0; 6], &[k; 3], &[0.0; 3], 0.0));
        }
        let stats = phase_stats(std::slice::from_ref(&log));
        assert_eq!(stats.len(), 12);
        let q1_x = stats.iter().find(|s| s.phase == 1 && s.axis == 0).unwrap();
        assert_eq!(q1_x.mean, 500.0);
        assert_eq!(q1_x.rows, 2);
        let q4_x = stats.iter().find(|s| s.phase == 4 && s.axis == 0).unwrap();
        assert_eq!(q4_x.mean, 50.0);
    }

    #[test]
    fn reward_is_negated_cost_sum() {
        let log = constant_log(4, 100.0, 2.5);
        assert_eq!(episode_reward(&log), -10.0);
    }

    #[test]
    fn rewards_csv_with_baseline_carries_the_ratio() {
        let logs = vec![constant_log(4, 100.0, 2.5)];
        let base = vec![constant_log(4, 1000.0, 5.0)];
        let mut buf = Vec::new();
        write_rewards_csv(&logs, Some(&base), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "trial,steps,reward,baseline_reward,reward_normalized"
        );
        assert_eq!(lines.next().unwrap(), "0,4,-10,-20,-0.5");
    }

    #[test]
    fn step_reference_switches_at_the_commanded_step() {
        use crate::dynamics::tasks::{PushTask, TaskConfig, TaskKind};
        let cfg = TaskConfig::new(TaskKind::Push(PushTask::default()));
        let r = Reference::for_task(&cfg);
        assert_eq!(r.at(0.0), [0.0; 3]);
        assert_eq!(r.at(0.9), [0.0; 3]);
        let after = r.at(1.0);
        let d = 0.1 / std::f64::consts::SQRT_2;
        assert!((after[0] - d).abs() < 1e-12 && (after[1] - d).abs() < 1e-12);
        assert_eq!(r.at(5.0), after);
    }

    #[test]
    fn summary_csv_layout_is_stable() {
        let log = constant_log(2, 100.0, 1.0);
        let stats = per_timestep_summary(std::slice::from_ref(&log), &Reference::zero(), 0).unwrap();
        let mut buf = Vec::new();
        write_summary_csv(&stats, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "step,t,trials,pos_err_mean,pos_err_lo,pos_err_hi,lambda_mean,lambda_lo,lambda_hi,cost_mean\n"
        ));
        assert_eq!(text.lines().count(), 3);
    }
}
