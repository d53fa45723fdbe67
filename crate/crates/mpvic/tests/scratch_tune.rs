//! Throwaway tuning probe against a pre-trained checkpoint. Not shipped.

use std::path::Path;

use nalgebra::Vector3;

use mpvic::dynamics::tasks::{ComplianceTask, TaskConfig, TaskKind, TaskSim};
use mpvic::harness::config::{default_mpc_for, default_weights_for, task_config_by_name};
use mpvic::harness::runner::{run_trials, trial_seed};
use mpvic::mpc::Controller;
use mpvic::penn::EnsembleModel;
use mpvic::seeding;

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn probe() {
    let ck = Path::new("/tmp/tune/run/checkpoint.json");
    if !ck.exists() {
        eprintln!("no checkpoint, skipping");
        return;
    }
    let model = EnsembleModel::load(ck).unwrap();

    // --- criterion 9 shape: compliance with zero disturbance ---
    let task9 = TaskConfig::new(TaskKind::Compliance(ComplianceTask {
        amplitude_n: 0.0,
        noise_n: 0.0,
        ..ComplianceTask::default()
    }));
    let w9 = default_weights_for(&task9.task);
    let m9 = default_mpc_for(&task9.task);
    let (logs, _) = run_trials(&model, &task9, &w9, &m9, 5, 19).unwrap();
    let mut lam = Vec::new();
    let mut err = Vec::new();
    for log in &logs {
        for r in &log.rows {
            let k = r.stiffness();
            lam.push((k[0] + k[1] + k[2]) / 3.0);
            let p = r.position();
            err.push((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt());
        }
    }
    println!(
        "C9 rest: lambda {:.1} (bar 100), |dx| {:.2} mm (bar 5)",
        mean(&lam),
        1e3 * mean(&err)
    );
    let per_t: Vec<f64> = logs[0]
        .rows
        .iter()
        .map(|r| {
            let k = r.stiffness();
            (k[0] + k[1] + k[2]) / 3.0
        })
        .collect();
    println!("C9 trial0 lambda(t): {:?}", per_t.iter().map(|v| *v as i64).collect::<Vec<_>>());

    // --- criterion 7 shape: falling impacts ---
    let task7 = task_config_by_name("falling").unwrap();
    let w7 = default_weights_for(&task7.task);
    let m7 = default_mpc_for(&task7.task);
    let (logs7, _) = run_trials(&model, &task7, &w7, &m7, 10, 7).unwrap();
    let impacts = [2.0, 4.0, 6.0, 8.0];
    for (i, log) in logs7.iter().enumerate() {
        let mut line = format!("C7 trial {i}:");
        for &ti in &impacts {
            let before: Vec<f64> = log
                .rows
                .iter()
                .filter(|r| r.t >= ti - 0.5 - 1e-9 && r.t < ti - 1e-9)
                .map(|r| r.stiffness()[2])
                .collect();
            let after: Vec<f64> = log
                .rows
                .iter()
                .filter(|r| r.t >= ti - 1e-9 && r.t < ti + 0.5 - 1e-9)
                .map(|r| r.stiffness()[2])
                .collect();
            let (b, a) = (mean(&before), mean(&after));
            line.push_str(&format!(" [{:.0}->{:.0}{}]", b, a, if a > b { "" } else { " X" }));
        }
        println!("{line}");
    }

    // --- criterion 8 shape: push schedule ---
    let task8 = task_config_by_name("push").unwrap();
    let m8 = default_mpc_for(&task8.task);
    let command_step = match &task8.task {
        TaskKind::Push(p) => (p.command_time_s / task8.control_period_s).round() as usize,
        _ => unreachable!(),
    };
    for (h, parts, q, ar) in [
        (5usize, 5usize, 1e11, 0.3),
        (5, 5, 1e11, 0.5),
        (3, 5, 1e11, 0.1),
        (4, 5, 1e11, 0.1),
        (3, 5, 1e10, 0.1),
        (5, 10, 1e11, 0.1),
    ] {
    let mut w8 = default_weights_for(&task8.task);
    for i in 0..3 {
        w8.q_base[i] = q;
    }
    w8.alpha_r = ar;
    let mut m8 = m8;
    m8.horizon = h;
    m8.particles = parts;
    println!("C8 with horizon {h}, particles {parts}, q_pos {q:.0e}, alpha_r {ar}:");
    for trial in 0..10usize {
        let ts = trial_seed(8, trial);
        let mut sim = TaskSim::new(task8, ts).unwrap();
        let mut ctl = Controller::new(
            &model,
            w8,
            m8,
            task8.initial_stiffness,
            seeding::stream(ts, "planner", 0),
        )
        .unwrap();
        let steps = sim.config().control_steps() as usize;
        let mut ks = Vec::new();
        let mut reached_at = None;
        for step in 0..steps {
            let (state, force) = sim.observe();
            let tv = sim.target();
            let d = ctl.plan(
                &state.to_array(),
                &[force.x, force.y, force.z],
                &[tv.x, tv.y, tv.z],
            );
            ks.push(d.stiffness);
            if sim
                .advance_control_period(Vector3::new(
                    d.stiffness[0],
                    d.stiffness[1],
                    d.stiffness[2],
                ))
                .is_err()
            {
                break;
            }
            let (s, goal) = sim.push_progress().unwrap();
            if reached_at.is_none() && (goal - s).abs() <= 0.02 {
                reached_at = Some(step);
            }
        }
        let (s_final, goal) = sim.push_progress().unwrap();
        let window = ks.len().saturating_sub(command_step);
        let quarter = window / 4;
        let q1 = &ks[command_step..command_step + quarter];
        let q4 = &ks[ks.len() - quarter..];
        let am = |rows: &[[f64; 3]]| mean(&rows.iter().flat_map(|k| [k[0], k[1]]).collect::<Vec<_>>());
        println!(
            "C8 trial {trial}: final err {:.3} m, reached_at {:?}, q1 {:.0}, q4 {:.0}",
            (goal - s_final).abs(),
            reached_at,
            am(q1),
            am(q4)
        );
    }
    }

    // --- criterion 6 shape ---
    let task6 = TaskConfig::new(TaskKind::Compliance(ComplianceTask::default()));
    let m6 = default_mpc_for(&task6.task);
    for ar in [0.1, 0.01] {
        let mut w6 = default_weights_for(&task6.task);
        w6.alpha_r = ar;
        let (l6, _) = run_trials(&model, &task6, &w6, &m6, 20, 42).unwrap();
        let mut lam = Vec::new();
        let mut err = Vec::new();
        for log in &l6 {
            for r in &log.rows {
                let k = r.stiffness();
                lam.push((k[0] + k[1] + k[2]) / 3.0);
                let p = r.position();
                err.push((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt());
            }
        }
        println!("C6 alpha_r {ar}: |dx| {:.1} mm, lambda {:.0}", 1e3 * mean(&err), mean(&lam));
    }
}
