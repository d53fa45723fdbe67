//! Rollouts through a dynamics model.
//!
//! Stochastic propagation pins each particle to one ensemble member for the
//! whole horizon and resamples that member's Gaussian at every step. Mean
//! propagation averages the member means instead and records the spread
//! between them, the signal curiosity-driven exploration maximizes.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use super::net::{ACTION_DIM, STATE_DIM};
use super::{ensemble_variance_rows, DynamicsModel, ModelError};

/// Deterministic rollout of the ensemble mean.
#[derive(Clone, Debug)]
pub struct MeanRollout {
    /// State after each step, one (n_seq, 6) matrix per step.
    pub states: Vec<Array2<f64>>,
    /// Across-member spread at each (sequence, step) query, shape (n_seq, steps).
    pub rho: Array2<f64>,
}

fn check_sequences(seqs: &[Array2<f64>]) -> Result<(usize, usize), ModelError> {
    let t_len = match seqs.first() {
        Some(q) => q.nrows(),
        None => return Err(ModelError::BadShape("no action sequences".into())),
    };
    if t_len == 0 {
        return Err(ModelError::BadShape("empty action sequence".into()));
    }
    for q in seqs {
        if q.dim() != (t_len, ACTION_DIM) {
            return Err(ModelError::BadShape(format!(
                "action sequences must all be ({t_len},{ACTION_DIM}), got {:?}",
                q.dim()
            )));
        }
    }
    Ok((seqs.len(), t_len))
}

/// Propagate a cloud of particles through every action sequence at once.
///
/// Returns one (n_seq·particles, 6) matrix per step. Row k·particles + j is
/// particle j of sequence k and follows member j mod B for the whole horizon.
/// `particles_per_seq` must be a positive multiple of the member count so the
/// members are used evenly. A fresh normal draw is consumed for every state
/// entry even where the predicted variance is zero, so the consumed stream
/// depends only on the shapes, not on the model.
pub fn rollout_population<M, R>(
    model: &M,
    start: &[f64; STATE_DIM],
    seqs: &[Array2<f64>],
    particles_per_seq: usize,
    rng: &mut R,
) -> Result<Vec<Array2<f64>>, ModelError>
where
    M: DynamicsModel + ?Sized,
    R: Rng + ?Sized,
{
    let (n_seq, t_len) = check_sequences(seqs)?;
    let b = model.member_count();
    if b == 0 {
        return Err(ModelError::NeedTwoMembers(0));
    }
    let p = particles_per_seq;
    if p == 0 || p % b != 0 {
        return Err(ModelError::BadShape(format!(
            "{p} particles per sequence is not a positive multiple of {b} members"
        )));
    }
    let rows = n_seq * p;
    let mut states = Array2::from_shape_fn((rows, STATE_DIM), |(_, j)| start[j]);
    let mut member_rows: Vec<Vec<usize>> = vec![Vec::new(); b];
    for r in 0..rows {
        member_rows[(r % p) % b].push(r);
    }
    let mut actions = Array2::zeros((rows, ACTION_DIM));
    let mut mean_all = Array2::zeros((rows, STATE_DIM));
    let mut var_all = Array2::zeros((rows, STATE_DIM));
    let mut out = Vec::with_capacity(t_len);
    for t in 0..t_len {
        for r in 0..rows {
            actions.row_mut(r).assign(&seqs[r / p].row(t));
        }
        for (m, rows_m) in member_rows.iter().enumerate() {
            let st = states.select(Axis(0), rows_m);
            let ac = actions.select(Axis(0), rows_m);
            let (mn, vr) = model.predict_member(m, &st, &ac)?;
            for (local, &r) in rows_m.iter().enumerate() {
                mean_all.row_mut(r).assign(&mn.row(local));
                var_all.row_mut(r).assign(&vr.row(local));
            }
        }
        for r in 0..rows {
            for j in 0..STATE_DIM {
                let z: f64 = rng.sample(StandardNormal);
                states[(r, j)] = mean_all[(r, j)] + var_all[(r, j)].max(0.0).sqrt() * z;
            }
        }
        out.push(states.clone());
    }
    Ok(out)
}

/// Particle rollout of a single action sequence. Returns one (steps+1, 6)
/// trajectory per particle, starting row holding the shared initial state.
pub fn trajectory_sampling<M, R>(
    model: &M,
    start: &[f64; STATE_DIM],
    actions: &Array2<f64>,
    particles: usize,
    rng: &mut R,
) -> Result<Vec<Array2<f64>>, ModelError>
where
    M: DynamicsModel + ?Sized,
    R: Rng + ?Sized,
{
    let steps = rollout_population(model, start, std::slice::from_ref(actions), particles, rng)?;
    let t_len = actions.nrows();
    let mut trajs = vec![Array2::zeros((t_len + 1, STATE_DIM)); particles];
    for (j, tr) in trajs.iter_mut().enumerate() {
        for d in 0..STATE_DIM {
            tr[(0, d)] = start[d];
        }
        for (t, step) in steps.iter().enumerate() {
            tr.row_mut(t + 1).assign(&step.row(j));
        }
    }
    Ok(trajs)
}

/// Propagate the average of the member means and record the spread between
/// the members at every query. Needs at least two members.
pub fn rollout_mean<M>(
    model: &M,
    start: &[f64; STATE_DIM],
    seqs: &[Array2<f64>],
) -> Result<MeanRollout, ModelError>
where
    M: DynamicsModel + ?Sized,
{
    let (n_seq, t_len) = check_sequences(seqs)?;
    let b = model.member_count();
    if b < 2 {
        return Err(ModelError::NeedTwoMembers(b));
    }
    let mut states = Array2::from_shape_fn((n_seq, STATE_DIM), |(_, j)| start[j]);
    let mut actions = Array2::zeros((n_seq, ACTION_DIM));
    let mut rho = Array2::zeros((n_seq, t_len));
    let mut out = Vec::with_capacity(t_len);
    for t in 0..t_len {
        for (q, seq) in seqs.iter().enumerate() {
            actions.row_mut(q).assign(&seq.row(t));
        }
        let mut means = Vec::with_capacity(b);
        for m in 0..b {
            means.push(model.predict_member(m, &states, &actions)?.0);
        }
        rho.column_mut(t).assign(&ensemble_variance_rows(&means)?);
        let mut next = Array2::zeros((n_seq, STATE_DIM));
        for m in &means {
            next += m;
        }
        next /= b as f64;
        states = next;
        out.push(states.clone());
    }
    Ok(MeanRollout { states: out, rho })
}
