//! Cross-entropy optimization over bounded action sequences.
//!
//! Maintains a diagonal Gaussian over T×A sequences, samples a population,
//! refits mean and variance to the lowest-cost elites with smoothing, and
//! tracks the best sequence ever sampled.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_POPULATION: usize = 200;
pub const DEFAULT_ELITES: usize = 40;
pub const DEFAULT_SMOOTHING: f64 = 0.1;
pub const DEFAULT_ITERATIONS: usize = 10;

/// Draws falling outside the bounds are redrawn this many times, then clipped.
const MAX_RESAMPLES: usize = 10;

#[derive(Error, Debug)]
pub enum CemError {
    #[error("bad bound [{lo}, {hi}] at action dim {dim}")]
    BadBound { dim: usize, lo: f64, hi: f64 },
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("distribution shape {rows}x{cols} does not match horizon/bounds {t}x{a}")]
    ShapeMismatch { rows: usize, cols: usize, t: usize, a: usize },
    #[error("distribution invalid: {0}")]
    BadDistribution(String),
    #[error("scorer returned {got} costs for {want} samples")]
    ScorerOutput { got: usize, want: usize },
}

/// Closed interval for one action dimension.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub lo: f64,
    pub hi: f64,
}

impl Bound {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn validate(&self, dim: usize) -> Result<(), CemError> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(CemError::BadBound { dim, lo: self.lo, hi: self.hi });
        }
        Ok(())
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    /// Initial sampling variance: std of a quarter of the box width.
    pub fn initial_variance(&self) -> f64 {
        let sd = 0.25 * (self.hi - self.lo);
        sd * sd
    }
}

/// Diagonal Gaussian over T×A action sequences, boxed per action dim.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceDistribution {
    pub mean: Array2<f64>,
    pub var: Array2<f64>,
    pub bounds: Vec<Bound>,
}

impl SequenceDistribution {
    /// Box midpoint mean with the default per-dim variance.
    pub fn boxed_init(horizon: usize, bounds: &[Bound]) -> Result<Self, CemError> {
        if horizon == 0 {
            return Err(CemError::BadConfig("horizon must be >= 1".into()));
        }
        for (dim, b) in bounds.iter().enumerate() {
            b.validate(dim)?;
        }
        let a = bounds.len();
        let mean = Array2::from_shape_fn((horizon, a), |(_, j)| bounds[j].midpoint());
        let var = Array2::from_shape_fn((horizon, a), |(_, j)| bounds[j].initial_variance());
        Ok(Self { mean, var, bounds: bounds.to_vec() })
    }

    pub fn horizon(&self) -> usize {
        self.mean.nrows()
    }

    pub fn action_dims(&self) -> usize {
        self.mean.ncols()
    }

    pub fn validate(&self) -> Result<(), CemError> {
        let (t, a) = (self.mean.nrows(), self.mean.ncols());
        if t == 0 {
            return Err(CemError::BadDistribution("empty horizon".into()));
        }
        if self.var.dim() != (t, a) || self.bounds.len() != a {
            return Err(CemError::ShapeMismatch {
                rows: self.var.nrows(),
                cols: self.var.ncols(),
                t,
                a: self.bounds.len(),
            });
        }
        for (dim, b) in self.bounds.iter().enumerate() {
            b.validate(dim)?;
        }
        for ((i, j), &m) in self.mean.indexed_iter() {
            if !m.is_finite() || !self.bounds[j].contains(m) {
                return Err(CemError::BadDistribution(format!(
                    "mean {m} at ({i}, {j}) outside bound [{}, {}]",
                    self.bounds[j].lo, self.bounds[j].hi
                )));
            }
        }
        for (&v, _) in self.var.iter().zip(0..) {
            if !v.is_finite() || v < 0.0 {
                return Err(CemError::BadDistribution(format!("variance {v} invalid")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CemConfig {
    pub population: usize,
    pub elites: usize,
    pub smoothing: f64,
    pub iterations: usize,
    pub bounds: Vec<Bound>,
}

impl CemConfig {
    pub fn with_bounds(bounds: Vec<Bound>) -> Self {
        Self {
            population: DEFAULT_POPULATION,
            elites: DEFAULT_ELITES,
            smoothing: DEFAULT_SMOOTHING,
            iterations: DEFAULT_ITERATIONS,
            bounds,
        }
    }

    pub fn validate(&self) -> Result<(), CemError> {
        if self.elites == 0 || self.elites > self.population {
            return Err(CemError::BadConfig(format!(
                "need 1 <= elites <= population, got {}/{}",
                self.elites, self.population
            )));
        }
        if !(self.smoothing > 0.0 && self.smoothing <= 1.0) {
            return Err(CemError::BadConfig(format!("smoothing {} not in (0, 1]", self.smoothing)));
        }
        if self.iterations == 0 {
            return Err(CemError::BadConfig("iterations must be >= 1".into()));
        }
        for (dim, b) in self.bounds.iter().enumerate() {
            b.validate(dim)?;
        }
        Ok(())
    }
}

/// One truncated-Gaussian draw: redraw out-of-bounds values, clip as fallback.
fn draw_bounded(mean: f64, sd: f64, bound: Bound, rng: &mut ChaCha8Rng) -> f64 {
    if sd == 0.0 {
        return bound.clamp(mean);
    }
    let mut x = mean + sd * rng.sample::<f64, _>(StandardNormal);
    for _ in 0..MAX_RESAMPLES {
        if bound.contains(x) {
            return x;
        }
        x = mean + sd * rng.sample::<f64, _>(StandardNormal);
    }
    bound.clamp(x)
}

/// Draw `n` sequences from the truncated Gaussian. Every entry respects the
/// per-dim bounds. Draw order is sample-major then row-major, so results are
/// reproducible per rng stream.
pub fn sample_population(
    dist: &SequenceDistribution,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Array2<f64>> {
    let (t, a) = (dist.horizon(), dist.action_dims());
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut seq = Array2::zeros((t, a));
        for i in 0..t {
            for j in 0..a {
                let sd = dist.var[(i, j)].sqrt();
                seq[(i, j)] = draw_bounded(dist.mean[(i, j)], sd, dist.bounds[j], rng);
            }
        }
        out.push(seq);
    }
    out
}

/// Rank sample indices: finite costs ascending, non-finite last, ties by index.
fn ranked_indices(costs: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..costs.len()).collect();
    idx.sort_by(|&i, &j| {
        let (fi, fj) = (costs[i].is_finite(), costs[j].is_finite());
        match (fi, fj) {
            (true, true) => costs[i].partial_cmp(&costs[j]).unwrap().then(i.cmp(&j)),
            (true, false) => std::cmp::Ordering::Less,
            (false, true) => std::cmp::Ordering::Greater,
            (false, false) => i.cmp(&j),
        }
    });
    idx
}

/// Refit toward the elite mean/variance with smoothing `lr`:
/// mean' = (1-lr)·mean + lr·elite_mean, var' likewise (population variance).
pub fn update_distribution(
    dist: &SequenceDistribution,
    samples: &[Array2<f64>],
    costs: &[f64],
    config: &CemConfig,
) -> Result<SequenceDistribution, CemError> {
    if costs.len() != samples.len() {
        return Err(CemError::ScorerOutput { got: costs.len(), want: samples.len() });
    }
    if samples.len() < config.elites {
        return Err(CemError::BadConfig(format!(
            "{} samples but {} elites required",
            samples.len(),
            config.elites
        )));
    }
    let elites = &ranked_indices(costs)[..config.elites];
    let (t, a) = (dist.horizon(), dist.action_dims());
    let mut elite_mean = Array2::<f64>::zeros((t, a));
    for &e in elites {
        elite_mean += &samples[e];
    }
    elite_mean /= config.elites as f64;
    let mut elite_var = Array2::<f64>::zeros((t, a));
    for &e in elites {
        let d = &samples[e] - &elite_mean;
        elite_var += &(&d * &d);
    }
    elite_var /= config.elites as f64;

    let lr = config.smoothing;
    Ok(SequenceDistribution {
        mean: (1.0 - lr) * &dist.mean + lr * &elite_mean,
        var: (1.0 - lr) * &dist.var + lr * &elite_var,
        bounds: dist.bounds.clone(),
    })
}

#[derive(Clone, Copy, Debug)]
pub struct IterationStat {
    pub iteration: usize,
    /// Best cost seen so far, including earlier iterations. Non-increasing.
    pub best_cost: f64,
    /// Mean of this iteration's finite costs.
    pub mean_cost: f64,
    /// Samples this iteration whose cost came back non-finite.
    pub nonfinite: usize,
}

#[derive(Clone, Debug)]
pub struct CemResult {
    pub best_sequence: Array2<f64>,
    pub best_cost: f64,
    pub final_dist: SequenceDistribution,
    pub stats: Vec<IterationStat>,
    pub nonfinite_total: usize,
}

/// Run I iterations of sample/score/refit and return the best-ever sample.
/// The scorer receives the whole population and must return one cost per
/// sample; non-finite costs rank the sample worst and are counted as warnings
/// in the stats.
pub fn optimize<F>(
    mut cost_fn: F,
    init: &SequenceDistribution,
    config: &CemConfig,
    rng: &mut ChaCha8Rng,
) -> Result<CemResult, CemError>
where
    F: FnMut(&[Array2<f64>]) -> Vec<f64>,
{
    config.validate()?;
    init.validate()?;
    if init.bounds != config.bounds {
        return Err(CemError::BadConfig("distribution bounds differ from config bounds".into()));
    }
    let mut dist = init.clone();
    let mut best_seq = init.mean.clone();
    let mut best_cost = f64::INFINITY;
    let mut stats = Vec::with_capacity(config.iterations);
    let mut nonfinite_total = 0;
    for iteration in 0..config.iterations {
        let samples = sample_population(&dist, config.population, rng);
        let costs = cost_fn(&samples);
        if costs.len() != samples.len() {
            return Err(CemError::ScorerOutput { got: costs.len(), want: samples.len() });
        }
        let mut finite_sum = 0.0;
        let mut finite_n = 0usize;
        let mut nonfinite = 0usize;
        for (s, &c) in samples.iter().zip(&costs) {
            if c.is_finite() {
                finite_sum += c;
                finite_n += 1;
                if c < best_cost {
                    best_cost = c;
                    best_seq = s.clone();
                }
            } else {
                nonfinite += 1;
            }
        }
        nonfinite_total += nonfinite;
        stats.push(IterationStat {
            iteration,
            best_cost,
            mean_cost: if finite_n > 0 { finite_sum / finite_n as f64 } else { f64::NAN },
            nonfinite,
        });
        dist = update_distribution(&dist, &samples, &costs, config)?;
    }
    Ok(CemResult { best_sequence: best_seq, best_cost, final_dist: dist, stats, nonfinite_total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding;
    use approx::assert_relative_eq;

    fn unit_bounds(a: usize, lo: f64, hi: f64) -> Vec<Bound> {
        vec![Bound::new(lo, hi); a]
    }

    fn quadratic_about(center: f64) -> impl FnMut(&[Array2<f64>]) -> Vec<f64> {
        move |samples: &[Array2<f64>]| {
            samples.iter().map(|s| s.iter().map(|&u| (u - center) * (u - center)).sum()).collect()
        }
    }

    #[test]
    fn zero_variance_samples_equal_the_mean() {
        let bounds = unit_bounds(2, 0.0, 10.0);
        let mut dist = SequenceDistribution::boxed_init(3, &bounds).unwrap();
        dist.var.fill(0.0);
        let mut rng = seeding::stream(1, "cem", 0);
        for s in sample_population(&dist, 7, &mut rng) {
            assert_eq!(s, dist.mean);
        }
    }

    #[test]
    fn samples_always_respect_bounds() {
        let bounds = vec![Bound::new(0.0, 1000.0), Bound::new(-5.0, -1.0)];
        let mut dist = SequenceDistribution::boxed_init(4, &bounds).unwrap();
        dist.var.fill(1e6); // absurd spread forces the clip fallback
        let mut rng = seeding::stream(2, "cem", 0);
        for s in sample_population(&dist, 50, &mut rng) {
            for i in 0..4 {
                assert!(bounds[0].contains(s[(i, 0)]));
                assert!(bounds[1].contains(s[(i, 1)]));
            }
        }
    }

    #[test]
    fn degenerate_bounds_pin_every_sample() {
        let bounds = vec![Bound::new(7.0, 7.0)];
        let dist = SequenceDistribution::boxed_init(2, &bounds).unwrap();
        let mut rng = seeding::stream(3, "cem", 0);
        for s in sample_population(&dist, 5, &mut rng) {
            assert!(s.iter().all(|&v| v == 7.0));
        }
    }

    #[test]
    fn update_with_full_smoothing_adopts_identical_elites() {
        let bounds = unit_bounds(1, 0.0, 10.0);
        let dist = SequenceDistribution::boxed_init(2, &bounds).unwrap();
        let q = Array2::from_elem((2, 1), 4.0);
        let samples = vec![q.clone(), q.clone(), Array2::from_elem((2, 1), 9.0)];
        let costs = vec![1.0, 1.0, 50.0];
        let cfg = CemConfig {
            population: 3,
            elites: 2,
            smoothing: 1.0,
            iterations: 1,
            bounds: bounds.clone(),
        };
        let next = update_distribution(&dist, &samples, &costs, &cfg).unwrap();
        assert_eq!(next.mean, q);
        assert!(next.var.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_smoothing_is_a_no_op_refit() {
        let bounds = unit_bounds(1, 0.0, 20.0);
        let dist = SequenceDistribution::boxed_init(2, &bounds).unwrap();
        let samples = vec![Array2::from_elem((2, 1), 1.0), Array2::from_elem((2, 1), 2.0)];
        let cfg = CemConfig {
            population: 2,
            elites: 1,
            smoothing: 0.0,
            iterations: 1,
            bounds: bounds.clone(),
        };
        let next = update_distribution(&dist, &samples, &[0.5, 0.1], &cfg).unwrap();
        assert_eq!(next.mean, dist.mean);
        assert_eq!(next.var, dist.var);
    }

    #[test]
    fn half_smoothing_moves_mean_halfway() {
        let bounds = unit_bounds(1, 0.0, 20.0);
        let mut dist = SequenceDistribution::boxed_init(1, &bounds).unwrap();
        dist.mean.fill(0.0);
        let samples = vec![Array2::from_elem((1, 1), 10.0)];
        let cfg = CemConfig {
            population: 1,
            elites: 1,
            smoothing: 0.5,
            iterations: 1,
            bounds: bounds.clone(),
        };
        let next = update_distribution(&dist, &samples, &[3.0], &cfg).unwrap();
        assert_relative_eq!(next.mean[(0, 0)], 5.0, max_relative = 1e-15);
    }

    #[test]
    fn ties_break_by_sample_index_and_nonfinite_ranks_last() {
        let costs = vec![f64::NAN, 1.0, f64::INFINITY, 0.5, 1.0];
        assert_eq!(ranked_indices(&costs), vec![3, 1, 4, 0, 2]);
    }

    #[test]
    fn quadratic_interior_optimum_is_found() {
        let bounds = unit_bounds(1, 0.0, 10.0);
        // lr = 0.1 refits too slowly to converge in 10 iterations; convergence
        // tests run a faster smoothing with the same population/elites.
        let cfg = CemConfig { smoothing: 0.7, ..CemConfig::with_bounds(bounds.clone()) };
        for seed in 0..5 {
            let dist = SequenceDistribution::boxed_init(3, &bounds).unwrap();
            let mut rng = seeding::stream(seed, "cem-test", 0);
            let res = optimize(quadratic_about(3.0), &dist, &cfg, &mut rng).unwrap();
            assert!(res.best_cost < 0.1, "seed {seed}: cost {}", res.best_cost);
            for &u in res.best_sequence.iter() {
                assert!((u - 3.0).abs() < 1e-1, "seed {seed}: entry {u}");
            }
        }
    }

    #[test]
    fn boundary_optimum_is_found() {
        // Truncated resampling biases draws away from the boundary, so pushing
        // the whole distribution onto it needs more refit steps than the
        // interior case.
        let bounds = unit_bounds(1, 1.0, 10.0);
        let cfg = CemConfig {
            smoothing: 0.8,
            iterations: 25,
            ..CemConfig::with_bounds(bounds.clone())
        };
        let dist = SequenceDistribution::boxed_init(3, &bounds).unwrap();
        let mut rng = seeding::stream(11, "cem-test", 0);
        let res = optimize(quadratic_about(0.0), &dist, &cfg, &mut rng).unwrap();
        for &u in res.best_sequence.iter() {
            assert!((u - 1.0).abs() < 1e-1, "entry {u}");
        }
    }

    #[test]
    fn constant_cost_returns_that_constant() {
        let bounds = unit_bounds(2, 0.0, 1.0);
        let cfg = CemConfig {
            population: 20,
            elites: 4,
            smoothing: 0.5,
            iterations: 3,
            bounds: bounds.clone(),
        };
        let dist = SequenceDistribution::boxed_init(2, &bounds).unwrap();
        let mut rng = seeding::stream(4, "cem-test", 0);
        let res = optimize(|s| vec![42.0; s.len()], &dist, &cfg, &mut rng).unwrap();
        assert_eq!(res.best_cost, 42.0);
    }

    #[test]
    fn best_cost_trace_is_monotone_and_seeded_runs_agree() {
        let bounds = unit_bounds(2, -4.0, 4.0);
        let cfg = CemConfig {
            population: 60,
            elites: 10,
            smoothing: 0.3,
            iterations: 8,
            bounds: bounds.clone(),
        };
        // Rippled bowl: multimodal enough to exercise best-ever tracking.
        let rippled = |samples: &[Array2<f64>]| {
            samples
                .iter()
                .map(|s| s.iter().map(|&u| u * u + (5.0 * u).sin()).sum())
                .collect::<Vec<_>>()
        };
        let dist = SequenceDistribution::boxed_init(2, &bounds).unwrap();
        let mut rng_a = seeding::stream(7, "cem-test", 0);
        let a = optimize(rippled, &dist, &cfg, &mut rng_a).unwrap();
        for w in a.stats.windows(2) {
            assert!(w[1].best_cost <= w[0].best_cost);
        }
        let mut rng_b = seeding::stream(7, "cem-test", 0);
        let b = optimize(rippled, &dist, &cfg, &mut rng_b).unwrap();
        assert_eq!(a.best_sequence, b.best_sequence);
        assert_eq!(a.best_cost, b.best_cost);
    }

    #[test]
    fn nonfinite_costs_are_counted_not_fatal() {
        let bounds = unit_bounds(1, 0.0, 10.0);
        let cfg = CemConfig {
            population: 10,
            elites: 2,
            smoothing: 0.5,
            iterations: 2,
            bounds: bounds.clone(),
        };
        let dist = SequenceDistribution::boxed_init(1, &bounds).unwrap();
        let mut rng = seeding::stream(8, "cem-test", 0);
        let res = optimize(
            |samples| {
                samples
                    .iter()
                    .enumerate()
                    .map(|(i, s)| if i % 2 == 0 { f64::NAN } else { s[(0, 0)] })
                    .collect()
            },
            &dist,
            &cfg,
            &mut rng,
        )
        .unwrap();
        assert_eq!(res.nonfinite_total, 10);
        assert!(res.best_cost.is_finite());
    }

    #[test]
    fn refit_shrinks_cost_a_hundredfold_on_convex_quadratics() {
        let bounds = unit_bounds(1, 0.0, 10.0);
        let cfg = CemConfig { smoothing: 0.7, ..CemConfig::with_bounds(bounds.clone()) };
        let mut failures = 0;
        for seed in 0..20 {
            let dist = SequenceDistribution::boxed_init(3, &bounds).unwrap();
            let mut rng = seeding::stream(seed, "cem-shrink", 0);
            let mut first_iter_best = None;
            let res = optimize(
                |samples| {
                    let costs: Vec<f64> = samples
                        .iter()
                        .map(|s| s.iter().map(|&u| (u - 3.0) * (u - 3.0)).sum())
                        .collect();
                    costs
                },
                &dist,
                &cfg,
                &mut rng,
            )
            .unwrap();
            first_iter_best.get_or_insert(res.stats[0].best_cost);
            if res.best_cost > 0.01 * first_iter_best.unwrap() {
                failures += 1;
            }
        }
        assert!(failures <= 1, "{failures} of 20 seeds failed the 1% shrink bound");
    }

    #[test]
    fn config_and_distribution_validation_reject_nonsense() {
        let bounds = unit_bounds(1, 0.0, 1.0);
        let mut cfg = CemConfig::with_bounds(bounds.clone());
        cfg.elites = 0;
        assert!(cfg.validate().is_err());
        cfg.elites = 400;
        assert!(cfg.validate().is_err());
        let mut cfg = CemConfig::with_bounds(vec![Bound::new(1.0, 0.0)]);
        cfg.population = 10;
        cfg.elites = 2;
        assert!(cfg.validate().is_err());

        let mut dist = SequenceDistribution::boxed_init(2, &bounds).unwrap();
        dist.mean.fill(5.0); // outside [0, 1]
        assert!(dist.validate().is_err());
        let mut dist = SequenceDistribution::boxed_init(2, &bounds).unwrap();
        dist.var.fill(-1.0);
        assert!(dist.validate().is_err());
    }
}
