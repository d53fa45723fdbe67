//! Feed-forward Gaussian regressor with smooth log-variance saturation.
//!
//! Input is a normalized 15-vector (state 6, stiffness 3, force 3, reference
//! 3); output parameterizes a diagonal Gaussian over the normalized state
//! delta. Raw log-variances are squashed into learnable soft bounds so the
//! predicted variance can neither collapse nor explode.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const STATE_DIM: usize = 6;
pub const ACTION_DIM: usize = 9;
pub const INPUT_DIM: usize = STATE_DIM + ACTION_DIM;
/// Six means plus six raw log-variances.
pub const OUTPUT_DIM: usize = 2 * STATE_DIM;

/// Weight on the (Σ max_logvar − Σ min_logvar) drift penalty in the loss.
pub const LOGVAR_BOUND_WEIGHT: f64 = 0.01;

pub const DEFAULT_LOGVAR_MAX: f64 = 0.5;
pub const DEFAULT_LOGVAR_MIN: f64 = -10.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub hidden_width: usize,
    pub hidden_layers: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { hidden_width: 256, hidden_layers: 3 }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// (fan_in, fan_out); rows multiply from the left: y = x·w + b.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilisticNet {
    pub layers: Vec<Layer>,
    pub max_logvar: Array1<f64>,
    pub min_logvar: Array1<f64>,
}

/// Mean and soft-clamped log-variance, both in normalized units.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrediction {
    pub mean: Array2<f64>,
    pub logvar: Array2<f64>,
}

/// Per-tensor gradients matching a net's layout.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub w: Vec<Array2<f64>>,
    pub b: Vec<Array1<f64>>,
    pub max_logvar: Array1<f64>,
    pub min_logvar: Array1<f64>,
}

struct ForwardCache {
    /// Pre-activations per hidden layer.
    zs: Vec<Array2<f64>>,
    /// Layer inputs: x, h1, .., h_last.
    acts: Vec<Array2<f64>>,
    mean: Array2<f64>,
    raw_logvar: Array2<f64>,
    /// Upper-clamped stage, before the lower clamp.
    lv1: Array2<f64>,
    logvar: Array2<f64>,
}

impl ProbabilisticNet {
    /// Hidden layers get uniform ±1/√fan_in weights; the output layer starts
    /// at zero so a fresh net predicts a zero mean everywhere.
    pub fn init(cfg: &NetConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut dims = vec![INPUT_DIM];
        dims.extend(std::iter::repeat(cfg.hidden_width).take(cfg.hidden_layers));
        dims.push(OUTPUT_DIM);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for k in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[k], dims[k + 1]);
            let last = k == dims.len() - 2;
            let a = 1.0 / (fan_in as f64).sqrt();
            let w = Array2::from_shape_fn((fan_in, fan_out), |_| {
                if last {
                    0.0
                } else {
                    rng.random_range(-a..=a)
                }
            });
            layers.push(Layer { w, b: Array1::zeros(fan_out) });
        }
        Self {
            layers,
            max_logvar: Array1::from_elem(STATE_DIM, DEFAULT_LOGVAR_MAX),
            min_logvar: Array1::from_elem(STATE_DIM, DEFAULT_LOGVAR_MIN),
        }
    }

    fn forward_cached(&self, x: &Array2<f64>) -> ForwardCache {
        let n_hidden = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(n_hidden + 1);
        let mut zs = Vec::with_capacity(n_hidden);
        acts.push(x.clone());
        for layer in &self.layers[..n_hidden] {
            let z = acts.last().unwrap().dot(&layer.w) + &layer.b;
            acts.push(z.mapv(silu));
            zs.push(z);
        }
        let out_layer = &self.layers[n_hidden];
        let out = acts.last().unwrap().dot(&out_layer.w) + &out_layer.b;
        let n = out.nrows();
        let mean = out.slice(ndarray::s![.., 0..STATE_DIM]).to_owned();
        let raw_logvar = out.slice(ndarray::s![.., STATE_DIM..OUTPUT_DIM]).to_owned();
        let mut lv1 = Array2::zeros((n, STATE_DIM));
        let mut logvar = Array2::zeros((n, STATE_DIM));
        for i in 0..n {
            for j in 0..STATE_DIM {
                let upper = self.max_logvar[j] - softplus(self.max_logvar[j] - raw_logvar[(i, j)]);
                lv1[(i, j)] = upper;
                logvar[(i, j)] = self.min_logvar[j] + softplus(upper - self.min_logvar[j]);
            }
        }
        ForwardCache { zs, acts, mean, raw_logvar, lv1, logvar }
    }

    /// Predict on normalized inputs. Deterministic; logvar inside the bounds.
    pub fn forward(&self, x: &Array2<f64>) -> GaussianPrediction {
        let cache = self.forward_cached(x);
        GaussianPrediction { mean: cache.mean, logvar: cache.logvar }
    }

    /// Mean per-sample NLL over the batch plus the bound drift penalty.
    pub fn batch_loss(&self, x: &Array2<f64>, targets: &Array2<f64>) -> f64 {
        let cache = self.forward_cached(x);
        let n = x.nrows() as f64;
        let mut core = 0.0;
        for i in 0..x.nrows() {
            for j in 0..STATE_DIM {
                let d = targets[(i, j)] - cache.mean[(i, j)];
                let lv = cache.logvar[(i, j)];
                core += 0.5 * (d * d * (-lv).exp() + lv);
            }
        }
        core / n + logvar_bound_penalty(&self.max_logvar, &self.min_logvar)
    }

    /// Loss and analytic gradients for one batch of normalized samples.
    pub fn batch_gradients(&self, x: &Array2<f64>, targets: &Array2<f64>) -> (f64, Gradients) {
        let cache = self.forward_cached(x);
        let n_rows = x.nrows();
        let n = n_rows as f64;
        let n_hidden = self.layers.len() - 1;

        let mut core = 0.0;
        let mut d_mean = Array2::<f64>::zeros((n_rows, STATE_DIM));
        let mut d_logvar = Array2::<f64>::zeros((n_rows, STATE_DIM));
        for i in 0..n_rows {
            for j in 0..STATE_DIM {
                let d = targets[(i, j)] - cache.mean[(i, j)];
                let lv = cache.logvar[(i, j)];
                let inv_var = (-lv).exp();
                core += 0.5 * (d * d * inv_var + lv);
                d_mean[(i, j)] = -d * inv_var / n;
                d_logvar[(i, j)] = 0.5 * (1.0 - d * d * inv_var) / n;
            }
        }
        let loss = core / n + logvar_bound_penalty(&self.max_logvar, &self.min_logvar);

        // Through the two soft clamps: logvar = min + sp(lv1 − min),
        // lv1 = max − sp(max − raw).
        let mut d_raw = Array2::<f64>::zeros((n_rows, STATE_DIM));
        let mut d_max = Array1::<f64>::from_elem(STATE_DIM, LOGVAR_BOUND_WEIGHT);
        let mut d_min = Array1::<f64>::from_elem(STATE_DIM, -LOGVAR_BOUND_WEIGHT);
        for i in 0..n_rows {
            for j in 0..STATE_DIM {
                let s_min = sigmoid(cache.lv1[(i, j)] - self.min_logvar[j]);
                let s_max = sigmoid(self.max_logvar[j] - cache.raw_logvar[(i, j)]);
                let g = d_logvar[(i, j)];
                d_raw[(i, j)] = g * s_min * s_max;
                d_max[j] += g * s_min * (1.0 - s_max);
                d_min[j] += g * (1.0 - s_min);
            }
        }

        let mut d_out = Array2::<f64>::zeros((n_rows, OUTPUT_DIM));
        d_out.slice_mut(ndarray::s![.., 0..STATE_DIM]).assign(&d_mean);
        d_out.slice_mut(ndarray::s![.., STATE_DIM..OUTPUT_DIM]).assign(&d_raw);

        let mut gw = vec![Array2::zeros((0, 0)); self.layers.len()];
        let mut gb = vec![Array1::zeros(0); self.layers.len()];
        let mut delta = d_out;
        for k in (0..self.layers.len()).rev() {
            gw[k] = cache.acts[k].t().dot(&delta);
            gb[k] = delta.sum_axis(Axis(0));
            if k > 0 {
                let upstream = delta.dot(&self.layers[k].w.t());
                delta = &upstream * &cache.zs[k - 1].mapv(silu_prime);
            }
        }
        let _ = n_hidden;
        (loss, Gradients { w: gw, b: gb, max_logvar: d_max, min_logvar: d_min })
    }
}

/// Per-sample NLL core: Σ_i [ (t_i − m_i)²·e^(−lv_i) + lv_i ] / 2.
pub fn nll_core(mean: &Array1<f64>, logvar: &Array1<f64>, target: &Array1<f64>) -> f64 {
    let mut acc = 0.0;
    for j in 0..mean.len() {
        let d = target[j] - mean[j];
        acc += 0.5 * (d * d * (-logvar[j]).exp() + logvar[j]);
    }
    acc
}

/// Regularizer keeping the learnable bounds from drifting apart.
pub fn logvar_bound_penalty(max_logvar: &Array1<f64>, min_logvar: &Array1<f64>) -> f64 {
    LOGVAR_BOUND_WEIGHT * (max_logvar.sum() - min_logvar.sum())
}

/// Per-sample loss as optimized in training: core NLL plus bound penalty.
pub fn nll_with_bounds(
    mean: &Array1<f64>,
    logvar: &Array1<f64>,
    target: &Array1<f64>,
    max_logvar: &Array1<f64>,
    min_logvar: &Array1<f64>,
) -> f64 {
    nll_core(mean, logvar, target) + logvar_bound_penalty(max_logvar, min_logvar)
}

/// Result of comparing analytic gradients against central differences.
#[derive(Clone, Copy, Debug)]
pub struct GradientCheckReport {
    pub probes: usize,
    pub max_relative_error: f64,
}

/// Compare analytic gradients with central finite differences on randomly
/// chosen parameters of a randomly initialized net. Returns the worst
/// relative error; healthy implementations stay below 1e-4 with step 1e-5.
pub fn finite_difference_check(
    cfg: &NetConfig,
    batch: usize,
    probes_per_tensor: usize,
    step: f64,
    rng: &mut ChaCha8Rng,
) -> GradientCheckReport {
    let mut net = ProbabilisticNet::init(cfg, rng);
    // Give the output layer nonzero weights so its gradients are generic.
    let k_out = net.layers.len() - 1;
    let a = 1.0 / (net.layers[k_out].w.nrows() as f64).sqrt();
    net.layers[k_out].w.mapv_inplace(|_| rng.random_range(-a..=a));
    net.layers[k_out].b.mapv_inplace(|_| rng.random_range(-0.1..=0.1));

    let x = Array2::from_shape_fn((batch, INPUT_DIM), |_| rng.random_range(-2.0..=2.0));
    let t = Array2::from_shape_fn((batch, STATE_DIM), |_| rng.random_range(-2.0..=2.0));
    let (_, grads) = net.batch_gradients(&x, &t);

    let mut probes = 0;
    let mut worst: f64 = 0.0;
    let mut check = |analytic: f64, numeric: f64| {
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic - numeric).abs() / denom);
        probes += 1;
    };

    for k in 0..net.layers.len() {
        let (rows, cols) = net.layers[k].w.dim();
        for _ in 0..probes_per_tensor {
            let (i, j) = (rng.random_range(0..rows), rng.random_range(0..cols));
            let orig = net.layers[k].w[(i, j)];
            net.layers[k].w[(i, j)] = orig + step;
            let up = net.batch_loss(&x, &t);
            net.layers[k].w[(i, j)] = orig - step;
            let down = net.batch_loss(&x, &t);
            net.layers[k].w[(i, j)] = orig;
            check(grads.w[k][(i, j)], (up - down) / (2.0 * step));
        }
        let blen = net.layers[k].b.len();
        for _ in 0..probes_per_tensor {
            let i = rng.random_range(0..blen);
            let orig = net.layers[k].b[i];
            net.layers[k].b[i] = orig + step;
            let up = net.batch_loss(&x, &t);
            net.layers[k].b[i] = orig - step;
            let down = net.batch_loss(&x, &t);
            net.layers[k].b[i] = orig;
            check(grads.b[k][i], (up - down) / (2.0 * step));
        }
    }
    for j in 0..STATE_DIM {
        let orig = net.max_logvar[j];
        net.max_logvar[j] = orig + step;
        let up = net.batch_loss(&x, &t);
        net.max_logvar[j] = orig - step;
        let down = net.batch_loss(&x, &t);
        net.max_logvar[j] = orig;
        check(grads.max_logvar[j], (up - down) / (2.0 * step));

        let orig = net.min_logvar[j];
        net.min_logvar[j] = orig + step;
        let up = net.batch_loss(&x, &t);
        net.min_logvar[j] = orig - step;
        let down = net.batch_loss(&x, &t);
        net.min_logvar[j] = orig;
        check(grads.min_logvar[j], (up - down) / (2.0 * step));
    }
    GradientCheckReport { probes, max_relative_error: worst }
}
