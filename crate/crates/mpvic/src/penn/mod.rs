//! Probabilistic ensemble dynamics model.
//!
//! B sibling networks predict diagonal Gaussians over the next-state delta.
//! Spread across member means measures what the model has not learned yet;
//! per-member variance measures noise it believes is irreducible. A round of
//! training refits shared normalizers and trains each member on its own
//! bootstrap resample.

pub mod dataset;
pub mod net;
pub mod normalizer;
pub mod propagate;
pub mod train;

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{Dataset, DatasetError, Transition, TRANSITION_COLUMNS};
pub use net::{
    finite_difference_check, nll_core, nll_with_bounds, GaussianPrediction, GradientCheckReport,
    NetConfig, ProbabilisticNet, ACTION_DIM, INPUT_DIM, STATE_DIM,
};
pub use normalizer::Normalizer;
pub use propagate::{rollout_mean, rollout_population, trajectory_sampling, MeanRollout};
pub use train::{EpochStat, TrainConfig, TrainError, TrainReport};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Error, Debug)]
pub enum ModelError {
    #[error("model has no normalizers yet; train at least one round")]
    NotTrained,
    #[error("member {member} out of range ({members} members)")]
    BadMember { member: usize, members: usize },
    #[error("need at least two members, have {0}")]
    NeedTwoMembers(usize),
    #[error("shape mismatch: {0}")]
    BadShape(String),
    #[error("inference failed: {0}")]
    Inference(String),
    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Normalizers {
    pub input: Normalizer,
    pub delta: Normalizer,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    pub members: usize,
    pub net: NetConfig,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { members: 5, net: NetConfig::default() }
    }
}

/// Any model exposing per-member Gaussians over the next state, in physical
/// units. Implemented by the learned ensemble and by analytic stand-ins.
pub trait DynamicsModel {
    fn member_count(&self) -> usize;

    /// Predict next-state mean and variance for one member. `states` is
    /// (n,6), `actions` is (n,9) laid out [stiffness, force, reference].
    fn predict_member(
        &self,
        member: usize,
        states: &Array2<f64>,
        actions: &Array2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>), ModelError>;
}

#[derive(Clone, Debug)]
pub struct EnsembleModel {
    pub(crate) cfg: EnsembleConfig,
    pub(crate) nets: Vec<ProbabilisticNet>,
    pub(crate) normalizers: Option<Normalizers>,
}

impl EnsembleModel {
    pub fn new(cfg: EnsembleConfig) -> Result<Self, ModelError> {
        if cfg.members < 2 {
            return Err(ModelError::NeedTwoMembers(cfg.members));
        }
        let nets = (0..cfg.members)
            .map(|m| {
                let mut rng = crate::seeding::stream(0, "model-init", m as u64);
                ProbabilisticNet::init(&cfg.net, &mut rng)
            })
            .collect();
        Ok(Self { cfg, nets, normalizers: None })
    }

    pub fn config(&self) -> &EnsembleConfig {
        &self.cfg
    }

    pub fn is_trained(&self) -> bool {
        self.normalizers.is_some()
    }

    pub fn member_count(&self) -> usize {
        self.nets.len()
    }

    pub fn normalizers(&self) -> Option<&Normalizers> {
        self.normalizers.as_ref()
    }

    /// One training round; see [`train::train_round`].
    pub fn train_round(
        &mut self,
        data: &Dataset,
        cfg: &TrainConfig,
        seed: u64,
        round: u64,
    ) -> Result<TrainReport, TrainError> {
        train::train_round(self, data, cfg, seed, round)
    }

    /// Epistemic spread at one query point; see [`predict_uncertainty`].
    pub fn predict_uncertainty(
        &self,
        state: &[f64; STATE_DIM],
        action: &[f64; ACTION_DIM],
    ) -> Result<f64, ModelError> {
        predict_uncertainty(self, state, action)
    }

    fn stack_inputs(
        states: &Array2<f64>,
        actions: &Array2<f64>,
    ) -> Result<Array2<f64>, ModelError> {
        if states.ncols() != STATE_DIM || actions.ncols() != ACTION_DIM {
            return Err(ModelError::BadShape(format!(
                "states (n,{}) and actions (n,{}) required, got (n,{}) and (n,{})",
                STATE_DIM,
                ACTION_DIM,
                states.ncols(),
                actions.ncols()
            )));
        }
        if states.nrows() != actions.nrows() {
            return Err(ModelError::BadShape(format!(
                "row mismatch: {} states vs {} actions",
                states.nrows(),
                actions.nrows()
            )));
        }
        let n = states.nrows();
        let mut x = Array2::zeros((n, INPUT_DIM));
        x.slice_mut(ndarray::s![.., 0..STATE_DIM]).assign(states);
        x.slice_mut(ndarray::s![.., STATE_DIM..INPUT_DIM]).assign(actions);
        Ok(x)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint, ModelError> {
        let norms = self.normalizers.as_ref().ok_or(ModelError::NotTrained)?;
        Ok(Checkpoint {
            version: CHECKPOINT_VERSION,
            members: self.cfg.members,
            hidden_width: self.cfg.net.hidden_width,
            hidden_layers: self.cfg.net.hidden_layers,
            input_mean: norms.input.mean.to_vec(),
            input_std: norms.input.std.to_vec(),
            delta_mean: norms.delta.mean.to_vec(),
            delta_std: norms.delta.std.to_vec(),
            nets: self
                .nets
                .iter()
                .map(|n| MemberCheckpoint {
                    layers: n
                        .layers
                        .iter()
                        .map(|l| LayerCheckpoint {
                            rows: l.w.nrows(),
                            cols: l.w.ncols(),
                            w: l.w.iter().copied().collect(),
                            b: l.b.to_vec(),
                        })
                        .collect(),
                    max_logvar: n.max_logvar.to_vec(),
                    min_logvar: n.min_logvar.to_vec(),
                })
                .collect(),
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        ck.validate()?;
        let cfg = EnsembleConfig {
            members: ck.members,
            net: NetConfig { hidden_width: ck.hidden_width, hidden_layers: ck.hidden_layers },
        };
        let mut nets = Vec::with_capacity(ck.members);
        for m in &ck.nets {
            let mut layers = Vec::with_capacity(m.layers.len());
            for l in &m.layers {
                let w = Array2::from_shape_vec((l.rows, l.cols), l.w.clone())
                    .map_err(|e| ModelError::Checkpoint(format!("weight shape: {e}")))?;
                layers.push(net::Layer { w, b: Array1::from_vec(l.b.clone()) });
            }
            nets.push(ProbabilisticNet {
                layers,
                max_logvar: Array1::from_vec(m.max_logvar.clone()),
                min_logvar: Array1::from_vec(m.min_logvar.clone()),
            });
        }
        Ok(Self {
            cfg,
            nets,
            normalizers: Some(Normalizers {
                input: Normalizer {
                    mean: Array1::from_vec(ck.input_mean.clone()),
                    std: Array1::from_vec(ck.input_std.clone()),
                },
                delta: Normalizer {
                    mean: Array1::from_vec(ck.delta_mean.clone()),
                    std: Array1::from_vec(ck.delta_std.clone()),
                },
            }),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let ck = self.to_checkpoint()?;
        let json = serde_json::to_string(&ck)
            .map_err(|e| ModelError::Checkpoint(format!("serialize: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let json = std::fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&json)
            .map_err(|e| ModelError::Checkpoint(format!("parse: {e}")))?;
        Self::from_checkpoint(&ck)
    }
}

impl DynamicsModel for EnsembleModel {
    fn member_count(&self) -> usize {
        self.nets.len()
    }

    fn predict_member(
        &self,
        member: usize,
        states: &Array2<f64>,
        actions: &Array2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>), ModelError> {
        let norms = self.normalizers.as_ref().ok_or(ModelError::NotTrained)?;
        if member >= self.nets.len() {
            return Err(ModelError::BadMember { member, members: self.nets.len() });
        }
        let x = Self::stack_inputs(states, actions)?;
        let xn = norms.input.normalize(&x);
        let pred = self.nets[member].forward(&xn);
        let delta = norms.delta.denormalize(&pred.mean);
        let next = states + &delta;
        let var = norms.delta.denormalize_variance(&pred.logvar.mapv(f64::exp));
        Ok((next, var))
    }
}

/// Row-wise epistemic spread: the unbiased across-member variance of the
/// member mean predictions, summed over state dimensions. Deviations are
/// taken against member 0, so bit-identical members give exactly zero.
pub fn ensemble_variance_rows(member_means: &[Array2<f64>]) -> Result<Array1<f64>, ModelError> {
    let b = member_means.len();
    if b < 2 {
        return Err(ModelError::NeedTwoMembers(b));
    }
    let dim = member_means[0].dim();
    for m in member_means {
        if m.dim() != dim {
            return Err(ModelError::BadShape("member mean shapes differ".into()));
        }
    }
    let (n, d) = dim;
    let mut rho = Array1::zeros(n);
    let mut dev = vec![0.0; b * d];
    for r in 0..n {
        for (k, m) in member_means.iter().enumerate() {
            for j in 0..d {
                dev[k * d + j] = m[(r, j)] - member_means[0][(r, j)];
            }
        }
        let mut acc = 0.0;
        for j in 0..d {
            let mut mean_dev = 0.0;
            for k in 0..b {
                mean_dev += dev[k * d + j];
            }
            mean_dev /= b as f64;
            for k in 0..b {
                let e = dev[k * d + j] - mean_dev;
                acc += e * e;
            }
        }
        rho[r] = acc / (b - 1) as f64;
    }
    Ok(rho)
}

/// Epistemic spread ρ at one (state, action) query.
pub fn predict_uncertainty<M: DynamicsModel + ?Sized>(
    model: &M,
    state: &[f64; STATE_DIM],
    action: &[f64; ACTION_DIM],
) -> Result<f64, ModelError> {
    let b = model.member_count();
    if b < 2 {
        return Err(ModelError::NeedTwoMembers(b));
    }
    let s = Array2::from_shape_vec((1, STATE_DIM), state.to_vec()).unwrap();
    let a = Array2::from_shape_vec((1, ACTION_DIM), action.to_vec()).unwrap();
    let mut means = Vec::with_capacity(b);
    for m in 0..b {
        means.push(model.predict_member(m, &s, &a)?.0);
    }
    Ok(ensemble_variance_rows(&means)?[0])
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerCheckpoint {
    pub rows: usize,
    pub cols: usize,
    /// Row-major weight entries, rows×cols of them.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MemberCheckpoint {
    pub layers: Vec<LayerCheckpoint>,
    pub max_logvar: Vec<f64>,
    pub min_logvar: Vec<f64>,
}

/// Versioned weight file: shared normalizer statistics plus per-member layer
/// weights and learned log-variance bounds. Serialized as JSON.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub members: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub delta_mean: Vec<f64>,
    pub delta_std: Vec<f64>,
    pub nets: Vec<MemberCheckpoint>,
}

impl Checkpoint {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "version {} unsupported (want {})",
                self.version, CHECKPOINT_VERSION
            )));
        }
        if self.members < 2 || self.nets.len() != self.members {
            return Err(ModelError::Checkpoint(format!(
                "{} member blocks for {} members",
                self.nets.len(),
                self.members
            )));
        }
        if self.input_mean.len() != INPUT_DIM
            || self.input_std.len() != INPUT_DIM
            || self.delta_mean.len() != STATE_DIM
            || self.delta_std.len() != STATE_DIM
        {
            return Err(ModelError::Checkpoint("normalizer lengths wrong".into()));
        }
        let mut dims = vec![INPUT_DIM];
        dims.extend(std::iter::repeat(self.hidden_width).take(self.hidden_layers));
        dims.push(net::OUTPUT_DIM);
        for (mi, m) in self.nets.iter().enumerate() {
            if m.layers.len() != dims.len() - 1 {
                return Err(ModelError::Checkpoint(format!(
                    "member {mi}: {} layers, want {}",
                    m.layers.len(),
                    dims.len() - 1
                )));
            }
            for (k, l) in m.layers.iter().enumerate() {
                if l.rows != dims[k]
                    || l.cols != dims[k + 1]
                    || l.w.len() != l.rows * l.cols
                    || l.b.len() != l.cols
                {
                    return Err(ModelError::Checkpoint(format!(
                        "member {mi} layer {k}: bad shape"
                    )));
                }
            }
            if m.max_logvar.len() != STATE_DIM || m.min_logvar.len() != STATE_DIM {
                return Err(ModelError::Checkpoint(format!("member {mi}: bad logvar bounds")));
            }
        }
        Ok(())
    }
}
