//! Conditional autoregressive affine flow over joint multi-agent futures.
//!
//! Each agent `a` has its own conditioner network. At step `t` it reads the
//! `K` most recent joint positions (expressed relative to agent `a`'s
//! current position), agent `a`'s position relative to the scene anchor
//! and the scenario context, and emits a displacement `d` and per-axis
//! `log sigma`. The position is then `x = (x_prev + d) + sigma * z` with
//! `z ~ N(0, I)`. Agents at the same step only see steps `< t`, so the
//! joint density factors over `(t, a)` and is exact.

mod rollout;
mod train;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::diffkit::{Matrix, Mlp};
use crate::domain::{JointState, Observation, Position, RngStream};
use crate::math;

pub use rollout::{BoundFlow, TapeRollout, ZSequence};
pub use train::{train, EpochStats, TrainConfig, TrainReport};

pub const LOG_SIGMA_MIN: f64 = -4.0;
pub const LOG_SIGMA_MAX: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FlowError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch}: {what} is not finite")]
    Diverged { epoch: usize, what: &'static str },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Diff(#[from] crate::diffkit::DiffError),
}

/// Fixed sizes of a flow model.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowHyper {
    /// Observed past length `H_p`.
    pub past_len: usize,
    /// Future horizon `T`.
    pub horizon: usize,
    /// Agent count `A` (robot first).
    pub agents: usize,
    /// Context width `C`.
    pub context_dim: usize,
    /// Window `K` of recent joint positions fed to the conditioners.
    pub window: usize,
    /// Hidden layer widths.
    pub hidden: Vec<usize>,
    /// Simulation step in seconds; informational.
    pub dt: f64,
}

impl FlowHyper {
    pub fn new(past_len: usize, horizon: usize, agents: usize, context_dim: usize) -> Self {
        FlowHyper { past_len, horizon, agents, context_dim, window: 4, hidden: vec![64, 64], dt: 0.4 }
    }

    /// `2 A K` relative window entries, 2 anchor-relative entries, context.
    pub fn input_width(&self) -> usize {
        2 * self.agents * self.window + 2 + self.context_dim
    }
}

/// Output of one conditioner evaluation: the affine parameters of
/// `x = mu + sigma * z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionerOutput {
    pub mu: Position,
    pub log_sigma: [f64; 2],
}

impl ConditionerOutput {
    pub fn sigma(&self) -> [f64; 2] {
        [math::exp(self.log_sigma[0]), math::exp(self.log_sigma[1])]
    }
}

/// `x = mu + sigma * z`.
pub fn transform(phi: &ConditionerOutput, z: [f64; 2]) -> Position {
    let s = phi.sigma();
    Position::new(phi.mu.x + s[0] * z[0], phi.mu.y + s[1] * z[1])
}

/// `z = (x - mu) / sigma`.
pub fn inverse_transform(phi: &ConditionerOutput, x: Position) -> [f64; 2] {
    let s = phi.sigma();
    [(x.x - phi.mu.x) / s[0], (x.y - phi.mu.y) / s[1]]
}

/// Per-agent input standardization and output displacement scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub displacement_scale: [f64; 2],
}

impl Normalizer {
    pub fn identity(width: usize) -> Self {
        Normalizer { input_shift: vec![0.0; width], input_scale: vec![1.0; width], displacement_scale: [1.0, 1.0] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    hyper: FlowHyper,
    conditioners: Vec<Mlp>,
    normalizers: Vec<Normalizer>,
}

/// Named flat arrays plus the hyperparameter block of a [`FlowModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub hyper: FlowHyper,
    pub arrays: Vec<NamedArray>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl FlowModel {
    /// Glorot-initialized conditioners, identity normalization.
    pub fn new(hyper: FlowHyper, rng: &mut RngStream) -> Self {
        let d = hyper.input_width();
        let mut sizes = vec![d];
        sizes.extend_from_slice(&hyper.hidden);
        sizes.push(4);
        let conditioners = (0..hyper.agents)
            .map(|a| {
                let mut r = rng.fork_index(a as u64);
                Mlp::glorot(&sizes, &mut r)
            })
            .collect();
        let normalizers = (0..hyper.agents).map(|_| Normalizer::identity(d)).collect();
        FlowModel { hyper, conditioners, normalizers }
    }

    /// Model whose output layers are zero: every agent's `mu` is its
    /// previous position and `sigma = 1`.
    pub fn zeroed(hyper: FlowHyper, rng: &mut RngStream) -> Self {
        let mut m = FlowModel::new(hyper, rng);
        for c in &mut m.conditioners {
            c.zero_output_layer();
        }
        m
    }

    pub fn hyper(&self) -> &FlowHyper {
        &self.hyper
    }

    pub fn horizon(&self) -> usize {
        self.hyper.horizon
    }

    pub fn agents(&self) -> usize {
        self.hyper.agents
    }

    pub fn conditioner_net(&self, agent: usize) -> &Mlp {
        &self.conditioners[agent]
    }

    pub fn normalizer(&self, agent: usize) -> &Normalizer {
        &self.normalizers[agent]
    }

    pub fn set_normalizer(&mut self, agent: usize, n: Normalizer) {
        assert_eq!(n.input_shift.len(), self.hyper.input_width());
        self.normalizers[agent] = n;
    }

    pub fn num_params(&self) -> usize {
        self.conditioners.iter().map(Mlp::num_params).sum()
    }

    /// Conditioner weights of all agents, concatenated in agent order.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for c in &self.conditioners {
            out.extend(c.to_flat());
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flow parameter length");
        let mut k = 0;
        for c in &mut self.conditioners {
            let n = c.num_params();
            c.set_flat(&flat[k..k + n]);
            k += n;
        }
    }

    /// Writes the normalized conditioner input for `agent` into `out`.
    /// `window` holds the `K` most recent joint states, oldest first.
    pub(crate) fn features_into(&self, agent: usize, window: &[&[Position]], anchor: Position, context: &[f64], out: &mut [f64]) {
        let cur = window[window.len() - 1][agent];
        let mut k = 0;
        for state in window {
            for p in state.iter() {
                out[k] = p.x - cur.x;
                out[k + 1] = p.y - cur.y;
                k += 2;
            }
        }
        out[k] = cur.x - anchor.x;
        out[k + 1] = cur.y - anchor.y;
        k += 2;
        out[k..k + context.len()].copy_from_slice(context);
        let n = &self.normalizers[agent];
        for (i, v) in out.iter_mut().enumerate() {
            *v = (*v - n.input_shift[i]) / n.input_scale[i];
        }
    }

    /// Maps a raw network output row to affine parameters.
    pub(crate) fn head(&self, agent: usize, prev: Position, raw: &[f64]) -> ConditionerOutput {
        let s = self.normalizers[agent].displacement_scale;
        ConditionerOutput {
            mu: Position::new(prev.x + s[0] * raw[0], prev.y + s[1] * raw[1]),
            log_sigma: [raw[2].clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX), raw[3].clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX)],
        }
    }

    /// The `K`-window ending at the latest entry of `seq`; when `seq` is
    /// shorter than `K` the oldest entry is repeated.
    pub(crate) fn window_of<'s>(&self, seq: &'s [Vec<Position>]) -> Vec<&'s [Position]> {
        let k = self.hyper.window;
        let n = seq.len();
        (0..k).map(|i| {
            let back = k - 1 - i;
            let idx = n.saturating_sub(1 + back);
            seq[idx].as_slice()
        }).collect()
    }

    /// Affine parameters of `agent` at the step following `prefix`
    /// (`prefix` holds already realized future states `x_1..x_{t-1}`).
    pub fn conditioner(&self, agent: usize, observation: &Observation, prefix: &[JointState]) -> Result<ConditionerOutput, FlowError> {
        if !prefix.iter().all(JointState::is_finite) {
            return Err(FlowError::NonFinite("conditioner history"));
        }
        let seq = joint_sequence(observation, prefix);
        let window = self.window_of(&seq);
        let mut row = vec![0.0; self.hyper.input_width()];
        self.features_into(agent, &window, observation.anchor(), observation.context(), &mut row);
        let out = self.conditioners[agent].forward(&Matrix::row_vector(row));
        Ok(self.head(agent, window[window.len() - 1][agent], out.as_slice()))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut arrays = Vec::new();
        for (a, (c, n)) in self.conditioners.iter().zip(&self.normalizers).enumerate() {
            let prefix = alloc::format!("agent{a}.");
            for (name, rows, cols, data) in c.named_arrays(&prefix) {
                arrays.push(NamedArray { name, rows, cols, data });
            }
            let w = n.input_shift.len();
            arrays.push(NamedArray { name: alloc::format!("{prefix}input_shift"), rows: 1, cols: w, data: n.input_shift.clone() });
            arrays.push(NamedArray { name: alloc::format!("{prefix}input_scale"), rows: 1, cols: w, data: n.input_scale.clone() });
            arrays.push(NamedArray {
                name: alloc::format!("{prefix}displacement_scale"),
                rows: 1,
                cols: 2,
                data: n.displacement_scale.to_vec(),
            });
        }
        Checkpoint { hyper: self.hyper.clone(), arrays }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, FlowError> {
        let hyper = ck.hyper.clone();
        let d = hyper.input_width();
        let mut sizes = vec![d];
        sizes.extend_from_slice(&hyper.hidden);
        sizes.push(4);
        let find = |name: &str, rows: usize, cols: usize| -> Result<Vec<f64>, FlowError> {
            let arr = ck
                .arrays
                .iter()
                .find(|a| a.name == name)
                .ok_or_else(|| FlowError::Checkpoint(alloc::format!("missing array {name}")))?;
            if arr.rows != rows || arr.cols != cols || arr.data.len() != rows * cols {
                return Err(FlowError::Checkpoint(alloc::format!(
                    "array {name} has shape {}x{}, expected {rows}x{cols}",
                    arr.rows, arr.cols
                )));
            }
            if arr.data.iter().any(|v| !v.is_finite()) {
                return Err(FlowError::Checkpoint(alloc::format!("array {name} has non-finite entries")));
            }
            Ok(arr.data.clone())
        };
        let mut conditioners = Vec::new();
        let mut normalizers = Vec::new();
        for a in 0..hyper.agents {
            let mut layers = Vec::new();
            for (i, w) in sizes.windows(2).enumerate() {
                let weight = Matrix::from_vec(w[0], w[1], find(&alloc::format!("agent{a}.layer{i}.weight"), w[0], w[1])?);
                let bias = Matrix::from_vec(1, w[1], find(&alloc::format!("agent{a}.layer{i}.bias"), 1, w[1])?);
                layers.push(crate::diffkit::Dense { weight, bias });
            }
            conditioners.push(Mlp::from_layers(layers)?);
            let ds = find(&alloc::format!("agent{a}.displacement_scale"), 1, 2)?;
            let scale = find(&alloc::format!("agent{a}.input_scale"), 1, d)?;
            if scale.iter().chain(&ds).any(|&s| s <= 0.0) {
                return Err(FlowError::Checkpoint(alloc::format!("agent{a} has non-positive scales")));
            }
            normalizers.push(Normalizer {
                input_shift: find(&alloc::format!("agent{a}.input_shift"), 1, d)?,
                input_scale: scale,
                displacement_scale: [ds[0], ds[1]],
            });
        }
        Ok(FlowModel { hyper, conditioners, normalizers })
    }
}

/// Observed past followed by `prefix`, as per-step position lists.
pub(crate) fn joint_sequence(observation: &Observation, prefix: &[JointState]) -> Vec<Vec<Position>> {
    observation
        .past()
        .iter()
        .chain(prefix)
        .map(|s| s.positions().to_vec())
        .collect()
}

#[cfg(test)]
mod tests;
