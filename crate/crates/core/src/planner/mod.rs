//! Planning in the flow's base-noise space.
//!
//! A robot plan is the robot's noise slice `zr` (`T x 2`). Rolled out
//! through the flow, a fixed `zr` is a closed-loop policy: the robot's
//! step-`t` position depends on the humans' realized positions before `t`.
//!
//! - [`plan_cfo`]: contingent planning, ascent on the sample average over
//!   human noise of log-density + destination + constraint terms.
//! - [`plan_joint`]: overconfident; optimizes robot and human noise jointly
//!   as if the robot controlled everyone.
//! - [`plan_underconfident`]: picks an open-loop robot path from a
//!   candidate set, scored against human forecasts that ignore the robot.

mod objective;
mod underconfident;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::diffkit::{Adam, DiffError, Matrix, Tape, Var};
use crate::domain::{Goal, JointTrajectory, Observation, RngStream};
use crate::flow::{FlowError, FlowModel, ZSequence};

pub use objective::{constraint_term, destination_term, lower_bound_gap, LowerBound};
pub use underconfident::{plan_underconfident, UnderconfidentPlan};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("non-finite objective at ascent step {step}")]
    NonFiniteObjective { step: usize },
    #[error("candidate set is empty")]
    NoCandidates,
    #[error("invalid plan config: {0}")]
    Config(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanConfig {
    /// Number of human noise draws in the sample average.
    pub mc_samples: usize,
    pub ascent_steps: usize,
    pub step_size: f64,
    /// Weight of the squared-hinge constraint penalty.
    pub constraint_weight: f64,
    /// Standard deviation of the destination Gaussian.
    pub goal_sigma: f64,
    pub seed: u64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig { mc_samples: 32, ascent_steps: 150, step_size: 0.05, constraint_weight: 100.0, goal_sigma: 1.0, seed: 0 }
    }
}

impl PlanConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        if self.mc_samples == 0 {
            return Err(PlanError::Config("mc_samples must be >= 1".into()));
        }
        if !(self.step_size > 0.0) {
            return Err(PlanError::Config("step_size must be > 0".into()));
        }
        if !(self.constraint_weight > 0.0) || !(self.goal_sigma > 0.0) {
            return Err(PlanError::Config("constraint_weight and goal_sigma must be > 0".into()));
        }
        Ok(())
    }
}

/// A contingent robot plan: robot noise plus the optimization record.
#[derive(Debug, Clone, PartialEq)]
pub struct ContingencyPlan {
    pub zr: Vec<[f64; 2]>,
    /// Objective at every evaluated iterate, in order.
    pub objective_history: Vec<f64>,
    /// Objective of the returned (best) iterate.
    pub objective: f64,
    /// Human noise sample set the objective averaged over.
    pub zh_samples: Vec<ZSequence>,
}

impl ContingencyPlan {
    /// Joint futures of the plan under each stored human sample.
    pub fn rollouts(&self, model: &FlowModel, obs: &Observation) -> Result<Vec<JointTrajectory>, PlanError> {
        let zs: Vec<ZSequence> = self
            .zh_samples
            .iter()
            .map(|zh| {
                let mut z = zh.clone();
                z.set_agent(0, &self.zr);
                z
            })
            .collect();
        Ok(model.rollout_batch(obs, &zs)?.0)
    }
}

/// Fixed human noise set for one planning call (common random numbers).
pub fn draw_human_samples(model: &FlowModel, config: &PlanConfig) -> Vec<ZSequence> {
    let mut rng = RngStream::new(config.seed).fork("planner-zh");
    (0..config.mc_samples)
        .map(|_| {
            let mut z = ZSequence::sample(model.horizon(), model.agents(), &mut rng);
            z.set_agent(0, &vec![[0.0; 2]; model.horizon()]);
            z
        })
        .collect()
}

/// Deterministic joint future for given robot and human noise.
pub fn rollout(model: &FlowModel, obs: &Observation, zr: &[[f64; 2]], zh: &ZSequence) -> Result<JointTrajectory, PlanError> {
    let mut z = zh.clone();
    z.set_agent(0, zr);
    Ok(model.rollout(obs, &z)?)
}

fn zr_to_row(zr: &[[f64; 2]]) -> Matrix {
    Matrix::row_vector(zr.iter().flat_map(|z| z.iter().copied()).collect())
}

fn row_to_zr(row: &[f64]) -> Vec<[f64; 2]> {
    row.chunks(2).map(|c| [c[0], c[1]]).collect()
}

/// Builds the robot noise grid on `tape` from a `1 x 2T` row node,
/// broadcast over `b` samples, and the human slices from constants.
fn noise_grid(tape: &mut Tape, zr_row: Var, zh: &[ZSequence], horizon: usize, agents: usize) -> Result<Vec<Vec<Var>>, PlanError> {
    let b = zh.len();
    let mut grid = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let mut row = Vec::with_capacity(agents);
        let zt = tape.slice_cols(zr_row, 2 * t, 2)?;
        row.push(tape.broadcast_rows(zt, b)?);
        for a in 1..agents {
            let data: Vec<f64> = zh.iter().flat_map(|z| z.get(t, a)).collect();
            row.push(tape.constant(Matrix::from_vec(b, 2, data)));
        }
        grid.push(row);
    }
    Ok(grid)
}

/// The contingent objective and its gradient with respect to `zr`.
pub fn cfo_objective_and_grad(
    model: &FlowModel,
    obs: &Observation,
    goal: &Goal,
    zr: &[[f64; 2]],
    zh_samples: &[ZSequence],
    config: &PlanConfig,
) -> Result<(f64, Vec<f64>), PlanError> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let zr_var = tape.leaf(zr_to_row(zr));
    let grid = noise_grid(&mut tape, zr_var, zh_samples, model.horizon(), model.agents())?;
    let roll = model.rollout_tape(&mut tape, &bound, obs, &grid)?;
    let per_sample = objective::per_sample_tape(&mut tape, &roll, goal, config)?;
    let obj = tape.mean(per_sample);
    let value = tape.value(obj).item();
    if !value.is_finite() {
        return Err(PlanError::NonFiniteObjective { step: 0 });
    }
    tape.backward(obj)?;
    let grad = tape.grad(zr_var).map(|g| g.as_slice().to_vec()).unwrap_or_else(|| vec![0.0; 2 * zr.len()]);
    Ok((value, grad))
}

/// Mean over `zh_samples` of `log q + log N(x_T^r; g, sigma_g^2 I) +
/// constraint term`.
pub fn cfo_objective(
    model: &FlowModel,
    obs: &Observation,
    goal: &Goal,
    zr: &[[f64; 2]],
    zh_samples: &[ZSequence],
    config: &PlanConfig,
) -> Result<f64, PlanError> {
    let terms = objective::per_sample_plain(model, obs, goal, zr, zh_samples, config)?;
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// Gradient ascent with Adam from `init`, keeping the best iterate.
fn ascend<F>(init: Vec<f64>, config: &PlanConfig, mut eval: F) -> Result<(Vec<f64>, Vec<f64>, f64), PlanError>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>), PlanError>,
{
    let mut x = init;
    let mut opt = Adam::new(x.len(), config.step_size);
    let mut history = Vec::with_capacity(config.ascent_steps + 1);
    let mut best = (f64::NEG_INFINITY, x.clone());
    for step in 0..=config.ascent_steps {
        let (value, grad) = eval(&x).map_err(|e| match e {
            PlanError::NonFiniteObjective { .. } => PlanError::NonFiniteObjective { step },
            other => other,
        })?;
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(PlanError::NonFiniteObjective { step });
        }
        history.push(value);
        if value > best.0 {
            best = (value, x.clone());
        }
        if step == config.ascent_steps {
            break;
        }
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        opt.step(&mut x, &neg);
    }
    Ok((best.1, history, best.0))
}

/// Contingent planning from `zr = 0`.
pub fn plan_cfo(model: &FlowModel, obs: &Observation, goal: &Goal, config: &PlanConfig) -> Result<ContingencyPlan, PlanError> {
    plan_cfo_from(model, obs, goal, config, &vec![[0.0; 2]; model.horizon()])
}

/// Contingent planning from a given initial `zr` (used for warm-started
/// receding-horizon replanning).
pub fn plan_cfo_from(
    model: &FlowModel,
    obs: &Observation,
    goal: &Goal,
    config: &PlanConfig,
    init: &[[f64; 2]],
) -> Result<ContingencyPlan, PlanError> {
    config.validate()?;
    if init.len() != model.horizon() {
        return Err(PlanError::Config(alloc::format!("initial zr has {} steps, expected {}", init.len(), model.horizon())));
    }
    let zh = draw_human_samples(model, config);
    let (best, history, objective) = ascend(zr_to_row(init).into_vec(), config, |x| {
        cfo_objective_and_grad(model, obs, goal, &row_to_zr(x), &zh, config)
    })?;
    Ok(ContingencyPlan { zr: row_to_zr(&best), objective_history: history, objective, zh_samples: zh })
}

/// Result of overconfident planning: robot and human noise chosen jointly.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPlan {
    pub z: ZSequence,
    pub objective_history: Vec<f64>,
    pub objective: f64,
}

impl JointPlan {
    pub fn zr(&self) -> Vec<[f64; 2]> {
        self.z.agent(0)
    }
}

/// Joint objective (single deterministic rollout) and its gradient with
/// respect to every agent's noise, flattened `t`-major then agent.
pub fn joint_objective_and_grad(
    model: &FlowModel,
    obs: &Observation,
    goal: &Goal,
    z: &ZSequence,
    config: &PlanConfig,
) -> Result<(f64, Vec<f64>), PlanError> {
    let (tt, na) = (model.horizon(), model.agents());
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let flat: Vec<f64> = (0..tt).flat_map(|t| (0..na).flat_map(move |a| z.get(t, a))).collect();
    let zv = tape.leaf(Matrix::row_vector(flat));
    let mut grid = Vec::with_capacity(tt);
    for t in 0..tt {
        let mut row = Vec::with_capacity(na);
        for a in 0..na {
            row.push(tape.slice_cols(zv, 2 * (t * na + a), 2)?);
        }
        grid.push(row);
    }
    let roll = model.rollout_tape(&mut tape, &bound, obs, &grid)?;
    let per = objective::per_sample_tape(&mut tape, &roll, goal, config)?;
    let obj = tape.sum(per);
    let value = tape.value(obj).item();
    if !value.is_finite() {
        return Err(PlanError::NonFiniteObjective { step: 0 });
    }
    tape.backward(obj)?;
    let grad = tape.grad(zv).map(|g| g.as_slice().to_vec()).unwrap_or_else(|| vec![0.0; 2 * tt * na]);
    Ok((value, grad))
}

/// Overconfident planning: ascent on the joint objective over all agents'
/// noise from zero, no expectation over humans.
pub fn plan_joint(model: &FlowModel, obs: &Observation, goal: &Goal, config: &PlanConfig) -> Result<JointPlan, PlanError> {
    plan_joint_from(model, obs, goal, config, &ZSequence::zeros(model.horizon(), model.agents()))
}

pub fn plan_joint_from(
    model: &FlowModel,
    obs: &Observation,
    goal: &Goal,
    config: &PlanConfig,
    init: &ZSequence,
) -> Result<JointPlan, PlanError> {
    config.validate()?;
    let (tt, na) = (model.horizon(), model.agents());
    let flat: Vec<f64> = (0..tt).flat_map(|t| (0..na).flat_map(move |a| init.get(t, a))).collect();
    let unflatten = |x: &[f64]| {
        let mut z = ZSequence::zeros(tt, na);
        for t in 0..tt {
            for a in 0..na {
                let k = 2 * (t * na + a);
                z.set(t, a, [x[k], x[k + 1]]);
            }
        }
        z
    };
    let (best, history, objective) = ascend(flat, config, |x| joint_objective_and_grad(model, obs, goal, &unflatten(x), config))?;
    Ok(JointPlan { z: unflatten(&best), objective_history: history, objective })
}

#[cfg(test)]
mod tests;
