use alloc::vec::Vec;

use super::objective::{constraint_term, destination_term};
use super::{PlanConfig, PlanError};
use crate::domain::{Goal, JointState, JointTrajectory, Observation, Position, RngStream};
use crate::flow::{FlowModel, ZSequence};

#[derive(Debug, Clone, PartialEq)]
pub struct UnderconfidentPlan {
    /// Index of the chosen candidate.
    pub index: usize,
    pub path: Vec<Position>,
    /// Mean destination + constraint score of every candidate.
    pub scores: Vec<f64>,
    /// Human forecasts the candidates were scored against.
    pub forecasts: Vec<JointTrajectory>,
}

/// Scores open-loop robot paths against human forecasts in which the
/// robot's own noise is drawn from the prior, i.e. humans that do not react
/// to the plan being scored. Returns the best candidate, lowest index on
/// ties.
pub fn plan_underconfident(
    model: &FlowModel,
    obs: &Observation,
    goal: &Goal,
    candidates: &[Vec<Position>],
    config: &PlanConfig,
) -> Result<UnderconfidentPlan, PlanError> {
    config.validate()?;
    if candidates.is_empty() {
        return Err(PlanError::NoCandidates);
    }
    let tt = model.horizon();
    if let Some(bad) = candidates.iter().find(|c| c.len() != tt) {
        return Err(PlanError::Config(alloc::format!("candidate has {} steps, expected {tt}", bad.len())));
    }
    let mut rng = RngStream::new(config.seed).fork("underconfident-forecast");
    let zs: Vec<ZSequence> = (0..config.mc_samples).map(|_| ZSequence::sample(tt, model.agents(), &mut rng)).collect();
    let (forecasts, _) = model.rollout_batch(obs, &zs)?;

    let mut scores = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let mut total = 0.0;
        for f in &forecasts {
            let steps: Vec<JointState> = f
                .steps()
                .iter()
                .zip(cand)
                .map(|(s, &r)| {
                    let mut p = s.positions().to_vec();
                    p[0] = r;
                    JointState::from_raw(p)
                })
                .collect();
            let joint = JointTrajectory::from_raw(steps);
            total += destination_term(goal, &joint, config.goal_sigma) + constraint_term(goal, &joint, config.constraint_weight);
        }
        scores.push(total / forecasts.len() as f64);
    }
    let mut index = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[index] {
            index = i;
        }
    }
    Ok(UnderconfidentPlan { index, path: candidates[index].clone(), scores, forecasts })
}
