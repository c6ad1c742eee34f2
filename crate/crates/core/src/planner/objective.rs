use alloc::vec::Vec;

use super::{PlanConfig, PlanError};
use crate::diffkit::{Matrix, Tape, Var};
use crate::domain::{signed_distance, Constraint, Goal, JointTrajectory, Observation, Position, Region};
use crate::flow::{FlowModel, TapeRollout, ZSequence};
use crate::math;

/// `log N(x_T^r; g, sigma^2 I)` for the robot's final position.
pub fn destination_term(goal: &Goal, traj: &JointTrajectory, sigma: f64) -> f64 {
    let x = traj.step(traj.len() - 1).robot();
    let d = x - goal.destination;
    -0.5 * d.dot(&d) / (sigma * sigma) - 2.0 * math::ln(sigma) - math::LN_2PI
}

fn sq(x: f64) -> f64 {
    x * x
}

/// Penalty contribution of one constraint at one step: `max(0, sd)^2`.
fn violation(c: &Constraint, positions: &[Position]) -> f64 {
    match c {
        Constraint::Region(r) => sq(signed_distance(r, positions[0]).max(0.0)),
        Constraint::Separation { min_distance } => positions[1..]
            .iter()
            .map(|h| sq((min_distance - positions[0].distance(h)).max(0.0)))
            .sum(),
    }
}

/// `-lambda * sum max(0, signed_distance)^2` over every step and
/// constraint; 0 when everything is feasible. Region constraints apply to
/// the robot, separation to every robot-human pair.
pub fn constraint_term(goal: &Goal, traj: &JointTrajectory, lambda: f64) -> f64 {
    let mut total = 0.0;
    for s in traj.steps() {
        for c in &goal.constraints {
            total += violation(c, s.positions());
        }
    }
    -lambda * total
}

pub(crate) fn per_sample_plain(
    model: &FlowModel,
    obs: &Observation,
    goal: &Goal,
    zr: &[[f64; 2]],
    zh_samples: &[ZSequence],
    config: &PlanConfig,
) -> Result<Vec<f64>, PlanError> {
    if zh_samples.is_empty() {
        return Err(PlanError::Config("human sample set is empty".into()));
    }
    let zs: Vec<ZSequence> = zh_samples
        .iter()
        .map(|zh| {
            let mut z = zh.clone();
            z.set_agent(0, zr);
            z
        })
        .collect();
    let (trajs, logps) = model.rollout_batch(obs, &zs)?;
    Ok(trajs
        .iter()
        .zip(logps)
        .map(|(tr, lp)| lp + destination_term(goal, tr, config.goal_sigma) + constraint_term(goal, tr, config.constraint_weight))
        .collect())
}

/// `max(0, sd)^2` per row for a robot-region constraint.
fn region_violation_sq(tape: &mut Tape, region: &Region, p: Var) -> Result<Var, PlanError> {
    let b = tape.shape(p).0;
    Ok(match *region {
        Region::HalfPlane { normal, offset } => {
            let n = tape.constant(Matrix::row_vector([normal.x, normal.y].to_vec()));
            let proj = tape.mul_row(p, n)?;
            let proj = tape.sum_cols(proj);
            let sd = tape.scale(proj, -1.0);
            let sd = tape.add_scalar(sd, offset);
            let h = tape.relu(sd);
            tape.square(h)
        }
        Region::Box { bounds, feasible_inside } => {
            let c = bounds.center();
            let he = bounds.half_extent();
            let cv = tape.constant(Matrix::from_vec(b, 2, [c.x, c.y].repeat(b)));
            let d = tape.sub(p, cv)?;
            let d = tape.abs(d);
            let shift = tape.constant(Matrix::row_vector([-he.x, -he.y].to_vec()));
            let q = tape.add_row(d, shift)?;
            if feasible_inside {
                // Outside distance squared: |max(q, 0)|^2.
                let h = tape.relu(q);
                let h = tape.square(h);
                tape.sum_cols(h)
            } else {
                // Inside depth: min(-qx, -qy) clipped at 0, squared.
                let nq = tape.scale(q, -1.0);
                let nq = tape.relu(nq);
                let a = tape.slice_cols(nq, 0, 1)?;
                let bb = tape.slice_cols(nq, 1, 1)?;
                let s = tape.add(a, bb)?;
                let dlt = tape.sub(a, bb)?;
                let dlt = tape.abs(dlt);
                let m = tape.sub(s, dlt)?;
                let m = tape.scale(m, 0.5);
                tape.square(m)
            }
        }
    })
}

fn separation_violation_sq(tape: &mut Tape, min_distance: f64, r: Var, h: Var) -> Result<Var, PlanError> {
    let d = tape.sub(r, h)?;
    let d = tape.square(d);
    let d = tape.sum_cols(d);
    let d = tape.add_scalar(d, 1e-9);
    let d = tape.sqrt(d);
    let gap = tape.scale(d, -1.0);
    let gap = tape.add_scalar(gap, min_distance);
    let gap = tape.relu(gap);
    Ok(tape.square(gap))
}

/// Per-sample objective rows (`B x 1`) for a tape rollout.
pub(crate) fn per_sample_tape(tape: &mut Tape, roll: &TapeRollout, goal: &Goal, config: &PlanConfig) -> Result<Var, PlanError> {
    let tt = roll.positions.len();
    let xr_final = roll.positions[tt - 1][0];
    let b = tape.shape(xr_final).0;
    let g = tape.constant(Matrix::from_vec(b, 2, [goal.destination.x, goal.destination.y].repeat(b)));
    let ls = tape.constant(Matrix::filled(b, 2, math::ln(config.goal_sigma)));
    let dest = tape.gaussian_logpdf(xr_final, g, ls)?;
    let dest = tape.sum_cols(dest);
    let mut total = tape.add(roll.log_prob, dest)?;

    let mut penalty: Option<Var> = None;
    for step in &roll.positions {
        for c in &goal.constraints {
            let terms: Vec<Var> = match c {
                Constraint::Region(r) => alloc::vec![region_violation_sq(tape, r, step[0])?],
                Constraint::Separation { min_distance } => step[1..]
                    .iter()
                    .map(|&h| separation_violation_sq(tape, *min_distance, step[0], h))
                    .collect::<Result<_, _>>()?,
            };
            for v in terms {
                penalty = Some(match penalty {
                    None => v,
                    Some(acc) => tape.add(acc, v)?,
                });
            }
        }
    }
    if let Some(p) = penalty {
        let p = tape.scale(p, -config.constraint_weight);
        total = tape.add(total, p)?;
    }
    Ok(total)
}

/// The sample-average objective (mean of logs) next to the log of the
/// sample mean of the per-sample densities, on the same samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowerBound {
    pub mean_of_log: f64,
    pub log_of_mean: f64,
}

impl LowerBound {
    /// `log_of_mean - mean_of_log`, non-negative by Jensen.
    pub fn gap(&self) -> f64 {
        self.log_of_mean - self.mean_of_log
    }
}

pub fn lower_bound_gap(
    model: &FlowModel,
    obs: &Observation,
    goal: &Goal,
    zr: &[[f64; 2]],
    zh_samples: &[ZSequence],
    config: &PlanConfig,
) -> Result<LowerBound, PlanError> {
    let terms = per_sample_plain(model, obs, goal, zr, zh_samples, config)?;
    let n = terms.len() as f64;
    Ok(LowerBound {
        mean_of_log: terms.iter().sum::<f64>() / n,
        log_of_mean: math::log_sum_exp(&terms) - math::ln(n),
    })
}
