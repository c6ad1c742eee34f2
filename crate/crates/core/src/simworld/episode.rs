use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::domain::{Intention, JointState, Observation, Position, RngStream};
use crate::flow::{FlowModel, ZSequence};
use crate::planner::{plan_cfo_from, plan_joint_from, plan_underconfident, PlanConfig, PlanError};

use super::{min_separation, robot_candidates, simulate_expert, suboptimal_expert, Branch, Episode, ScenarioConfig, WorldState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlannerKind {
    /// Contingent planning (co-leader).
    Cfo,
    /// Overconfident joint planning.
    Joint,
    /// Open-loop candidates against robot-independent forecasts.
    Underconfident,
    /// The scripted expert on a fixed branch.
    Expert(Branch),
    Stationary,
}

impl PlannerKind {
    pub fn needs_model(self) -> bool {
        matches!(self, PlannerKind::Cfo | PlannerKind::Joint | PlannerKind::Underconfident)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PlannerKind::Cfo => "cfo",
            PlannerKind::Joint => "joint",
            PlannerKind::Underconfident => "underconfident",
            PlannerKind::Expert(b) if b == Branch::EXPERT => "expert",
            PlannerKind::Expert(b) if b == Branch::RISKY => "risky",
            PlannerKind::Expert(_) => "scripted",
            PlannerKind::Stationary => "stationary",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "cfo" => PlannerKind::Cfo,
            "joint" => PlannerKind::Joint,
            "underconfident" => PlannerKind::Underconfident,
            "expert" => PlannerKind::Expert(Branch::EXPERT),
            "risky" => PlannerKind::Expert(Branch::RISKY),
            "stationary" => PlannerKind::Stationary,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    /// Planner settings for the first plan of an episode.
    pub plan: PlanConfig,
    /// Ascent steps for warm-started replans.
    pub replan_steps: usize,
}

/// Closed-loop destination width. With `goal_sigma = 1` the destination
/// pull outweighs the separation penalty and the robot cuts in front of
/// the human.
pub const EVAL_GOAL_SIGMA: f64 = 2.0;

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { plan: PlanConfig { goal_sigma: EVAL_GOAL_SIGMA, ..PlanConfig::default() }, replan_steps: 30 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub reached_goal: bool,
    pub near_expert: bool,
    pub near_collision: bool,
    pub steps_to_goal: Option<usize>,
    pub min_distance: f64,
    /// Oracle expert steps on the same episode (`T*`).
    pub expert_steps: Option<usize>,
    pub intention: Intention,
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub metrics: EpisodeMetrics,
    pub states: Vec<WorldState>,
    /// `(step, spread)` for every contingent plan: the largest distance
    /// between robot positions at future step 4 across human samples.
    pub divergence: Vec<(usize, f64)>,
}

/// Goal step, separation and near-expert flag of a state log (up to the
/// goal step when the goal was reached).
pub fn metrics_from_log(episode: &Episode, states: &[WorldState], expert_steps: Option<usize>, diagnostic: Option<String>) -> EpisodeMetrics {
    let c = &episode.config;
    let steps_to_goal = states.iter().position(|s| c.goal_region.contains(s.robot.position));
    let upto = steps_to_goal.map_or(states.len(), |k| k + 1);
    let min_distance = min_separation(&states[..upto]);
    let near_collision = min_distance < c.d_safe;
    let reached_goal = steps_to_goal.is_some() && diagnostic.is_none();
    let near_expert = reached_goal
        && !near_collision
        && match (steps_to_goal, expert_steps) {
            (Some(k), Some(e)) => k <= e + c.slack_steps,
            _ => false,
        };
    EpisodeMetrics {
        reached_goal,
        near_expert,
        near_collision,
        steps_to_goal,
        min_distance,
        expert_steps,
        intention: episode.intention,
        diagnostic,
    }
}

/// `T*`: steps the contingent expert needs on this episode.
pub fn expert_time(episode: &Episode) -> Option<usize> {
    let states = simulate_expert(episode, Branch::EXPERT);
    states.iter().position(|s| episode.config.goal_region.contains(s.robot.position))
}

fn shifted(z: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out: Vec<[f64; 2]> = z[1..].to_vec();
    out.push([0.0; 2]);
    out
}

fn shifted_all(z: &ZSequence) -> ZSequence {
    let (tt, na) = (z.horizon(), z.agents());
    let mut out = ZSequence::zeros(tt, na);
    for t in 1..tt {
        for a in 0..na {
            out.set(t - 1, a, z.get(t, a));
        }
    }
    out
}

fn spread(points: &[Position]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.max(a.distance(b));
        }
    }
    best
}

enum Warm {
    None,
    Robot(Vec<[f64; 2]>),
    Joint(ZSequence),
}

/// Closed loop: observe, plan over the model horizon, track the first
/// planned robot position for one step, repeat until the robot is inside
/// the goal region or the horizon runs out.
pub fn run_episode(kind: PlannerKind, model: Option<&FlowModel>, config: &ScenarioConfig, seed: u64, options: &EvalOptions) -> EpisodeOutcome {
    let episode = Episode::sample(config, seed);
    let expert_steps = expert_time(&episode);
    let c = &episode.config;
    let goal = c.goal();
    let context = episode.context();
    let plan_seeds = RngStream::new(seed).fork("plan");

    let mut state = episode.initial_state();
    let mut states = alloc::vec![state];
    let mut log: Vec<JointState> = episode.pre_history();
    log.push(state.joint());
    let mut divergence = Vec::new();
    let mut diagnostic = None;
    let mut warm = Warm::None;

    for k in 0..c.horizon_steps {
        if c.goal_region.contains(state.robot.position) {
            break;
        }
        let obs = Observation::new(log[log.len() - c.past_len..].to_vec(), context.clone()).expect("finite log");
        let mut plan = options.plan.clone();
        plan.seed = plan_seeds.fork_index(k as u64).next_u64();
        if k > 0 {
            plan.ascent_steps = options.replan_steps;
        }
        let target: Result<Position, PlanError> = match (kind, model) {
            (PlannerKind::Stationary, _) => Ok(state.robot.position),
            (PlannerKind::Expert(b), _) => Ok(suboptimal_expert(&state, b, &episode)),
            (_, None) => Err(PlanError::Config("learned planner needs a model".to_string())),
            (PlannerKind::Cfo, Some(m)) => {
                let init = match &warm {
                    Warm::Robot(z) => shifted(z),
                    _ => alloc::vec![[0.0; 2]; m.horizon()],
                };
                plan_cfo_from(m, &obs, &goal, &plan, &init).and_then(|p| {
                    let rolls = p.rollouts(m, &obs)?;
                    let t4 = 3.min(m.horizon() - 1);
                    let pts: Vec<Position> = rolls.iter().map(|r| r.step(t4).robot()).collect();
                    divergence.push((k, spread(&pts)));
                    let first = rolls[0].step(0).robot();
                    warm = Warm::Robot(p.zr);
                    Ok(first)
                })
            }
            (PlannerKind::Joint, Some(m)) => {
                let init = match &warm {
                    Warm::Joint(z) => shifted_all(z),
                    _ => ZSequence::zeros(m.horizon(), m.agents()),
                };
                plan_joint_from(m, &obs, &goal, &plan, &init).and_then(|p| {
                    let r = m.rollout(&obs, &p.z)?;
                    warm = Warm::Joint(p.z);
                    Ok(r.step(0).robot())
                })
            }
            (PlannerKind::Underconfident, Some(m)) => {
                let cands = robot_candidates(&state, &episode, m.horizon());
                plan_underconfident(m, &obs, &goal, &cands, &plan).map(|p| p.path[0])
            }
        };
        let target = match target {
            Ok(t) if t.is_finite() => t,
            Ok(_) => {
                diagnostic = Some(alloc::format!("step {k}: non-finite target"));
                break;
            }
            Err(e) => {
                diagnostic = Some(alloc::format!("step {k}: {e}"));
                break;
            }
        };
        state = episode.advance(&state, target);
        states.push(state);
        log.push(state.joint());
    }
    let metrics = metrics_from_log(&episode, &states, expert_steps, diagnostic);
    EpisodeOutcome { metrics, states, divergence }
}
