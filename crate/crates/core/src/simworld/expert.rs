use alloc::vec::Vec;

use crate::domain::{Position, RngStream};
use crate::math;

use super::{pd_step, AgentState, Episode, HumanMode, WorldState};

/// What the robot does after probing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Completion {
    /// Completes once the human has committed to yielding or has passed.
    Contingent,
    /// Completes once the human commits either way, yielding or not (risky).
    Always,
    /// Waits for the human to pass even if it yields (conservative).
    Never,
}

/// Decision-tree branch of the data-generating expert.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Branch {
    pub enter: bool,
    pub complete: Completion,
}

impl Branch {
    pub const EXPERT: Branch = Branch { enter: true, complete: Completion::Contingent };
    pub const RISKY: Branch = Branch { enter: true, complete: Completion::Always };
    pub const HOLD_OUTSIDE: Branch = Branch { enter: false, complete: Completion::Never };

    /// `P(enter) = 0.6`; given entry, contingent / always / never with
    /// probabilities 0.5 / 0.25 / 0.25.
    pub fn sample(rng: &mut RngStream) -> Branch {
        let enter = rng.bernoulli(0.6);
        let u = rng.uniform();
        let complete = if u < 0.5 {
            Completion::Contingent
        } else if u < 0.75 {
            Completion::Always
        } else {
            Completion::Never
        };
        Branch { enter, complete }
    }
}

/// Tolerance for having arrived at a hold point, meters.
const ARRIVED: f64 = 0.3;
/// Braking lookahead for path speed caps, meters.
const LOOKAHEAD: f64 = 15.0;

/// Standstill gap and time headway for following a vehicle ahead.
pub(super) const FOLLOW_GAP: f64 = 6.0;
pub(super) const FOLLOW_HEADWAY: f64 = 1.0;

/// Speed limit for following `lead` when it drives ahead along `path` in
/// the same direction, `None` otherwise.
pub(super) fn follow_limit(path: &super::Path, s: f64, lead: &AgentState, lane_width: f64) -> Option<f64> {
    let sl = path.project(lead.position);
    let lateral = lead.position.distance(&path.point_at(sl));
    let aligned = lead.velocity.dot(&path.heading_at(sl)) > 0.5 * lead.speed();
    (sl > s && lateral < 0.5 * lane_width + 0.5 && aligned).then(|| ((sl - s - FOLLOW_GAP) / FOLLOW_HEADWAY).max(0.0))
}

/// Target one step ahead along the route: accelerate toward the speed cap
/// while keeping a gap to a vehicle ahead, or brake to rest at `hold` when
/// given.
fn route_target(episode: &Episode, robot: &AgentState, lead: Option<&AgentState>, hold: Option<f64>) -> Position {
    let c = &episode.config;
    let s = c.robot_path.project(robot.position);
    let mut v = c.robot_path.braking_cap(s, LOOKAHEAD, c.expert_decel).min(robot.speed() + c.expert_accel * c.dt);
    if let Some(limit) = lead.and_then(|l| follow_limit(&c.robot_path, s, l, c.lane_width)) {
        v = v.min(limit);
    }
    if let Some(h) = hold {
        let d = (h - s).max(0.0);
        v = v.min(math::sqrt(2.0 * c.expert_decel * d)).min(d / c.dt);
    }
    c.robot_path.point_at(s + v.max(0.0) * c.dt)
}

/// Scripted robot for one decision-tree branch. Approaches the hold point
/// (outside the entry zone, or the probe point when entering) and completes
/// the maneuver when the branch's condition holds.
pub fn suboptimal_expert(state: &WorldState, branch: Branch, episode: &Episode) -> Position {
    let c = &episode.config;
    let s = episode.robot_progress(state);
    let cleared = episode.human_cleared(state);
    let go = match (branch.enter, branch.complete) {
        (false, _) => cleared,
        (true, Completion::Contingent) => cleared || state.human_mode != HumanMode::Cruising,
        (true, Completion::Always) => {
            let committed = c.human_stop - episode.human_progress(state) <= c.risky_commit;
            s >= c.robot_probe - ARRIVED && (cleared || committed || state.human_mode != HumanMode::Cruising)
        }
        (true, Completion::Never) => cleared,
    };
    let hold = if branch.enter { c.robot_probe } else { c.robot_hold_outside };
    route_target(episode, &state.robot, Some(&state.human), if go { None } else { Some(hold) })
}

/// Open-loop robot paths along the route for the next `steps` steps: go
/// now, or hold at the next hold point (outside, then probe) for `k` steps
/// before going, for every `k` in `1..=steps`.
pub fn robot_candidates(state: &WorldState, episode: &Episode, steps: usize) -> Vec<Vec<Position>> {
    let c = &episode.config;
    let s = episode.robot_progress(state);
    let mut holds = Vec::new();
    if s <= c.robot_hold_outside + ARRIVED {
        holds.push(c.robot_hold_outside);
    }
    if s <= c.robot_probe + ARRIVED {
        holds.push(c.robot_probe);
    }
    let mut out = Vec::with_capacity(1 + holds.len() * steps);
    out.push(open_loop(state, episode, None, 0, steps));
    for &h in &holds {
        for k in 1..=steps {
            out.push(open_loop(state, episode, Some(h), k, steps));
        }
    }
    out
}

fn open_loop(state: &WorldState, episode: &Episode, hold: Option<f64>, hold_steps: usize, steps: usize) -> Vec<Position> {
    let c = &episode.config;
    let mut robot = state.robot;
    let mut path = Vec::with_capacity(steps);
    for i in 0..steps {
        let h = if i < hold_steps { hold } else { None };
        let target = route_target(episode, &robot, None, h);
        robot = pd_step(&robot, target, &c.gains, c.dt);
        path.push(robot.position);
    }
    path
}
