use crate::domain::{Intention, Position};
use crate::math;

use super::expert::follow_limit;
use super::{Episode, HumanMode, WorldState};

/// The human's next tracking target and its mode after this step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HumanCommand {
    pub target: Position,
    pub mode: HumanMode,
}

/// Scripted human. Drives its lane at nominal speed; a `Yield` human that
/// sees the robot inside the entry zone while it can still stop comfortably
/// brakes at a steady rate to a stop short of the conflict zone. It resumes once the robot has
/// left the conflict zone or after `patience_steps` at rest, then keeps a
/// gap to the robot if it drives ahead in the same lane.
///
/// Deterministic in the state and episode.
pub fn human_policy(state: &WorldState, episode: &Episode) -> HumanCommand {
    let c = &episode.config;
    let s = episode.human_progress(state);
    let v = state.human.speed();
    let to_stop = c.human_stop - s;

    let mut mode = state.human_mode;
    if mode == HumanMode::Cruising && state.intention == Intention::Yield && c.entry_zone.contains(state.robot.position) {
        let braking = v * v / (2.0 * c.human_max_brake);
        if to_stop >= braking && to_stop <= c.decision_distance {
            let decel = (v * v / (2.0 * to_stop.max(1e-6))).clamp(c.human_yield_decel, c.human_max_brake);
            mode = HumanMode::Yielding { decel, stopped_steps: 0 };
        }
    }
    if let HumanMode::Yielding { decel, stopped_steps } = mode {
        let stopped_steps = if v < 0.1 { stopped_steps + 1 } else { stopped_steps };
        mode = if episode.robot_progress(state) >= c.robot_clear || stopped_steps >= c.patience_steps {
            HumanMode::Resumed
        } else {
            HumanMode::Yielding { decel, stopped_steps }
        };
    }

    let v_des = match mode {
        HumanMode::Yielding { decel, .. } => {
            let d = to_stop.max(0.0);
            (v - decel * c.dt).max(0.0).min(math::sqrt(2.0 * c.human_max_brake * d)).min(d / c.dt)
        }
        HumanMode::Resumed => {
            let v = episode.human_speed.min(v + c.human_resume_accel * c.dt);
            follow_limit(&c.human_path, s, &state.robot, c.lane_width).map_or(v, |l| v.min(l))
        }
        HumanMode::Cruising => episode.human_speed.min(v + c.human_resume_accel * c.dt),
    };
    HumanCommand { target: c.human_path.point_at(s + v_des * c.dt), mode }
}
