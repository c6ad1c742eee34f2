//! A two-agent point-mass driving world.
//!
//! Three scenarios share one structure: the robot follows a fixed route that
//! crosses (or merges into) the human's lane. The robot may first probe by
//! stopping inside an entry zone; a human with the `Yield` intention who sees
//! the probe in time stops before the conflict zone and waits, otherwise the
//! human drives through at nominal speed.
//!
//! Scenario geometry is stored in a local frame around the scene center;
//! every episode translates it by a sampled offset.

mod dataset;
mod episode;
mod expert;
mod human;
mod path;

use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI};

use crate::domain::{Aabb, Constraint, Goal, Intention, JointState, Position, Region, RngStream, ScenarioId};
use crate::math;

pub use dataset::{classify_leaf, generate_dataset, generate_dataset_windows, simulate_expert, Leaf};
pub use episode::{expert_time, metrics_from_log, run_episode, EpisodeMetrics, EpisodeOutcome, EvalOptions, PlannerKind};
pub use expert::{robot_candidates, suboptimal_expert, Branch, Completion};
pub use human::{human_policy, HumanCommand};
pub use path::{Path, PathBuilder};

/// Context vector length: one-hot scenario (3), scene center (2), initial
/// human speed, lane width, one zero pad.
pub const CONTEXT_DIM: usize = 8;

/// Per-axis PD gains with an acceleration and speed clamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerGains {
    pub kp: f64,
    pub kd: f64,
    pub max_accel: f64,
    pub max_speed: f64,
}

impl ControllerGains {
    /// Gains that reach a target one step ahead exactly when unclamped:
    /// `kp = 1 / dt^2`, `kd = 1 / dt`.
    pub fn deadbeat(dt: f64) -> Self {
        ControllerGains { kp: 1.0 / (dt * dt), kd: 1.0 / dt, max_accel: 5.0, max_speed: 9.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub position: Position,
    pub velocity: Position,
}

impl AgentState {
    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HumanMode {
    Cruising,
    /// Braking at `decel` toward the stop point; counts steps at rest.
    Yielding { decel: f64, stopped_steps: usize },
    /// Back to nominal speed after yielding.
    Resumed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldState {
    pub robot: AgentState,
    pub human: AgentState,
    pub intention: Intention,
    pub human_mode: HumanMode,
    pub step: usize,
}

impl WorldState {
    pub fn joint(&self) -> JointState {
        JointState::from_raw(alloc::vec![self.robot.position, self.human.position])
    }

    pub fn separation(&self) -> f64 {
        self.robot.position.distance(&self.human.position)
    }
}

/// Smallest robot-human distance over a state log, with both agents moving
/// linearly between consecutive states (a head-on pass can fall between
/// two samples).
pub fn min_separation(states: &[WorldState]) -> f64 {
    let mut best = states.first().map_or(f64::INFINITY, WorldState::separation);
    for w in states.windows(2) {
        let r0 = w[0].robot.position - w[0].human.position;
        let r1 = w[1].robot.position - w[1].human.position;
        let d = r1 - r0;
        let dd = d.dot(&d);
        let u = if dd > 0.0 { (-r0.dot(&d) / dd).clamp(0.0, 1.0) } else { 0.0 };
        best = best.min((r0 + d * u).norm());
    }
    best
}

fn clamp_norm(v: Position, max: f64) -> Position {
    let n = v.norm();
    if n > max {
        v * (max / n)
    } else {
        v
    }
}

pub(super) fn pd_step(a: &AgentState, target: Position, gains: &ControllerGains, dt: f64) -> AgentState {
    let acc = (target - a.position) * gains.kp - a.velocity * gains.kd;
    let acc = clamp_norm(acc, gains.max_accel);
    let velocity = clamp_norm(a.velocity + acc * dt, gains.max_speed);
    AgentState { position: a.position + velocity * dt, velocity }
}

/// One step of PD tracking for both agents: `a = clamp(kp (target - x) - kd
/// v)`, then `v += a dt`, `x += v dt`. The human mode is carried over.
pub fn env_step(state: &WorldState, robot_target: Position, human_target: Position, gains: &ControllerGains, dt: f64) -> WorldState {
    WorldState {
        robot: pd_step(&state.robot, robot_target, gains, dt),
        human: pd_step(&state.human, human_target, gains, dt),
        intention: state.intention,
        human_mode: state.human_mode,
        step: state.step + 1,
    }
}

/// Static description of one scenario in its local frame (or, once
/// translated, of one episode's scene).
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub scenario_id: ScenarioId,
    pub center: Position,
    pub lane_width: f64,
    pub goal_region: Aabb,
    pub entry_zone: Aabb,
    pub conflict_zone: Aabb,
    /// Stalled vehicle the robot must steer around, if any.
    pub obstacle: Option<Aabb>,
    /// Planning destination, past the goal region along the exit lane.
    pub destination: Position,
    pub robot_path: Path,
    pub human_path: Path,
    /// Robot arc length of the hold point outside the entry zone.
    pub robot_hold_outside: f64,
    /// Robot arc length of the probe point inside the entry zone.
    pub robot_probe: f64,
    /// Robot arc length past which it has left the conflict zone.
    pub robot_clear: f64,
    /// Human arc length of its stop point before the conflict zone.
    pub human_stop: f64,
    /// Human arc length past which the robot may complete behind it.
    pub human_clear: f64,
    /// Largest distance to the stop point at which a human can decide to
    /// yield.
    pub decision_distance: f64,
    pub human_max_brake: f64,
    /// Smallest braking rate of a yielding human.
    pub human_yield_decel: f64,
    pub human_resume_accel: f64,
    /// Steps a yielding human waits at rest before giving up.
    pub patience_steps: usize,
    pub p_yield: f64,
    pub dt: f64,
    pub horizon_steps: usize,
    pub past_len: usize,
    /// Future length of dataset records.
    pub future_len: usize,
    pub robot_speed: (f64, f64),
    pub human_speed: (f64, f64),
    /// Nominal human arc length at step 0 and its uniform jitter.
    pub human_start: f64,
    pub human_start_jitter: f64,
    pub center_jitter: f64,
    pub gains: ControllerGains,
    pub expert_accel: f64,
    pub expert_decel: f64,
    /// Human distance to its stop point at which the risky expert commits.
    pub risky_commit: f64,
    pub d_safe: f64,
    /// Separation demanded by the planners' constraint term.
    pub d_plan: f64,
    pub slack_steps: usize,
}

const LANE: f64 = 3.5;
const HALF: f64 = 1.75;

fn p(x: f64, y: f64) -> Position {
    Position::new(x, y)
}

fn aabb(x0: f64, x1: f64, y0: f64, y1: f64) -> Aabb {
    Aabb::new(p(x0, y0), p(x1, y1))
}

impl ScenarioConfig {
    fn base(
        scenario_id: ScenarioId,
        robot_path: Path,
        human_path: Path,
        zones: [Aabb; 3],
        destination: Position,
        points: [Position; 5],
        human_start: f64,
    ) -> Self {
        let [goal_region, entry_zone, conflict_zone] = zones;
        let [hold, probe, rclear, hstop, hclear] = points;
        let dt = 0.4;
        ScenarioConfig {
            scenario_id,
            center: Position::ORIGIN,
            lane_width: LANE,
            goal_region,
            entry_zone,
            conflict_zone,
            obstacle: None,
            destination,
            robot_hold_outside: robot_path.project(hold),
            robot_probe: robot_path.project(probe),
            robot_clear: robot_path.project(rclear),
            human_stop: human_path.project(hstop),
            human_clear: human_path.project(hclear),
            robot_path,
            human_path,
            decision_distance: 30.0,
            human_max_brake: 5.0,
            human_yield_decel: 2.0,
            human_resume_accel: 2.0,
            patience_steps: 8,
            p_yield: 0.5,
            dt,
            horizon_steps: 70,
            past_len: 4,
            future_len: 12,
            robot_speed: (5.5, 6.5),
            human_speed: (5.5, 6.5),
            human_start,
            human_start_jitter: 1.5,
            center_jitter: 20.0,
            gains: ControllerGains::deadbeat(dt),
            expert_accel: 2.5,
            expert_decel: 2.5,
            risky_commit: 7.0,
            d_safe: 2.0,
            d_plan: 3.5,
            slack_steps: 8,
        }
    }

    /// Unprotected left turn across an oncoming lane.
    pub fn left_turn() -> Self {
        let robot_path = Path::builder(p(HALF, -26.0))
            .line_to(p(HALF, -LANE), 8.0)
            .arc(p(-LANE, -LANE), FRAC_PI_2, 3.0)
            .line_to(p(-300.0, HALF), 8.0)
            .build();
        let human_path = Path::builder(p(-HALF, 70.0)).line_to(p(-HALF, -300.0), 12.0).build();
        let probe_angle = 20f64.to_radians();
        let probe = p(-LANE + 5.25 * math::cos(probe_angle), -LANE + 5.25 * math::sin(probe_angle));
        ScenarioConfig::base(
            ScenarioId::LeftTurn,
            robot_path,
            human_path,
            [aabb(-16.0, -9.0, -LANE, LANE), aabb(0.1, LANE, -12.0, 0.5), aabb(-LANE, 0.0, -LANE, LANE)],
            p(-30.0, HALF),
            [p(HALF, -13.5), probe, p(-4.5, HALF), p(-HALF, 5.5), p(-HALF, -LANE)],
            39.0,
        )
    }

    /// Passing a stalled vehicle through the oncoming lane.
    pub fn overtake() -> Self {
        let robot_path = Path::builder(p(-45.0, -HALF))
            .line_to(p(-16.0, -HALF), 8.0)
            .line_to(p(-8.0, HALF), 6.0)
            .line_to(p(6.0, HALF), 8.0)
            .line_to(p(14.0, -HALF), 6.0)
            .line_to(p(300.0, -HALF), 8.0)
            .build();
        let human_path = Path::builder(p(90.0, HALF)).line_to(p(-300.0, HALF), 12.0).build();
        let probe = p(-16.0, -HALF) + p(8.0, LANE) * 0.35;
        let mut c = ScenarioConfig::base(
            ScenarioId::Overtake,
            robot_path,
            human_path,
            [aabb(18.0, 28.0, -LANE, 0.0), aabb(-16.0, -10.5, -1.2, 0.5), aabb(-10.0, 12.0, 0.0, LANE)],
            p(45.0, -HALF),
            [p(-18.0, -HALF), probe, p(15.0, -HALF), p(14.0, HALF), p(-18.0, HALF)],
            42.0,
        );
        c.obstacle = Some(aabb(-3.0, 3.0, -3.0, -0.5));
        c
    }

    /// Right turn merging ahead of cross traffic from the left.
    pub fn right_turn() -> Self {
        let r = LANE;
        let robot_path = Path::builder(p(HALF, -28.0))
            .line_to(p(HALF, -HALF - r), 8.0)
            .arc(p(HALF + r, -HALF - r), -FRAC_PI_2, 3.0)
            .line_to(p(300.0, -HALF), 8.0)
            .build();
        let human_path = Path::builder(p(-80.0, -HALF)).line_to(p(300.0, -HALF), 12.0).build();
        let a = PI - 20f64.to_radians();
        let probe = p(HALF + r + r * math::cos(a), -HALF - r + r * math::sin(a));
        let mut c = ScenarioConfig::base(
            ScenarioId::RightTurn,
            robot_path,
            human_path,
            [aabb(14.0, 24.0, -LANE, 0.0), aabb(0.5, LANE, -12.0, -3.6), aabb(-LANE, 12.0, -LANE, 0.0)],
            p(45.0, -HALF),
            [p(HALF, -13.5), probe, p(12.0, -HALF), p(-5.5, -HALF), p(12.0, -HALF)],
            45.0,
        );
        c.human_speed = (7.5, 8.5);
        c.risky_commit = -1.0;
        c
    }

    pub fn for_scenario(id: ScenarioId) -> Self {
        match id {
            ScenarioId::LeftTurn => ScenarioConfig::left_turn(),
            ScenarioId::Overtake => ScenarioConfig::overtake(),
            ScenarioId::RightTurn => ScenarioConfig::right_turn(),
        }
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<(), &'static str> {
        if !(0.0..=1.0).contains(&self.p_yield) {
            return Err("p_yield must lie in [0, 1]");
        }
        if !(self.dt > 0.0) || self.horizon_steps == 0 || self.past_len == 0 || self.future_len == 0 {
            return Err("dt, horizon and past length must be positive");
        }
        if !(self.gains.kp > 0.0) {
            return Err("k_p must be > 0");
        }
        if boxes_overlap(&self.entry_zone, &self.conflict_zone) || boxes_overlap(&self.goal_region, &self.conflict_zone) {
            return Err("entry zone and goal region must be disjoint from the conflict zone");
        }
        let outside = self.robot_path.point_at(self.robot_hold_outside);
        let probe = self.robot_path.point_at(self.robot_probe);
        if self.entry_zone.contains(outside) || !self.entry_zone.contains(probe) {
            return Err("hold point must lie outside and probe point inside the entry zone");
        }
        Ok(())
    }

    /// The scene moved by `offset`.
    pub fn translated(&self, offset: Position) -> ScenarioConfig {
        let mut c = self.clone();
        c.center = self.center + offset;
        c.goal_region = self.goal_region.translated(offset);
        c.entry_zone = self.entry_zone.translated(offset);
        c.conflict_zone = self.conflict_zone.translated(offset);
        c.obstacle = self.obstacle.map(|o| o.translated(offset));
        c.destination = self.destination + offset;
        c.robot_path = self.robot_path.translated(offset);
        c.human_path = self.human_path.translated(offset);
        c
    }

    /// Planning goal: the destination plus the separation and obstacle
    /// constraints.
    pub fn goal(&self) -> Goal {
        let mut g = Goal::new(self.destination).with_constraint(Constraint::Separation { min_distance: self.d_plan });
        if let Some(o) = self.obstacle {
            g = g.with_constraint(Constraint::Region(Region::Box { bounds: o, feasible_inside: false }));
        }
        g
    }
}

fn boxes_overlap(a: &Aabb, b: &Aabb) -> bool {
    a.min.x < b.max.x && b.min.x < a.max.x && a.min.y < b.max.y && b.min.y < a.max.y
}

/// One sampled episode: the translated scene plus the hidden and random
/// per-episode quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub config: ScenarioConfig,
    pub seed: u64,
    pub intention: Intention,
    /// Branch the data-generating expert follows.
    pub branch: Branch,
    pub human_speed: f64,
    pub robot_speed: f64,
    pub human_start: f64,
}

impl Episode {
    /// Draws the episode from independent forks of `seed`, so the
    /// intention does not depend on the branch draw and vice versa.
    pub fn sample(config: &ScenarioConfig, seed: u64) -> Episode {
        let root = RngStream::new(seed);
        let mut scene = root.fork("scene");
        let j = config.center_jitter;
        let offset = p(scene.uniform_range(-j, j), scene.uniform_range(-j, j));
        let human_speed = scene.uniform_range(config.human_speed.0, config.human_speed.1);
        let robot_speed = scene.uniform_range(config.robot_speed.0, config.robot_speed.1);
        let hj = config.human_start_jitter;
        let human_start = config.human_start + scene.uniform_range(-hj, hj);
        let intention = if root.fork("intention").bernoulli(config.p_yield) { Intention::Yield } else { Intention::NoYield };
        let branch = Branch::sample(&mut root.fork("branch"));
        Episode { config: config.translated(offset), seed, intention, branch, human_speed, robot_speed, human_start }
    }

    pub fn with_intention(mut self, intention: Intention) -> Episode {
        self.intention = intention;
        self
    }

    pub fn with_branch(mut self, branch: Branch) -> Episode {
        self.branch = branch;
        self
    }

    pub fn initial_state(&self) -> WorldState {
        let c = &self.config;
        let rh = c.robot_path.heading_at(0.0);
        let hh = c.human_path.heading_at(self.human_start);
        WorldState {
            robot: AgentState { position: c.robot_path.point_at(0.0), velocity: rh * self.robot_speed },
            human: AgentState { position: c.human_path.point_at(self.human_start), velocity: hh * self.human_speed },
            intention: self.intention,
            human_mode: HumanMode::Cruising,
            step: 0,
        }
    }

    /// Constant-speed history before step 0, oldest first, excluding the
    /// initial state itself.
    pub fn pre_history(&self) -> Vec<JointState> {
        let c = &self.config;
        let k = c.past_len - 1;
        (0..k)
            .map(|i| {
                let back = (k - i) as f64 * c.dt;
                JointState::from_raw(alloc::vec![
                    c.robot_path.point_at(-self.robot_speed * back),
                    c.human_path.point_at(self.human_start - self.human_speed * back),
                ])
            })
            .collect()
    }

    pub fn context(&self) -> Vec<f64> {
        let c = &self.config;
        let mut ctx = alloc::vec![0.0; CONTEXT_DIM];
        ctx[c.scenario_id.index()] = 1.0;
        ctx[3] = c.center.x;
        ctx[4] = c.center.y;
        ctx[5] = self.human_speed;
        ctx[6] = c.lane_width;
        ctx
    }

    pub fn robot_progress(&self, state: &WorldState) -> f64 {
        self.config.robot_path.project(state.robot.position)
    }

    pub fn human_progress(&self, state: &WorldState) -> f64 {
        self.config.human_path.project(state.human.position)
    }

    pub fn human_cleared(&self, state: &WorldState) -> bool {
        self.human_progress(state) >= self.config.human_clear
    }

    /// Advances the world one step with the given robot target and the
    /// scripted human.
    pub fn advance(&self, state: &WorldState, robot_target: Position) -> WorldState {
        let cmd = human_policy(state, self);
        let mut next = env_step(state, robot_target, cmd.target, &self.config.gains, self.config.dt);
        next.human_mode = cmd.mode;
        next
    }
}

#[cfg(test)]
mod tests;
