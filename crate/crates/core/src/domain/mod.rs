//! Domain types shared by every other module.
//!
//! Agent index 0 is always the controlled robot; indices `1..A` are the
//! uncontrolled humans. Positions are planar, in meters.

mod geometry;
mod rng;

use alloc::vec::Vec;
use core::fmt;
use core::ops::{Add, Mul, Sub};

pub use geometry::{signed_distance, Aabb, Constraint, Goal, Region};
pub use rng::RngStream;

/// Length of the scenario context vector.
pub const CONTEXT_DIM: usize = 8;
/// Context slots holding the scene anchor (intersection center) in world
/// coordinates.
pub const CONTEXT_ANCHOR: (usize, usize) = (3, 4);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoreError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("need at least two agents, got {0}")]
    TooFewAgents(usize),
    #[error("inconsistent agent count: expected {expected}, got {got}")]
    AgentCountMismatch { expected: usize, got: usize },
    #[error("{0} must not be empty")]
    Empty(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const ORIGIN: Position = Position { x: 0.0, y: 0.0 };

    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    #[inline]
    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        crate::math::hypot(self.x, self.y)
    }

    #[inline]
    pub fn distance(&self, other: &Position) -> f64 {
        (*self - *other).norm()
    }

    #[inline]
    pub fn dot(&self, other: &Position) -> f64 {
        self.x * other.x + self.y * other.y
    }

    #[inline]
    pub fn to_array(self) -> [f64; 2] {
        [self.x, self.y]
    }
}

impl From<[f64; 2]> for Position {
    fn from(v: [f64; 2]) -> Self {
        Position::new(v[0], v[1])
    }
}

impl Add for Position {
    type Output = Position;
    fn add(self, rhs: Position) -> Position {
        Position::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Position {
    type Output = Position;
    fn sub(self, rhs: Position) -> Position {
        Position::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Position {
    type Output = Position;
    fn mul(self, rhs: f64) -> Position {
        Position::new(self.x * rhs, self.y * rhs)
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.3}, {:.3})", self.x, self.y)
    }
}

/// Positions of all agents at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    positions: Vec<Position>,
}

impl JointState {
    pub fn new(positions: Vec<Position>) -> Result<Self, CoreError> {
        if positions.len() < 2 {
            return Err(CoreError::TooFewAgents(positions.len()));
        }
        if positions.iter().any(|p| !p.is_finite()) {
            return Err(CoreError::NonFinite("joint state"));
        }
        Ok(JointState { positions })
    }

    /// Builds a state without validation; callers guarantee the invariants.
    pub(crate) fn from_raw(positions: Vec<Position>) -> Self {
        JointState { positions }
    }

    pub fn agents(&self) -> usize {
        self.positions.len()
    }

    pub fn robot(&self) -> Position {
        self.positions[0]
    }

    pub fn agent(&self, index: usize) -> Position {
        self.positions[index]
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    pub fn is_finite(&self) -> bool {
        self.positions.iter().all(Position::is_finite)
    }
}

/// Future joint positions `x_1..x_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTrajectory {
    steps: Vec<JointState>,
}

impl JointTrajectory {
    pub fn new(steps: Vec<JointState>) -> Result<Self, CoreError> {
        let first = steps.first().ok_or(CoreError::Empty("trajectory"))?;
        let agents = first.agents();
        for s in &steps {
            if s.agents() != agents {
                return Err(CoreError::AgentCountMismatch { expected: agents, got: s.agents() });
            }
            if !s.is_finite() {
                return Err(CoreError::NonFinite("trajectory"));
            }
        }
        Ok(JointTrajectory { steps })
    }

    pub(crate) fn from_raw(steps: Vec<JointState>) -> Self {
        JointTrajectory { steps }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn agents(&self) -> usize {
        self.steps[0].agents()
    }

    pub fn steps(&self) -> &[JointState] {
        &self.steps
    }

    pub fn step(&self, t: usize) -> &JointState {
        &self.steps[t]
    }

    /// Positions of one agent over time.
    pub fn agent_path(&self, agent: usize) -> Vec<Position> {
        self.steps.iter().map(|s| s.agent(agent)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.steps.iter().all(JointState::is_finite)
    }
}

/// What the robot sees: a short joint history plus scene features.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    past: Vec<JointState>,
    context: Vec<f64>,
}

impl Observation {
    /// `past` is oldest first; its last entry is the current joint state.
    pub fn new(past: Vec<JointState>, context: Vec<f64>) -> Result<Self, CoreError> {
        let last = past.last().ok_or(CoreError::Empty("observation past"))?;
        let agents = last.agents();
        for s in &past {
            if s.agents() != agents {
                return Err(CoreError::AgentCountMismatch { expected: agents, got: s.agents() });
            }
            if !s.is_finite() {
                return Err(CoreError::NonFinite("observation past"));
            }
        }
        if context.iter().any(|c| !c.is_finite()) {
            return Err(CoreError::NonFinite("observation context"));
        }
        Ok(Observation { past, context })
    }

    pub fn past(&self) -> &[JointState] {
        &self.past
    }

    pub fn context(&self) -> &[f64] {
        &self.context
    }

    pub fn current(&self) -> &JointState {
        self.past.last().expect("observation past is non-empty")
    }

    pub fn agents(&self) -> usize {
        self.current().agents()
    }

    /// Scene anchor stored in the context, or the origin when the context is
    /// too short to carry one.
    pub fn anchor(&self) -> Position {
        let (ix, iy) = CONTEXT_ANCHOR;
        if self.context.len() > iy {
            Position::new(self.context[ix], self.context[iy])
        } else {
            Position::ORIGIN
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScenarioId {
    LeftTurn,
    Overtake,
    RightTurn,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 3] = [ScenarioId::LeftTurn, ScenarioId::Overtake, ScenarioId::RightTurn];

    pub fn index(self) -> usize {
        match self {
            ScenarioId::LeftTurn => 0,
            ScenarioId::Overtake => 1,
            ScenarioId::RightTurn => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioId::LeftTurn => "left-turn",
            ScenarioId::Overtake => "overtake",
            ScenarioId::RightTurn => "right-turn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "left-turn" | "LeftTurn" => Some(ScenarioId::LeftTurn),
            "overtake" | "Overtake" => Some(ScenarioId::Overtake),
            "right-turn" | "RightTurn" => Some(ScenarioId::RightTurn),
            _ => None,
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Intention {
    Yield,
    NoYield,
}

impl Intention {
    pub fn as_str(self) -> &'static str {
        match self {
            Intention::Yield => "yield",
            Intention::NoYield => "no-yield",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "yield" | "Yield" => Some(Intention::Yield),
            "no-yield" | "NoYield" => Some(Intention::NoYield),
            _ => None,
        }
    }
}

impl fmt::Display for Intention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One training example: an observation and the joint future that followed.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub observation: Observation,
    pub future: JointTrajectory,
    pub scenario_id: ScenarioId,
    pub human_intention: Intention,
    pub seed: u64,
}

impl EpisodeRecord {
    pub fn is_finite(&self) -> bool {
        self.future.is_finite()
            && self.observation.past.iter().all(JointState::is_finite)
            && self.observation.context.iter().all(|c| c.is_finite())
    }
}
