use alloc::vec::Vec;

use super::Position;
use crate::math;

/// Axis-aligned box `[min.x, max.x] x [min.y, max.y]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Position,
    pub max: Position,
}

impl Aabb {
    pub const fn new(min: Position, max: Position) -> Self {
        Aabb { min, max }
    }

    pub fn contains(&self, p: Position) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn center(&self) -> Position {
        Position::new(0.5 * (self.min.x + self.max.x), 0.5 * (self.min.y + self.max.y))
    }

    pub fn half_extent(&self) -> Position {
        Position::new(0.5 * (self.max.x - self.min.x), 0.5 * (self.max.y - self.min.y))
    }

    pub fn translated(&self, by: Position) -> Aabb {
        Aabb::new(self.min + by, self.max + by)
    }

    /// Exact Euclidean signed distance: negative inside, positive outside.
    pub fn signed_distance(&self, p: Position) -> f64 {
        let c = self.center();
        let h = self.half_extent();
        let qx = (p.x - c.x).abs() - h.x;
        let qy = (p.y - c.y).abs() - h.y;
        let outside = math::hypot(qx.max(0.0), qy.max(0.0));
        let inside = qx.max(qy).min(0.0);
        outside + inside
    }
}

/// A static region constraint on the robot's position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region {
    /// Feasible where `normal . p >= offset`; `normal` is unit length.
    HalfPlane { normal: Position, offset: f64 },
    /// Feasible inside the box when `feasible_inside`, outside otherwise.
    Box { bounds: Aabb, feasible_inside: bool },
}

impl Region {
    pub fn half_plane(normal: Position, offset: f64) -> Self {
        let n = normal.norm();
        Region::HalfPlane { normal: normal * (1.0 / n), offset: offset / n }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Constraint {
    /// Region the robot must stay in.
    Region(Region),
    /// Minimum robot-to-human distance at every step.
    Separation { min_distance: f64 },
}

/// Destination plus constraint set handed to the planners.
#[derive(Debug, Clone, PartialEq)]
pub struct Goal {
    pub destination: Position,
    pub constraints: Vec<Constraint>,
}

impl Goal {
    pub fn new(destination: Position) -> Self {
        Goal { destination, constraints: Vec::new() }
    }

    pub fn with_constraint(mut self, c: Constraint) -> Self {
        self.constraints.push(c);
        self
    }
}

/// Signed distance of `position` to the boundary of a region's feasible
/// set: negative inside the feasible set, zero on its boundary.
pub fn signed_distance(region: &Region, position: Position) -> f64 {
    match *region {
        Region::HalfPlane { normal, offset } => offset - normal.dot(&position),
        Region::Box { bounds, feasible_inside } => {
            let d = bounds.signed_distance(position);
            if feasible_inside {
                d
            } else {
                -d
            }
        }
    }
}
