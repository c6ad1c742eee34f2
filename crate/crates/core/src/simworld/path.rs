use alloc::vec::Vec;

use crate::domain::Position;
use crate::math;

/// Polyline route with arc-length parametrization and a per-segment speed
/// cap.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    points: Vec<Position>,
    s: Vec<f64>,
    /// `caps[i]` applies to the segment starting at `points[i]`.
    caps: Vec<f64>,
}

impl Path {
    pub fn builder(start: Position) -> PathBuilder {
        PathBuilder { points: alloc::vec![start], caps: Vec::new() }
    }

    pub fn length(&self) -> f64 {
        *self.s.last().expect("path has points")
    }

    pub fn start(&self) -> Position {
        self.points[0]
    }

    pub fn points(&self) -> &[Position] {
        &self.points
    }

    fn segment(&self, s: f64) -> usize {
        match self.s.binary_search_by(|v| v.partial_cmp(&s).unwrap_or(core::cmp::Ordering::Less)) {
            Ok(i) => i.min(self.points.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.points.len() - 2),
        }
    }

    /// Point at arc length `s`; extrapolates along the end segments.
    pub fn point_at(&self, s: f64) -> Position {
        let i = self.segment(s);
        let (a, b) = (self.points[i], self.points[i + 1]);
        let len = self.s[i + 1] - self.s[i];
        a + (b - a) * ((s - self.s[i]) / len)
    }

    /// Unit tangent at arc length `s`.
    pub fn heading_at(&self, s: f64) -> Position {
        let i = self.segment(s);
        let d = self.points[i + 1] - self.points[i];
        d * (1.0 / d.norm())
    }

    pub fn cap_at(&self, s: f64) -> f64 {
        self.caps[self.segment(s)]
    }

    /// Highest speed at `s` from which the caps over the next `lookahead`
    /// meters can be met braking at `decel`.
    pub fn braking_cap(&self, s: f64, lookahead: f64, decel: f64) -> f64 {
        let mut cap = self.cap_at(s);
        let end = s + lookahead;
        let mut i = self.segment(s) + 1;
        while i + 1 < self.points.len() && self.s[i] < end {
            let ahead = self.s[i] - s;
            cap = cap.min(math::sqrt(self.caps[i] * self.caps[i] + 2.0 * decel * ahead.max(0.0)));
            i += 1;
        }
        cap
    }

    /// Arc length of the closest point on the path.
    pub fn project(&self, p: Position) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..self.points.len() - 1 {
            let (a, b) = (self.points[i], self.points[i + 1]);
            let d = b - a;
            let len2 = d.dot(&d);
            let u = ((p - a).dot(&d) / len2).clamp(0.0, 1.0);
            let q = a + d * u;
            let dist = p.distance(&q);
            if dist < best.0 {
                best = (dist, self.s[i] + u * (self.s[i + 1] - self.s[i]));
            }
        }
        best.1
    }

    pub fn translated(&self, by: Position) -> Path {
        Path { points: self.points.iter().map(|&p| p + by).collect(), s: self.s.clone(), caps: self.caps.clone() }
    }
}

pub struct PathBuilder {
    points: Vec<Position>,
    caps: Vec<f64>,
}

impl PathBuilder {
    fn last(&self) -> Position {
        *self.points.last().expect("builder has a start")
    }

    pub fn line_to(mut self, p: Position, cap: f64) -> Self {
        self.points.push(p);
        self.caps.push(cap);
        self
    }

    /// Circular arc around `center` from the current point, sweeping
    /// `sweep` radians (positive is counter-clockwise).
    pub fn arc(mut self, center: Position, sweep: f64, cap: f64) -> Self {
        let start = self.last() - center;
        let r = start.norm();
        let a0 = math::atan2(start.y, start.x);
        let n = (math::ceil((r * sweep.abs()) / 0.25) as usize).max(2);
        for k in 1..=n {
            let a = a0 + sweep * (k as f64 / n as f64);
            self.points.push(center + Position::new(r * math::cos(a), r * math::sin(a)));
            self.caps.push(cap);
        }
        self
    }

    pub fn build(self) -> Path {
        assert!(self.points.len() >= 2, "path needs a segment");
        let mut s = Vec::with_capacity(self.points.len());
        s.push(0.0);
        for w in self.points.windows(2) {
            s.push(s.last().unwrap() + w[0].distance(&w[1]));
        }
        let mut caps = self.caps;
        caps.push(*caps.last().unwrap());
        Path { points: self.points, s, caps }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::FRAC_PI_2;

    #[test]
    fn straight_path_projection_and_lookup() {
        let p = Path::builder(Position::new(0.0, 0.0)).line_to(Position::new(10.0, 0.0), 5.0).build();
        assert_eq!(p.length(), 10.0);
        assert_eq!(p.point_at(2.5), Position::new(2.5, 0.0));
        assert_eq!(p.project(Position::new(3.0, 4.0)), 3.0);
        assert_eq!(p.point_at(12.0), Position::new(12.0, 0.0));
        assert_eq!(p.heading_at(1.0), Position::new(1.0, 0.0));
    }

    #[test]
    fn quarter_arc_length_and_endpoint() {
        let p = Path::builder(Position::new(1.0, 0.0)).arc(Position::ORIGIN, FRAC_PI_2, 3.0).build();
        // Seven chords of at most 0.25 m undershoot the true length pi/2.
        let chords = 14.0 * math::sin(FRAC_PI_2 / 14.0);
        assert!((p.length() - chords).abs() < 1e-12);
        assert!(p.length() < FRAC_PI_2 && FRAC_PI_2 - p.length() < 5e-3);
        let end = p.point_at(p.length());
        assert!(end.distance(&Position::new(0.0, 1.0)) < 1e-12);
    }

    #[test]
    fn braking_cap_looks_ahead() {
        let p = Path::builder(Position::ORIGIN)
            .line_to(Position::new(10.0, 0.0), 8.0)
            .line_to(Position::new(20.0, 0.0), 2.0)
            .build();
        let c = p.braking_cap(5.0, 20.0, 2.0);
        assert!((c - math::sqrt(4.0 + 20.0)).abs() < 1e-12);
        assert_eq!(p.braking_cap(0.0, 3.0, 2.0), 8.0);
    }
}
