//! Deterministic 2-D geometry shared by every other module.
//!
//! Everything here is a pure function over plain values: oriented-box
//! overlap tests, box interior point sampling, agent-frame translation,
//! polyline arc-length walking, and finite-difference kinematics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A 2-D point or vector in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    /// Rotate counterclockwise by `angle` radians about the origin.
    pub fn rotated(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn scaled(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

/// Position plus heading, radians in (-pi, pi].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub const fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

/// Normalize an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(std::f64::consts::TAU);
    if r > std::f64::consts::PI {
        r -= std::f64::consts::TAU;
    }
    r
}

/// An oriented rectangle: `length` along the heading axis, `width` across it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obb {
    pub center: Vec2,
    pub width: f64,
    pub length: f64,
    pub heading: f64,
}

impl Obb {
    pub fn new(center: Vec2, width: f64, length: f64, heading: f64) -> Self {
        assert!(width > 0.0 && length > 0.0, "Obb extents must be positive");
        Self { center, width, length, heading }
    }

    /// Unit axis along the length direction.
    pub fn long_axis(&self) -> Vec2 {
        Vec2::new(self.heading.cos(), self.heading.sin())
    }

    /// Unit axis along the width direction.
    pub fn lat_axis(&self) -> Vec2 {
        Vec2::new(-self.heading.sin(), self.heading.cos())
    }

    pub fn corners(&self) -> [Vec2; 4] {
        let u = self.long_axis().scaled(self.length / 2.0);
        let v = self.lat_axis().scaled(self.width / 2.0);
        [
            self.center + u + v,
            self.center + u - v,
            self.center - u - v,
            self.center - u + v,
        ]
    }

    /// True iff `p` lies in the closed rectangle.
    pub fn contains(&self, p: Vec2) -> bool {
        let d = p - self.center;
        d.dot(self.long_axis()).abs() <= self.length / 2.0 + 1e-12
            && d.dot(self.lat_axis()).abs() <= self.width / 2.0 + 1e-12
    }
}

/// Closed-rectangle intersection via the separating-axis test over the four
/// candidate axes. Touching boundaries count as overlap.
pub fn obb_overlap(a: &Obb, b: &Obb) -> bool {
    let axes = [a.long_axis(), a.lat_axis(), b.long_axis(), b.lat_axis()];
    let ca = a.corners();
    let cb = b.corners();
    for axis in axes {
        let (mut amin, mut amax) = (f64::INFINITY, f64::NEG_INFINITY);
        for c in ca {
            let p = c.dot(axis);
            amin = amin.min(p);
            amax = amax.max(p);
        }
        let (mut bmin, mut bmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for c in cb {
            let p = c.dot(axis);
            bmin = bmin.min(p);
            bmax = bmax.max(p);
        }
        if bmin > amax || bmax < amin {
            return false;
        }
    }
    true
}

/// Regular grid of points inside an oriented `width` x `length` box.
///
/// Per axis the point count is `ceil(extent / spacing)`; the grid is anchored
/// so the box center is always one of the points and no point leaves the
/// closed box (the step shrinks below `spacing` when needed).
pub fn sample_box_points(pose: Pose, width: f64, length: f64, spacing: f64) -> Vec<Vec2> {
    assert!(spacing > 0.0, "spacing must be positive");
    let offsets = |extent: f64| -> Vec<f64> {
        let n = (extent / spacing).ceil().max(1.0) as usize;
        let step = spacing.min(extent / n as f64);
        (0..n).map(|i| (i as f64 - (n / 2) as f64) * step).collect()
    };
    let along = offsets(length);
    let across = offsets(width);
    let center = pose.position();
    let mut out = Vec::with_capacity(along.len() * across.len());
    for &dl in &along {
        for &dw in &across {
            out.push(center + Vec2::new(dl, dw).rotated(pose.heading));
        }
    }
    out
}

/// Translate points into the frame whose origin is `origin`. Translation
/// only: the frame heading is unknown at injection time, so no rotation.
pub fn to_agent_frame(points: &[Vec2], origin: Vec2) -> Vec<Vec2> {
    points.iter().map(|p| *p - origin).collect()
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KinematicsError {
    #[error("trajectory too short for finite differences: {len} poses (need at least 3)")]
    TooShort { len: usize },
}

/// Per-step speed and acceleration magnitudes by central-free finite
/// differences: v_t = (p_{t+1} - p_t)/dt, a_t = (v_{t+1} - v_t)/dt.
/// Returns `T-1` speeds and `T-2` acceleration magnitudes.
pub fn finite_difference_kinematics(
    positions: &[Vec2],
    dt: f64,
) -> Result<(Vec<f64>, Vec<f64>), KinematicsError> {
    if positions.len() < 3 {
        return Err(KinematicsError::TooShort { len: positions.len() });
    }
    let vels: Vec<Vec2> = positions
        .windows(2)
        .map(|w| (w[1] - w[0]).scaled(1.0 / dt))
        .collect();
    let speeds = vels.iter().map(|v| v.norm()).collect();
    let accels = vels
        .windows(2)
        .map(|w| (w[1] - w[0]).scaled(1.0 / dt).norm())
        .collect();
    Ok((speeds, accels))
}

/// Unsigned distance from `p` to the closed segment `a`-`b`.
pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.distance(a + ab.scaled(t))
}

/// A polyline with precomputed cumulative arc length, for lane-following
/// trajectories and fixed-interval resampling.
#[derive(Debug, Clone)]
pub struct PolylinePath {
    points: Vec<Vec2>,
    cumulative: Vec<f64>,
}

impl PolylinePath {
    pub fn new(points: Vec<Vec2>) -> Self {
        assert!(points.len() >= 2, "polyline needs at least 2 points");
        let mut cumulative = Vec::with_capacity(points.len());
        let mut total = 0.0;
        cumulative.push(0.0);
        for w in points.windows(2) {
            total += w[0].distance(w[1]);
            cumulative.push(total);
        }
        Self { points, cumulative }
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Point at arc length `s` (clamped to the path) plus the local unit
    /// tangent of the containing segment.
    pub fn sample(&self, s: f64) -> (Vec2, Vec2) {
        let s = s.clamp(0.0, self.length());
        // Last segment with cumulative <= s.
        let seg = match self
            .cumulative
            .binary_search_by(|c| c.partial_cmp(&s).unwrap())
        {
            Ok(i) => i.min(self.points.len() - 2),
            Err(i) => i - 1,
        };
        let a = self.points[seg];
        let b = self.points[seg + 1];
        let seg_len = self.cumulative[seg + 1] - self.cumulative[seg];
        let t = if seg_len > 0.0 { (s - self.cumulative[seg]) / seg_len } else { 0.0 };
        let dir = (b - a).scaled(1.0 / seg_len.max(1e-12));
        (a + (b - a).scaled(t), dir)
    }

    /// Resample at a fixed arc-length interval, always keeping the endpoint.
    pub fn resample(&self, interval: f64) -> Vec<Vec2> {
        assert!(interval > 0.0);
        let mut out = Vec::new();
        let mut s = 0.0;
        while s < self.length() {
            out.push(self.sample(s).0);
            s += interval;
        }
        out.push(*self.points.last().unwrap());
        out
    }

    /// Laterally offset copy of the path (positive = left of travel).
    pub fn offset(&self, lateral: f64) -> PolylinePath {
        let pts: Vec<Vec2> = self
            .cumulative
            .iter()
            .map(|&s| {
                let (p, tan) = self.sample(s);
                p + Vec2::new(-tan.y, tan.x).scaled(lateral)
            })
            .collect();
        PolylinePath::new(pts)
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Dense-sampling overlap oracle: sample both interiors at `step`
    /// resolution and check point-in-box both ways. Independent of the
    /// separating-axis route.
    fn overlap_oracle(a: &Obb, b: &Obb, step: f64) -> bool {
        let probe = |src: &Obb, dst: &Obb| -> bool {
            let nl = (src.length / step).ceil() as i64;
            let nw = (src.width / step).ceil() as i64;
            for i in 0..=nl {
                for j in 0..=nw {
                    let dl = -src.length / 2.0 + i as f64 * src.length / nl as f64;
                    let dw = -src.width / 2.0 + j as f64 * src.width / nw as f64;
                    let p = src.center + Vec2::new(dl, dw).rotated(src.heading);
                    if dst.contains(p) {
                        return true;
                    }
                }
            }
            false
        };
        probe(a, b) || probe(b, a)
    }

    fn grow(o: &Obb, d: f64) -> Obb {
        Obb::new(o.center, (o.width + d).max(1e-3), (o.length + d).max(1e-3), o.heading)
    }

    #[test]
    fn obb_disjoint_unit_squares() {
        let a = Obb::new(Vec2::new(0.0, 0.0), 1.0, 1.0, 0.0);
        let b = Obb::new(Vec2::new(5.0, 0.0), 1.0, 1.0, 0.0);
        assert!(!obb_overlap(&a, &b));
    }

    #[test]
    fn obb_identical_rects_overlap() {
        let a = Obb::new(Vec2::new(1.0, -2.0), 1.5, 3.0, 0.7);
        assert!(obb_overlap(&a, &a));
    }

    #[test]
    fn obb_rotated_square_reaches() {
        // Unit square at origin; rotated square at (1.2, 0) has half-diagonal
        // ~0.707, so the two closed squares intersect (0.5 + 0.707 > 1.2).
        // Verified against the dense-sampling oracle at 1 cm.
        let a = Obb::new(Vec2::new(0.0, 0.0), 1.0, 1.0, 0.0);
        let b = Obb::new(Vec2::new(1.2, 0.0), 1.0, 1.0, std::f64::consts::FRAC_PI_4);
        assert!(overlap_oracle(&a, &b, 0.01));
        assert!(obb_overlap(&a, &b));
    }

    #[test]
    fn obb_symmetric_and_matches_oracle_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        for _ in 0..300 {
            let mut rand_box = || {
                Obb::new(
                    Vec2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
                    rng.gen_range(0.3..2.0),
                    rng.gen_range(0.3..3.0),
                    rng.gen_range(-3.14..3.14),
                )
            };
            let a = rand_box();
            let b = rand_box();
            assert_eq!(obb_overlap(&a, &b), obb_overlap(&b, &a));
            // Skip pairs whose oracle verdict is not robust to 1 cm changes.
            let grown = overlap_oracle(&grow(&a, 0.01), &grow(&b, 0.01), 0.01);
            let shrunk = overlap_oracle(&grow(&a, -0.01), &grow(&b, -0.01), 0.01);
            if grown != shrunk {
                continue;
            }
            checked += 1;
            assert_eq!(obb_overlap(&a, &b), grown, "a={a:?} b={b:?}");
        }
        assert!(checked > 200, "too few robust pairs: {checked}");
    }

    #[test]
    fn box_points_counts() {
        let p = sample_box_points(Pose::new(0.0, 0.0, 0.0), 1.0, 2.0, 1.0);
        assert_eq!(p.len(), 2);
        let b = Obb::new(Vec2::new(0.0, 0.0), 1.0, 2.0, 0.0);
        assert!(p.iter().all(|&q| b.contains(q)));

        let p = sample_box_points(Pose::new(3.0, -1.0, 0.4), 2.0, 4.0, 1.0);
        assert_eq!(p.len(), 8);
        let b = Obb::new(Vec2::new(3.0, -1.0), 2.0, 4.0, 0.4);
        assert!(p.iter().all(|&q| b.contains(q)));
    }

    #[test]
    fn box_points_include_center() {
        for (w, l) in [(0.5, 0.5), (1.8, 4.6), (2.0, 2.0), (0.7, 1.9)] {
            let pts = sample_box_points(Pose::new(1.0, 2.0, 0.9), w, l, 0.5);
            assert!(
                pts.iter().any(|p| p.distance(Vec2::new(1.0, 2.0)) < 1e-9),
                "center missing for {w}x{l}"
            );
        }
    }

    #[test]
    fn box_points_rotation_equivariant() {
        // Rotating the box rotates the sampled set about the center.
        let base = sample_box_points(Pose::new(2.0, 1.0, 0.0), 1.3, 3.1, 0.5);
        let rot = sample_box_points(Pose::new(2.0, 1.0, std::f64::consts::FRAC_PI_2), 1.3, 3.1, 0.5);
        let center = Vec2::new(2.0, 1.0);
        for (p0, p1) in base.iter().zip(rot.iter()) {
            let expect = center + (*p0 - center).rotated(std::f64::consts::FRAC_PI_2);
            assert!(p1.distance(expect) < 1e-9);
        }
    }

    #[test]
    fn agent_frame_is_pure_translation() {
        let pts = vec![Vec2::new(3.0, 4.0), Vec2::new(-1.0, 0.5)];
        assert_eq!(to_agent_frame(&pts, Vec2::new(0.0, 0.0)), pts);
        let moved = to_agent_frame(&pts, Vec2::new(3.0, 4.0));
        assert_eq!(moved[0], Vec2::new(0.0, 0.0));
        let back = to_agent_frame(&moved, Vec2::new(-3.0, -4.0));
        assert_eq!(back, pts);
    }

    #[test]
    fn kinematics_stationary_and_linear() {
        let still = vec![Vec2::new(1.0, 1.0); 6];
        let (v, a) = finite_difference_kinematics(&still, 0.1).unwrap();
        assert!(v.iter().all(|&s| s == 0.0));
        assert!(a.iter().all(|&s| s == 0.0));

        let line: Vec<Vec2> = (0..6).map(|t| Vec2::new(t as f64, 0.0)).collect();
        let (v, a) = finite_difference_kinematics(&line, 0.1).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(a.len(), 4);
        assert!(v.iter().all(|&s| (s - 10.0).abs() < 1e-9));
        assert!(a.iter().all(|&s| s.abs() < 1e-9));
    }

    #[test]
    fn kinematics_constant_acceleration() {
        // p_t = (0.5 * t^2 * dt^2, 0) gives unit acceleration at every
        // interior step: v_t = 0.5*(2t+1)*dt, a_t = 1.
        let dt = 0.25;
        let pos: Vec<Vec2> = (0..5)
            .map(|t| Vec2::new(0.5 * (t as f64).powi(2) * dt * dt, 0.0))
            .collect();
        let (v, a) = finite_difference_kinematics(&pos, dt).unwrap();
        for (t, &s) in v.iter().enumerate() {
            let expect = 0.5 * (2.0 * t as f64 + 1.0) * dt;
            assert!((s - expect).abs() < 1e-12);
        }
        for &m in &a {
            assert!((m - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn kinematics_rejects_short() {
        let short = vec![Vec2::new(0.0, 0.0); 2];
        assert_eq!(
            finite_difference_kinematics(&short, 0.1),
            Err(KinematicsError::TooShort { len: 2 })
        );
    }

    #[test]
    fn segment_distance_cases() {
        let a = Vec2::new(-1.0, 0.0);
        let b = Vec2::new(1.0, 0.0);
        assert_eq!(point_segment_distance(a, a, b), 0.0);
        assert!((point_segment_distance(Vec2::new(0.0, 1.0), a, b) - 1.0).abs() < 1e-12);
        assert!((point_segment_distance(Vec2::new(3.0, 0.0), a, b) - 2.0).abs() < 1e-12);
        // Degenerate segment.
        assert!((point_segment_distance(Vec2::new(0.0, 2.0), a, a) - a.distance(Vec2::new(0.0, 2.0))).abs() < 1e-12);
    }

    #[test]
    fn polyline_walks_and_resamples() {
        let path = PolylinePath::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(2.0, 0.0),
            Vec2::new(2.0, 2.0),
        ]);
        assert!((path.length() - 4.0).abs() < 1e-12);
        let (p, t) = path.sample(1.0);
        assert!(p.distance(Vec2::new(1.0, 0.0)) < 1e-12);
        assert!(t.distance(Vec2::new(1.0, 0.0)) < 1e-12);
        let (p, t) = path.sample(3.0);
        assert!(p.distance(Vec2::new(2.0, 1.0)) < 1e-12);
        assert!(t.distance(Vec2::new(0.0, 1.0)) < 1e-12);

        let r = path.resample(1.0);
        assert_eq!(r.len(), 5);
        assert!(r.last().unwrap().distance(Vec2::new(2.0, 2.0)) < 1e-12);
    }
}
