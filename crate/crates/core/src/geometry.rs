//! Planar geometry: SE(2) poses, convex polygons and the half-plane
//! point-in-polygon constraint family used by the planner.
//!
//! A convex polygon `A_1 … A_K` with counterclockwise vertex order contains a
//! point `P` iff `P` is on the left of every directed edge `A_k → A_{k+1}`.
//! Written as `K` affine functions of `P`,
//!
//! ```text
//! r_k(P) = (y_{k+1} - y_k)(x - x_k) - (x_{k+1} - x_k)(y - y_k) <= 0
//! ```
//!
//! which is what [`pip_residuals`] evaluates. The residuals are linear in `P`,
//! so they drop straight into an optimizer as inequality rows.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap applied to `tan²(Δθ/2)` near `Δθ = π`.
pub const DEFAULT_ANGLE_COST_CAP: f64 = 1.0e6;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl std::ops::Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl std::ops::Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

impl std::ops::Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let wrapped = theta.sin().atan2(theta.cos());
    // atan2 returns [-π, π]; map -π onto π.
    if wrapped <= -PI {
        wrapped + 2.0 * PI
    } else {
        wrapped
    }
}

/// Rotates `p` by `theta`.
pub fn rotate(theta: f64, p: Point2) -> Point2 {
    let (s, c) = theta.sin_cos();
    Point2::new(c * p.x - s * p.y, s * p.x + c * p.y)
}

/// Derivative of `rotate(theta, p)` with respect to `theta`.
pub fn rotate_dtheta(theta: f64, p: Point2) -> Point2 {
    let (s, c) = theta.sin_cos();
    Point2::new(-s * p.x - c * p.y, c * p.x - s * p.y)
}

/// A rigid planar transform; heading is kept in `(-π, π]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2 {
    pub position: Point2,
    pub heading: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            position: Point2::new(x, y),
            heading: normalize_angle(heading),
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    /// `self ∘ other`: first `other`, then `self`.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        Pose2 {
            position: transform_point(self, other.position),
            heading: normalize_angle(self.heading + other.heading),
        }
    }

    pub fn inverse(&self) -> Pose2 {
        let heading = -self.heading;
        Pose2 {
            position: -rotate(heading, self.position),
            heading: normalize_angle(heading),
        }
    }

    /// Expresses a world point in this pose's body frame.
    pub fn to_body(&self, p_world: Point2) -> Point2 {
        rotate(-self.heading, p_world - self.position)
    }
}

/// `R(θ)·p_body + position`.
pub fn transform_point(pose: &Pose2, p_body: Point2) -> Point2 {
    rotate(pose.heading, p_body) + pose.position
}

/// `min(tan²(Δθ/2), cap)`; period `2π`, zero at alignment.
pub fn wrap_angle_cost(delta: f64) -> f64 {
    wrap_angle_cost_capped(delta, DEFAULT_ANGLE_COST_CAP)
}

pub fn wrap_angle_cost_capped(delta: f64, cap: f64) -> f64 {
    let r = wrap_angle_residual(delta, cap);
    r * r
}

/// Signed residual whose square is [`wrap_angle_cost_capped`].
pub fn wrap_angle_residual(delta: f64, cap: f64) -> f64 {
    let t = (0.5 * delta).tan();
    let bound = cap.sqrt();
    if t.is_finite() {
        t.clamp(-bound, bound)
    } else {
        bound
    }
}

/// Derivative of [`wrap_angle_residual`] in `Δθ`; zero where the cap is active.
pub fn wrap_angle_residual_derivative(delta: f64, cap: f64) -> f64 {
    let t = (0.5 * delta).tan();
    if !t.is_finite() || t.abs() >= cap.sqrt() {
        0.0
    } else {
        0.5 * (1.0 + t * t)
    }
}

/// Counterclockwise convex polygon with at least three vertices.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexPolygon {
    vertices: Vec<Point2>,
}

impl ConvexPolygon {
    /// Validates CCW order, strict convexity and vertex distinctness.
    pub fn new(vertices: Vec<Point2>) -> Result<Self> {
        let k = vertices.len();
        if k < 3 {
            return Err(Error::InvalidPolygon(format!("need at least 3 vertices, got {k}")));
        }
        if vertices.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPolygon("non-finite vertex".into()));
        }
        let scale = vertices
            .iter()
            .flat_map(|v| [v.x.abs(), v.y.abs()])
            .fold(0.0_f64, f64::max)
            .max(1e-300);
        for i in 0..k {
            let a = vertices[i];
            let b = vertices[(i + 1) % k];
            if a.dist(b) <= 1e-12 * scale {
                return Err(Error::InvalidPolygon(format!("duplicate consecutive vertex at {i}")));
            }
        }
        let area2: f64 = (0..k).map(|i| vertices[i].cross(vertices[(i + 1) % k])).sum();
        if area2 <= 0.0 {
            return Err(Error::InvalidPolygon("vertices are not counterclockwise".into()));
        }
        for i in 0..k {
            let a = vertices[i];
            let b = vertices[(i + 1) % k];
            let c = vertices[(i + 2) % k];
            let e1 = b - a;
            let e2 = c - b;
            if e1.cross(e2) <= 1e-12 * e1.norm() * e2.norm() {
                return Err(Error::InvalidPolygon(format!(
                    "not strictly convex at vertex {}",
                    (i + 1) % k
                )));
            }
        }
        Ok(Self { vertices })
    }

    /// Skips validation; only for rigid images of already-valid shapes.
    pub(crate) fn from_trusted(vertices: Vec<Point2>) -> Self {
        debug_assert!(vertices.len() >= 3);
        Self { vertices }
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Iterates the directed edges `(A_k, A_{k+1})`, wrapping at the end.
    pub fn edges(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        let k = self.vertices.len();
        (0..k).map(move |i| (self.vertices[i], self.vertices[(i + 1) % k]))
    }

    pub fn signed_area(&self) -> f64 {
        0.5 * self.edges().map(|(a, b)| a.cross(b)).sum::<f64>()
    }

    pub fn centroid(&self) -> Point2 {
        let mut cx = 0.0;
        let mut cy = 0.0;
        let mut a2 = 0.0;
        for (a, b) in self.edges() {
            let c = a.cross(b);
            a2 += c;
            cx += (a.x + b.x) * c;
            cy += (a.y + b.y) * c;
        }
        Point2::new(cx / (3.0 * a2), cy / (3.0 * a2))
    }

    pub fn transformed(&self, pose: &Pose2) -> ConvexPolygon {
        ConvexPolygon::from_trusted(self.vertices.iter().map(|v| transform_point(pose, *v)).collect())
    }
}

/// One residual per edge; all `<= 0` iff `p` is inside or on the boundary.
pub fn pip_residuals(p: Point2, poly: &ConvexPolygon) -> Vec<f64> {
    poly.edges().map(|(a, b)| edge_residual(p, a, b)).collect()
}

#[inline]
pub(crate) fn edge_residual(p: Point2, a: Point2, b: Point2) -> f64 {
    (b.y - a.y) * (p.x - a.x) - (b.x - a.x) * (p.y - a.y)
}

/// True iff `p` is at least `margin` inside every edge.
pub fn point_in_polygon(p: Point2, poly: &ConvexPolygon, margin: f64) -> bool {
    poly.edges()
        .all(|(a, b)| edge_residual(p, a, b) <= -margin * a.dist(b))
}

/// Largest signed distance from `p` to any edge line; `<= 0` inside.
pub fn max_edge_distance(p: Point2, poly: &ConvexPolygon) -> f64 {
    poly.edges()
        .map(|(a, b)| edge_residual(p, a, b) / a.dist(b))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Body geometry of one robot. All lengths in meters, body frame x forward.
///
/// The anchor sits on the rear and the opening on the front. `anchor_point`
/// is the projected anchor zero position: where the seated anchor would be
/// if its floating joint were rigid at rest. `opening_point` is where that
/// point lands inside the other robot when the pair is coupled at zero
/// offset, so the two coincide for a perfectly aligned pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotFootprint {
    pub half_width: f64,
    pub half_depth: f64,
    /// Distance from the anchor point back to the anchor head.
    pub anchor_length: f64,
    pub anchor_point: Point2,
    pub opening_point: Point2,
    pub left_point: Point2,
    pub right_point: Point2,
}

impl Default for RobotFootprint {
    fn default() -> Self {
        // 50 x 50 mm body, 5 mm anchor, 2.5 mm body gap, 3.5 mm seat depth.
        Self::new(0.025, 0.025, 0.005, 0.0025, 0.0035)
    }
}

impl RobotFootprint {
    /// Builds the standard layout from body half-extents, anchor length, the
    /// nominal gap between coupled bodies and the seat depth of the anchor
    /// point behind the opening robot's front face.
    pub fn new(half_width: f64, half_depth: f64, anchor_length: f64, gap: f64, seat_depth: f64) -> Self {
        Self {
            half_width,
            half_depth,
            anchor_length,
            anchor_point: Point2::new(-half_depth - gap - seat_depth, 0.0),
            opening_point: Point2::new(half_depth - seat_depth, 0.0),
            left_point: Point2::new(0.0, half_width),
            right_point: Point2::new(0.0, -half_width),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.half_width) || !ok(self.half_depth) || !ok(self.anchor_length) {
            return Err(Error::InvalidFootprint(
                "half_width, half_depth and anchor_length must be positive".into(),
            ));
        }
        let reach = self.half_depth.max(self.half_width) + 2.0 * self.anchor_length;
        for (name, p) in self.connection_points() {
            if !p.is_finite() || p.x.abs() > reach || p.y.abs() > reach {
                return Err(Error::InvalidFootprint(format!("{name} lies outside the body reach")));
            }
        }
        Ok(())
    }

    pub fn connection_points(&self) -> [(&'static str, Point2); 4] {
        [
            ("anchor", self.anchor_point),
            ("opening", self.opening_point),
            ("left", self.left_point),
            ("right", self.right_point),
        ]
    }

    /// Anchor head in body frame: the anchor point shifted back by `l`.
    pub fn head_point(&self) -> Point2 {
        self.anchor_point + Point2::new(-self.anchor_length, 0.0)
    }

    pub fn front_right(&self) -> Point2 {
        Point2::new(self.half_depth, -self.half_width)
    }

    pub fn front_left(&self) -> Point2 {
        Point2::new(self.half_depth, self.half_width)
    }

    pub fn body_polygon(&self) -> ConvexPolygon {
        let (w, d) = (self.half_width, self.half_depth);
        ConvexPolygon::from_trusted(vec![
            Point2::new(-d, -w),
            Point2::new(d, -w),
            Point2::new(d, w),
            Point2::new(-d, w),
        ])
    }

    pub fn opening_polygon(&self) -> ConvexPolygon {
        ConvexPolygon::from_trusted(vec![Point2::default(), self.front_right(), self.front_left()])
    }
}

/// World-frame body rectangle.
pub fn footprint_polygon(pose: &Pose2, fp: &RobotFootprint) -> ConvexPolygon {
    fp.body_polygon().transformed(pose)
}

/// World-frame triangle `(R_j, C_j^r, C_j^l)` bounding where a seated
/// anchor point may sit.
pub fn opening_triangle(pose: &Pose2, fp: &RobotFootprint) -> ConvexPolygon {
    fp.opening_polygon().transformed(pose)
}

/// Crossing-number point-in-polygon test, independent of the half-plane
/// residuals. Works for any simple polygon; used only as a checking oracle.
pub mod raycast {
    use super::Point2;

    /// True if `p` is inside or within `tol` of the boundary.
    pub fn contains(vertices: &[Point2], p: Point2, tol: f64) -> bool {
        let n = vertices.len();
        for i in 0..n {
            if segment_distance(p, vertices[i], vertices[(i + 1) % n]) <= tol {
                return true;
            }
        }
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let (a, b) = (vertices[i], vertices[j]);
            if (a.y > p.y) != (b.y > p.y) {
                let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if p.x < x_cross {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    fn segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
        let ab = b - a;
        let len2 = ab.dot(ab);
        let t = if len2 > 0.0 { ((p - a).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
        p.dist(a + ab * t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn unit_square() -> ConvexPolygon {
        ConvexPolygon::new(vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(0.0, 1.0),
        ])
        .unwrap()
    }

    #[test]
    fn residuals_interior_boundary_exterior() {
        let sq = unit_square();
        assert!(pip_residuals(Point2::new(0.5, 0.5), &sq).iter().all(|r| *r < 0.0));

        let r = pip_residuals(Point2::new(0.5, 0.0), &sq);
        assert_eq!(r[0], 0.0);
        assert!(r[1..].iter().all(|v| *v < 0.0));

        let r = pip_residuals(Point2::new(2.0, 0.5), &sq);
        assert_eq!(r[1], 1.0);
    }

    #[test]
    fn rejects_bad_polygons() {
        let cw = vec![Point2::new(0.0, 0.0), Point2::new(0.0, 1.0), Point2::new(1.0, 0.0)];
        assert!(ConvexPolygon::new(cw).is_err());
        let collinear = vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(2.0, 0.0),
            Point2::new(1.0, 1.0),
        ];
        assert!(ConvexPolygon::new(collinear).is_err());
        let dented = vec![
            Point2::new(0.0, 0.0),
            Point2::new(2.0, 0.0),
            Point2::new(1.0, 0.5),
            Point2::new(2.0, 2.0),
            Point2::new(0.0, 2.0),
        ];
        assert!(ConvexPolygon::new(dented).is_err());
        assert!(ConvexPolygon::new(vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0)]).is_err());
        let dup = vec![
            Point2::new(0.0, 0.0),
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(0.0, 1.0),
        ];
        assert!(ConvexPolygon::new(dup).is_err());
    }

    #[test]
    fn margin_membership() {
        let sq = unit_square();
        assert!(point_in_polygon(Point2::new(0.5, 0.5), &sq, 0.1));
        assert!(!point_in_polygon(Point2::new(0.05, 0.5), &sq, 0.1));
        assert!(point_in_polygon(Point2::new(0.5, 0.0), &sq, 0.0));
    }

    #[test]
    fn transform_examples() {
        let p = transform_point(&Pose2::identity(), Point2::new(0.3, 0.1));
        assert_eq!(p, Point2::new(0.3, 0.1));
        let q = transform_point(&Pose2::new(0.0, 0.0, FRAC_PI_2), Point2::new(1.0, 0.0));
        assert_abs_diff_eq!(q.x, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.y, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn angle_cost_examples() {
        assert_eq!(wrap_angle_cost(0.0), 0.0);
        assert_abs_diff_eq!(wrap_angle_cost(2.0 * PI), 0.0, epsilon = 1e-24);
        assert_abs_diff_eq!(wrap_angle_cost(FRAC_PI_2), 1.0, epsilon = 1e-12);
        assert_eq!(wrap_angle_cost(PI), DEFAULT_ANGLE_COST_CAP);
    }

    #[test]
    fn angle_cost_monotone_below_pi() {
        let mut prev = -1.0;
        let mut t = 0.0;
        while t <= PI - 0.1 {
            let c = wrap_angle_cost(t);
            assert!(c > prev);
            prev = c;
            t += 1e-3;
        }
    }

    #[test]
    fn footprint_at_origin() {
        let fp = RobotFootprint::default();
        let poly = footprint_polygon(&Pose2::identity(), &fp);
        for v in poly.vertices() {
            assert_abs_diff_eq!(v.x.abs(), 0.025, epsilon = 1e-15);
            assert_abs_diff_eq!(v.y.abs(), 0.025, epsilon = 1e-15);
        }
        let flipped = footprint_polygon(&Pose2::new(0.1, -0.2, PI), &fp);
        assert!(ConvexPolygon::new(flipped.vertices().to_vec()).is_ok());
    }

    #[test]
    fn opening_triangle_at_origin() {
        let tri = opening_triangle(&Pose2::identity(), &RobotFootprint::default());
        assert_eq!(
            tri.vertices(),
            &[Point2::new(0.0, 0.0), Point2::new(0.025, -0.025), Point2::new(0.025, 0.025)]
        );
        assert!(tri.signed_area() > 0.0);
    }

    #[test]
    fn coupled_anchor_point_in_opening() {
        // Opening robot at the origin, anchor robot ahead of it with the two
        // connection points coinciding.
        let fp = RobotFootprint::default();
        let opening = Pose2::new(0.0, 0.0, 0.0);
        let c_world = transform_point(&opening, fp.opening_point);
        let anchor = Pose2::new(c_world.x - fp.anchor_point.x, c_world.y - fp.anchor_point.y, 0.0);
        let c_anchor = transform_point(&anchor, fp.anchor_point);
        assert_abs_diff_eq!(c_anchor.dist(c_world), 0.0, epsilon = 1e-15);
        let res = pip_residuals(c_anchor, &opening_triangle(&opening, &fp));
        assert!(res.iter().all(|r| *r < 0.0), "{res:?}");
    }

    fn arb_pose() -> impl Strategy<Value = Pose2> {
        (-5.0..5.0f64, -5.0..5.0f64, -10.0..10.0f64).prop_map(|(x, y, t)| Pose2::new(x, y, t))
    }

    fn arb_point() -> impl Strategy<Value = Point2> {
        (-5.0..5.0f64, -5.0..5.0f64).prop_map(|(x, y)| Point2::new(x, y))
    }

    proptest! {
        #[test]
        fn composition_matches_matrix_product(g1 in arb_pose(), g2 in arb_pose(), p in arb_point()) {
            // Homogeneous-matrix oracle.
            let mat = |g: &Pose2| {
                let (s, c) = g.heading.sin_cos();
                [[c, -s, g.position.x], [s, c, g.position.y], [0.0, 0.0, 1.0]]
            };
            let (m1, m2) = (mat(&g1), mat(&g2));
            let v = [p.x, p.y, 1.0];
            let mut m2v = [0.0; 3];
            for i in 0..3 { for k in 0..3 { m2v[i] += m2[i][k] * v[k]; } }
            let mut out = [0.0; 3];
            for i in 0..3 { for k in 0..3 { out[i] += m1[i][k] * m2v[k]; } }
            let composed = transform_point(&g1.compose(&g2), p);
            let chained = transform_point(&g1, transform_point(&g2, p));
            prop_assert!((composed.x - out[0]).abs() < 1e-12 && (composed.y - out[1]).abs() < 1e-12);
            prop_assert!(composed.dist(chained) < 1e-12);
            let back = g1.inverse().compose(&g1);
            prop_assert!(back.position.norm() < 1e-12 && back.heading.abs() < 1e-12);
        }

        #[test]
        fn transform_is_isometry(g in arb_pose(), a in arb_point(), b in arb_point()) {
            let d0 = a.dist(b);
            let d1 = transform_point(&g, a).dist(transform_point(&g, b));
            prop_assert!((d0 - d1).abs() < 1e-12);
        }

        #[test]
        fn angle_cost_periodic(t in -3.0..3.0f64, n in -5i32..5) {
            prop_assume!((t.abs() - PI).abs() > 0.05);
            let shifted = wrap_angle_cost(t + 2.0 * PI * n as f64);
            prop_assert!((wrap_angle_cost(t) - shifted).abs() < 1e-9);
        }

        #[test]
        fn footprint_area_preserved(g in arb_pose()) {
            let fp = RobotFootprint::default();
            let poly = footprint_polygon(&g, &fp);
            prop_assert!((poly.signed_area() - 4.0 * fp.half_width * fp.half_depth).abs() < 1e-12);
            prop_assert!(opening_triangle(&g, &fp).signed_area() > 0.0);
        }

        #[test]
        fn heading_normalized(t in -100.0..100.0f64) {
            let h = normalize_angle(t);
            prop_assert!(h > -PI && h <= PI);
            prop_assert!((h.sin() - t.sin()).abs() < 1e-9 && (h.cos() - t.cos()).abs() < 1e-9);
        }
    }
}
