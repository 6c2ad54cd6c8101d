//! Randomized agreement check between the half-plane residuals and a
//! crossing-number oracle.

use std::f64::consts::TAU;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{max_edge_distance, pip_residuals, raycast, ConvexPolygon, Point2};
use crate::sim::trial_rng;

/// Points closer than this to an edge are redrawn: both tests are exact
/// there only up to rounding.
const BOUNDARY_BAND: f64 = 1e-9;

/// Classification under test: `true` means inside.
pub type Classifier = fn(Point2, &ConvexPolygon) -> bool;

pub fn residual_classifier(p: Point2, poly: &ConvexPolygon) -> bool {
    pip_residuals(p, poly).iter().all(|r| *r <= 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipCase {
    pub sample: usize,
    pub polygon: Vec<Point2>,
    pub point: Point2,
    pub classified_inside: bool,
    pub oracle_inside: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipCheckReport {
    pub samples: usize,
    pub seed: u64,
    pub inside: usize,
    pub disagreements: Vec<PipCase>,
}

impl PipCheckReport {
    pub fn passed(&self) -> bool {
        self.disagreements.is_empty()
    }
}

/// Strictly convex CCW polygon with `k` vertices on a random ellipse.
pub fn random_convex_polygon(rng: &mut ChaCha8Rng, k: usize) -> ConvexPolygon {
    loop {
        let mut angles: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..TAU)).collect();
        angles.sort_by(f64::total_cmp);
        let gaps_ok = angles.windows(2).all(|w| w[1] - w[0] > 1e-3) && angles[0] + TAU - angles[k - 1] > 1e-3;
        let (cx, cy) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let (rx, ry) = (rng.gen_range(0.05..2.0), rng.gen_range(0.05..2.0));
        let tilt: f64 = rng.gen_range(0.0..TAU);
        if !gaps_ok {
            continue;
        }
        let (s, c) = tilt.sin_cos();
        let verts = angles
            .iter()
            .map(|a| {
                let (x, y) = (rx * a.cos(), ry * a.sin());
                Point2::new(cx + c * x - s * y, cy + s * x + c * y)
            })
            .collect();
        if let Ok(poly) = ConvexPolygon::new(verts) {
            return poly;
        }
    }
}

fn bounding_box(poly: &ConvexPolygon) -> (Point2, Point2) {
    poly.vertices().iter().fold(
        (Point2::new(f64::INFINITY, f64::INFINITY), Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY)),
        |(lo, hi), v| (Point2::new(lo.x.min(v.x), lo.y.min(v.y)), Point2::new(hi.x.max(v.x), hi.y.max(v.y))),
    )
}

/// Draws `samples` (polygon, point) cases with 3 to 10 vertices and points
/// from a box 50 % larger than the polygon, then compares `classify` with
/// the oracle.
pub fn run_pip_check(samples: usize, seed: u64, classify: Classifier) -> PipCheckReport {
    let mut rng = trial_rng(seed, 0, 0);
    let mut report = PipCheckReport { samples, seed, inside: 0, disagreements: Vec::new() };
    for sample in 0..samples {
        let k = rng.gen_range(3..=10);
        let poly = random_convex_polygon(&mut rng, k);
        let (lo, hi) = bounding_box(&poly);
        let pad = (hi - lo) * 0.25;
        let point = loop {
            let p = Point2::new(rng.gen_range(lo.x - pad.x..hi.x + pad.x), rng.gen_range(lo.y - pad.y..hi.y + pad.y));
            if max_edge_distance(p, &poly).abs() > BOUNDARY_BAND {
                break p;
            }
        };
        let classified_inside = classify(point, &poly);
        let oracle_inside = raycast::contains(poly.vertices(), point, 0.0);
        report.inside += usize::from(oracle_inside);
        if classified_inside != oracle_inside {
            report.disagreements.push(PipCase {
                sample,
                polygon: poly.vertices().to_vec(),
                point,
                classified_inside,
                oracle_inside,
            });
        }
    }
    report
}
