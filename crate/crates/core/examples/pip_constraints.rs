//! Half-plane residuals of a convex polygon, the opening triangle of a
//! robot, and agreement with the ray-casting oracle.

use flexcouple::geometry::{opening_triangle, pip_residuals, point_in_polygon, raycast, ConvexPolygon, Point2, Pose2, RobotFootprint};
use flexcouple::pipcheck::{residual_classifier, run_pip_check};

fn main() -> flexcouple::Result<()> {
    let square = ConvexPolygon::new(vec![
        Point2::new(0.0, 0.0),
        Point2::new(1.0, 0.0),
        Point2::new(1.0, 1.0),
        Point2::new(0.0, 1.0),
    ])?;
    for p in [Point2::new(0.5, 0.5), Point2::new(1.5, 0.5), Point2::new(1.0, 0.5)] {
        let r = pip_residuals(p, &square);
        println!("({:.1}, {:.1}) residuals {r:?} -> inside: {}", p.x, p.y, r.iter().all(|v| *v <= 0.0));
    }

    let fp = RobotFootprint::default();
    let pose = Pose2::new(0.1, 0.0, 0.3);
    let tri = opening_triangle(&pose, &fp);
    println!("\nopening triangle of a robot at {pose:?}:");
    for v in tri.vertices() {
        println!("  ({:.4}, {:.4})", v.x, v.y);
    }
    let c = tri.centroid();
    println!(
        "centroid inside with 3 mm margin: {}, oracle: {}",
        point_in_polygon(c, &tri, 0.003),
        raycast::contains(tri.vertices(), c, 0.0)
    );

    let report = run_pip_check(10_000, 1, residual_classifier);
    println!("\nfuzz: {} samples, {} inside, {} disagreements", report.samples, report.inside, report.disagreements.len());
    Ok(())
}
