//! Closed-loop receding-horizon control of one robot to a goal point.
//!
//! Costs are in SI units, so with the default `w_g = 1` a few centimetres of
//! position error weigh little against the input penalty and the robot
//! settles short of the goal. Raising `w_g` tightens the final approach.

use flexcouple::dynamics::{euler_step, RobotState};
use flexcouple::geometry::Point2;
use flexcouple::mpc::{Behavior, MpcConfig, MpcController};

fn drive(w_g: f64) -> flexcouple::Result<()> {
    let mut cfg = MpcConfig::default();
    cfg.weights.w_g = [w_g; 2];
    let dt = cfg.dt_s;
    let mut ctrl = MpcController::new(cfg)?;
    let goal = Point2::new(0.3, 0.05);
    let mut x = RobotState::default();
    let behavior = Behavior::Goto(vec![Some(goal)]);
    println!("w_g = {w_g}");
    for k in 0..=150 {
        let out = ctrl.step(&[x], &behavior, &[])?;
        if k % 25 == 0 {
            println!(
                "  t {:4.1}  pos ({:.3}, {:.3})  v {:+.3}  dist {:.4}  iters {}",
                k as f64 * dt,
                x.px,
                x.py,
                x.v,
                x.position().dist(goal),
                out.stats.iterations
            );
        }
        x = euler_step(&x, &out.controls[0], dt);
    }
    Ok(())
}

fn main() -> flexcouple::Result<()> {
    drive(1.0)?;
    drive(100.0)
}
