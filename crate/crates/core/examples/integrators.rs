//! Euler against RK4 for the unicycle with acceleration inputs, and the
//! open-loop wiggle command.

use flexcouple::dynamics::{euler_step, rk4_step, wiggle_command, ControlInput, RobotState, WiggleParams};

/// Position gap after 1 s of coasting at `(v, w)` with no input.
fn gap_mm(v: f64, w: f64, u: ControlInput) -> f64 {
    let (mut e, mut r) = (RobotState::new(0.0, 0.0, 0.0, v, w), RobotState::new(0.0, 0.0, 0.0, v, w));
    for _ in 0..10 {
        e = euler_step(&e, &u, 0.1);
        r = rk4_step(&r, &u, 0.1);
    }
    e.position().dist(r.position()) * 1e3
}

fn main() {
    println!("Euler vs RK4 after 1 s at dt = 0.1 s (mm):");
    println!("  v m/s   w=0.05   w=0.15   w=0.5    w=2.0");
    for v in [0.02, 0.05, 0.1] {
        let row: Vec<String> = [0.05, 0.15, 0.5, 2.0].iter().map(|w| format!("{:7.3}", gap_mm(v, *w, ControlInput::zero()))).collect();
        println!("  {v:5.2}  {}", row.join("  "));
    }
    println!("with 0.05 m/s^2 of acceleration from rest: {:.3} mm", gap_mm(0.0, 0.0, ControlInput::new(0.05, 0.0)));

    let p = WiggleParams::default();
    println!("\nwiggle with v_bias {} m/s, w_max {} rad/s, B {:.3} rad/s:", p.v_bias_mps, p.w_max_radps, p.frequency_radps);
    for k in 0..=8 {
        let t = k as f64 * 0.125;
        let (v, w) = wiggle_command(t, &p);
        println!("  t {t:5.3}  v {v:.3}  w {w:+.3}");
    }
}
