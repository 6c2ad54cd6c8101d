//! The anchor's asymmetric force characteristics: easy to push in, hard to
//! pull out unless a wiggle has freed the tips.

use flexcouple::anchor::{clamp_joint, resolve_pull, resolve_push, AnchorJointState, CoupledOffset, ForceProfile, JointLimits};

fn main() {
    let profile = ForceProfile::default();
    let limits = JointLimits::default();
    println!("forward peak over travel: {:.2} N", profile.forward_peak(limits.travel_m * 1e3));
    println!("pull barrier (seated):    {:.2} N", profile.pull_barrier());
    println!("pull barrier (wiggled):   {:.2} N", profile.released_barrier());

    for f in [0.1, 0.19, 0.3, 0.5] {
        let (j, out) = resolve_push(AnchorJointState::default(), f, &profile, &limits);
        println!("push {f:.2} N -> {:?}, insertion {:.1} mm", out.event, j.insertion * 1e3);
    }

    let seated = AnchorJointState { insertion: limits.travel_m, yaw: 0.0, tip_seated: true };
    let calm = [0.0, 0.05, -0.05];
    let wiggled = [0.0, 0.2, 0.4, 0.1, -0.3];
    for (name, hist) in [("no wiggle", &calm[..]), ("0.4 rad wiggle", &wiggled[..])] {
        let (_, out) = resolve_pull(seated, 0.5, hist, 0.25, &profile);
        println!("pull 0.5 N after {name}: {:?}", out.event);
    }

    for axial in [-0.004, 0.0, 0.002, 0.004] {
        let (j, v) = clamp_joint(CoupledOffset { axial, yaw: 0.1 }, &limits);
        println!("coupled offset {:+.1} mm -> slide {:.1} mm, violation {v:?}", axial * 1e3, j.insertion * 1e3);
    }
}
