//! A seated pair is pulled apart. A plain pull is held by the tips; the
//! wiggle frees them and the anchor slides out.

use flexcouple::sim::{decoupling_trial, trial_rng, DecouplingSetup, SimSettings};

fn main() -> flexcouple::Result<()> {
    let settings = SimSettings::default();
    let setup = DecouplingSetup { timeout_s: 10.0, ..DecouplingSetup::default() };
    let wiggle = decoupling_trial(&settings, &setup, 0, &mut trial_rng(3, 0, 0))?;
    println!("wiggle: decoupled {} in {:.2} s", wiggle.success, wiggle.time_s);
    let mut straight = settings.clone();
    straight.wiggle.w_max_radps = 0.0;
    let pull = decoupling_trial(&straight, &setup, 0, &mut trial_rng(3, 0, 0))?;
    println!("straight pull: decoupled {}, pull blocked {}", pull.success, pull.pull_blocked);
    Ok(())
}
