//! End-to-end coupling in the simulator: two robots 65 mm apart align and
//! the anchor is pushed through the beams into the opening.

use flexcouple::sim::{coupling_trial, trial_rng, CouplingSetup, SimSettings};

fn main() -> flexcouple::Result<()> {
    let settings = SimSettings::default();
    let setup = CouplingSetup::default();
    for offset_mm in [0.0, 4.0, 16.0] {
        let r = coupling_trial(&settings, &setup, offset_mm * 1e-3, 0, &mut trial_rng(7, 0, 0))?;
        println!(
            "offset {offset_mm:4.1} mm: success {} after {:.1} s ({} plans, {} fail-safe)",
            r.success, r.time_s, r.plans, r.fail_safe_plans
        );
    }
    Ok(())
}
