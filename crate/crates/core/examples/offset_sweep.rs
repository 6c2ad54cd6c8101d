//! Coupling success rate against lateral offset (a small version of
//! `flexcouple couple-bench`). Pass the trial count as the first argument.

use flexcouple::sim::{offsets_from_mm, run_coupling_experiment, summarize_offsets, CouplingSetup, SimSettings};

fn main() -> flexcouple::Result<()> {
    let trials = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(10);
    let offsets = offsets_from_mm(&[0.0, 4.0, 8.0, 16.0, 24.0, 30.0]);
    let results = run_coupling_experiment(&SimSettings::default(), &CouplingSetup::default(), &offsets, trials, 1, 1)?;
    for s in summarize_offsets(&offsets, &results) {
        println!("offset {:4.1} mm  rate {:.2}  mean time {:5.2} s", s.offset_m * 1e3, s.success_rate, s.mean_time_s);
    }
    Ok(())
}
