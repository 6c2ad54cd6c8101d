//! Loads a scenario file and runs its schedule, printing the outcome.
//!
//! cargo run --example run_config -- crates/core/examples/configs/couple_and_drive.toml

use flexcouple::sim::{run_scenario, ScenarioConfig};

fn main() -> flexcouple::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/couple_and_drive.toml").into());
    let cfg = ScenarioConfig::load(path.as_ref())?;
    let log = run_scenario(&cfg)?;
    let s = &log.summary;
    println!("{} log rows over {:.1} s, config {}", log.rows.len(), s.duration_s, &s.config_hash[..12]);
    for p in &s.phases {
        println!("  {:<8} {:5.1} -> {:5.1} s{}", p.kind, p.start_s, p.end_s, if p.ended_early { " (ended early)" } else { "" });
    }
    for p in &s.pairs {
        println!("  pair {}-{}: {} connected={}", p.robots.0, p.robots.1, p.status, p.connected);
    }
    for e in &s.events {
        println!("  {:6.2} s  {:?} {}>{}", e.t, e.kind, e.anchor, e.opening);
    }
    Ok(())
}
