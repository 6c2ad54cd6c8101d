//! Goal assignment, pair augmentation and conflict-free active selection
//! for four robots forming a line.

use flexcouple::coordination::{assign_active_pairs, assign_connection_pairs, augment_pairs, PairRegistry, TargetConfig};
use flexcouple::dynamics::RobotState;
use flexcouple::geometry::RobotFootprint;

fn main() -> flexcouple::Result<()> {
    let fp = RobotFootprint::default();
    let target = TargetConfig::line(4, &fp);
    let states: Vec<RobotState> = [(0.30, 0.05, 0.1), (0.0, 0.0, 0.0), (0.2, -0.1, 0.2), (0.1, 0.1, -0.1)]
        .iter()
        .map(|&(x, y, t)| RobotState::new(x, y, t, 0.0, 0.0))
        .collect();
    let goal = assign_connection_pairs(&target, &states)?;
    let pairs = augment_pairs(&goal, &vec![fp; 4])?;
    for p in &pairs {
        let (a, b) = p.robots();
        println!("pair {a}-{b}: {:?}, anchor on robot {:?}, status {}", p.kind, p.anchor_index, p.status.as_str());
    }
    let mut reg = PairRegistry::new(pairs, 0.003);
    assign_active_pairs(&mut reg, &states);
    println!("active (robot-disjoint): {:?}", reg.active);
    reg.check_invariants().expect("registry invariants");
    Ok(())
}
