//! Median solve time as robots and horizon grow.

use flexcouple::sim::{timing_cell, SimSettings};

fn main() -> flexcouple::Result<()> {
    let s = SimSettings::default();
    println!("   N  H_m  median ms");
    for n in [2, 4, 8] {
        for h in [3, 5, 10] {
            let c = timing_cell(&s, n, h, 15, 1)?;
            println!("{n:4} {h:4}  {:9.3}", c.median_ms);
        }
    }
    Ok(())
}
