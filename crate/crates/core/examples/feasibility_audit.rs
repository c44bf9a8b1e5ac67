//! Constraint audit of a solution, before and after tampering with it.

use uavmec::optimizer::{alternate, feasibility_audit, AoOptions, Baseline};
use uavmec::scenario::default_scenario;

fn main() -> uavmec::Result<()> {
    let s = default_scenario();
    let trace = alternate(&s, &AoOptions::for_baseline(Baseline::NoTrajectory))?;
    let mut sol = trace.solution;
    let audit = feasibility_audit(&s, &sol);
    for (name, v) in &audit.entries {
        println!("{name:<32} {v:+.3e}");
    }
    println!("passes: {}", audit.passes());

    sol.trajectory.points[3].x += 10.0;
    sol.downlink.rho[0][0] = 1.5;
    let audit = feasibility_audit(&s, &sol);
    println!("after tampering: {:?}", audit.failures());
    Ok(())
}
