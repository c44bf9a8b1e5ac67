//! Full alternating optimization on the default scenario.

use uavmec::optimizer::{alternate, feasibility_audit, AoOptions};
use uavmec::scenario::default_scenario;

fn main() -> uavmec::Result<()> {
    env_logger::init();
    let s = default_scenario();
    let trace = alternate(&s, &AoOptions::default())?;
    for r in &trace.blocks {
        println!("{:>3} {:<22} eta = {:+.9e} J  residual = {:.2e}  t = {:.1}s", r.iteration, r.block, r.eta, r.residual, r.seconds);
    }
    let sol = &trace.solution;
    println!("best iteration {} of {}, converged: {}", trace.best_iteration, trace.iterations.len(), trace.converged);
    for (k, rem) in sol.ledger.remaining.iter().enumerate() {
        println!(
            "GE {k}: harvested {:.6e} J, compute {:.6e} J, transmit {:.6e} J, remaining {:.6e} J",
            sol.ledger.harvested[k], sol.ledger.compute[k], sol.ledger.transmit[k], rem
        );
    }
    let audit = feasibility_audit(&s, sol);
    println!("max violation {:.3e}", audit.max_violation());
    Ok(())
}
