//! One trajectory block from the snapshot of a single AO iteration.

use uavmec::optimizer::{alternate, AoOptions};
use uavmec::scenario::default_scenario;
use uavmec::trajectory::{solve_trajectory, TrajectoryInputs, TrajectoryOptions};

fn main() -> uavmec::Result<()> {
    let s = default_scenario();
    let trace = alternate(&s, &AoOptions { max_iters: 1, ..AoOptions::default() })?;
    let sol = &trace.solution;
    let inp = TrajectoryInputs {
        channels: &sol.channels,
        uplink: &sol.uplink,
        allocation: &sol.allocation,
        downlink: &sol.downlink,
    };
    let out = solve_trajectory(&s, &sol.trajectory, &inp, TrajectoryOptions::default())?;
    println!("eta before {:.9e} J, after {:.9e} J", sol.ledger.eta, out.eta);
    for (i, (fp, sur)) in out.fp_history.iter().zip(&out.surrogate_history).enumerate() {
        println!("FP step {i}: exact {fp:.9e}, surrogate {sur:.9e}");
    }
    for (n, (a, b)) in sol.trajectory.points.iter().zip(&out.trajectory.points).enumerate() {
        println!("q[{n:>2}] ({:7.3}, {:7.3}) -> ({:7.3}, {:7.3})", a.x, a.y, b.x, b.y);
    }
    println!("max cap violation {:.1e}", out.caps.max_violation(&s, &out.trajectory));
    Ok(())
}
