//! The full design against the three reference schemes on one scenario.
//!
//! Usage: `cargo run --release --example baselines -- [seed] [antennas]`

use uavmec::optimizer::{alternate, AoOptions, Baseline};
use uavmec::scenario::default_scenario;

fn main() -> uavmec::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let mut s = default_scenario();
    if let Some(seed) = args.next() {
        s.rng_seed = seed.parse().expect("seed must be an integer");
    }
    if let Some(l) = args.next() {
        s.uav_antennas = l.parse().expect("antenna count must be an integer");
    }
    for b in Baseline::ALL {
        let trace = alternate(&s, &AoOptions::for_baseline(b))?;
        let last = trace.blocks.last().map_or(0.0, |r| r.seconds);
        println!(
            "{:<14} eta = {:.6e} J  iterations = {:>2}  converged = {}  {:.1}s",
            b.name(),
            trace.eta(),
            trace.iterations.len(),
            trace.converged,
            last
        );
    }
    Ok(())
}
