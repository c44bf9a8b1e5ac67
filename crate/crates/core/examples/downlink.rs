//! SDR plus SCA downlink beams and power splitting, with rank-one recovery.

use uavmec::channel::{synthesize_channels, NlosDraw};
use uavmec::downlink::{solve_downlink, DownlinkOptions, DownlinkSolution};
use uavmec::optimizer::{downlink_slots, slot_inputs};
use uavmec::resource::{solve_resource_allocation, Allocation, TimeSplit};
use uavmec::scenario::{default_scenario, initial_trajectory};
use uavmec::uplink::uplink_beams;

fn main() -> uavmec::Result<()> {
    env_logger::init();
    let s = default_scenario();
    let traj = initial_trajectory(&s)?;
    let channels = synthesize_channels(&s, &traj, &NlosDraw::new(s.rng_seed));
    let beams = uplink_beams(&channels)?;
    let start = Allocation::local_only(&s, traj.len());
    let initial = DownlinkSolution::initial(&s, &downlink_slots(&s, &channels, &start));
    let res = solve_resource_allocation(&s, &slot_inputs(&s, &channels, &beams, &initial), TimeSplit::Optimized)?;

    let slots = downlink_slots(&s, &channels, &res.allocation);
    let sol = solve_downlink(&s, &slots, None, &DownlinkOptions::default())?;
    println!("initial beams: eta = {:.9e} J", initial.eta);
    println!("optimized:     eta = {:.9e} J", sol.eta);
    let hist: Vec<String> = sol.sca_history.iter().map(|v| format!("{v:.6e}")).collect();
    println!("SCA relaxed objective: {}", hist.join(" -> "));
    let r = &sol.recovery;
    println!(
        "recovery: quad error {:.1e}, trace increase {:.1e}, rank ratio {:.1e}, randomized slots {:?}",
        r.max_quad_rel_error, r.max_trace_increase, r.max_rank_ratio, r.randomized_slots
    );
    println!("rho in slot 0: {:?}", sol.rho[0]);
    Ok(())
}
