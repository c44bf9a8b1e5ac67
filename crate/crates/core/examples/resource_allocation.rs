//! Offloading, local computing and time split for the initial beams.

use uavmec::channel::{synthesize_channels, NlosDraw};
use uavmec::downlink::DownlinkSolution;
use uavmec::optimizer::{downlink_slots, slot_inputs};
use uavmec::resource::{audit_allocation, solve_resource_allocation, Allocation, TimeSplit};
use uavmec::scenario::{default_scenario, initial_trajectory};
use uavmec::uplink::uplink_beams;

fn main() -> uavmec::Result<()> {
    let s = default_scenario();
    let traj = initial_trajectory(&s)?;
    let channels = synthesize_channels(&s, &traj, &NlosDraw::new(s.rng_seed));
    let beams = uplink_beams(&channels)?;
    let start = Allocation::local_only(&s, traj.len());
    let downlink = DownlinkSolution::initial(&s, &downlink_slots(&s, &channels, &start));
    let inputs = slot_inputs(&s, &channels, &beams, &downlink);

    for split in [TimeSplit::Optimized, TimeSplit::Equal] {
        let sol = solve_resource_allocation(&s, &inputs, split)?;
        let a = &sol.allocation;
        let offloaded: f64 = a.l_o.iter().flatten().sum::<f64>() / (s.task_bits * (traj.len() * s.num_ges()) as f64);
        println!("{split:?}: eta = {:.9e} J, KKT residual {:.1e}", sol.eta, sol.report.max());
        println!("  offloaded share {:.6}, t_o[0] = {:.4e} s, t_u[0] = {:.4e} s", offloaded, a.t_o[0], a.t_u[0]);
        let worst = audit_allocation(&s, &inputs, a).into_iter().map(|(_, v)| v).fold(0.0, f64::max);
        println!("  largest constraint violation {worst:.1e}");
    }
    Ok(())
}
