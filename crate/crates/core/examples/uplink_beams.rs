//! Zero-forcing receive beams at the UAV and SVD relay sub-channels.

use uavmec::channel::{synthesize_channels, NlosDraw};
use uavmec::scenario::{default_scenario, initial_trajectory};
use uavmec::uplink::{relay_gains, uplink_beams, uplink_gain};

fn main() -> uavmec::Result<()> {
    let s = default_scenario();
    let traj = initial_trajectory(&s)?;
    let channels = synthesize_channels(&s, &traj, &NlosDraw::new(s.rng_seed));
    let beams = uplink_beams(&channels)?;
    for (n, ch) in channels.slots.iter().enumerate() {
        let mut leak = 0.0f64;
        for (k, v) in beams.v[n].iter().enumerate() {
            for (j, h) in ch.hbar_ku.iter().enumerate() {
                if j != k {
                    leak = leak.max(v.dotc(h).norm() / h.norm());
                }
            }
        }
        let gains: Vec<String> = (0..s.num_ges())
            .map(|k| format!("{:.3e}", uplink_gain(&beams.v[n][k], &ch.hbar_ku[k], s.noise_power)))
            .collect();
        let relay = relay_gains(&beams.relay[n], ch.d_ub, s.noise_power);
        println!(
            "slot {n:>2}: leakage {leak:.1e}, GE gains [{}], {} relay sub-channels, strongest {:.3e}",
            gains.join(", "),
            relay.len(),
            relay[0]
        );
    }
    Ok(())
}
