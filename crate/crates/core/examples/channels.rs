//! Rician channels along the straight-line path of the default scenario.

use uavmec::channel::{synthesize_channels, NlosDraw};
use uavmec::scenario::{default_scenario, initial_trajectory};

fn main() -> uavmec::Result<()> {
    let s = default_scenario();
    let traj = initial_trajectory(&s)?;
    let channels = synthesize_channels(&s, &traj, &NlosDraw::new(s.rng_seed));
    println!("slot       x       y   d_ub   |hbar_ub|_F   d_ku per GE");
    for (n, (q, ch)) in traj.points.iter().zip(&channels.slots).enumerate() {
        let d: Vec<String> = ch.d_ku.iter().map(|d| format!("{d:6.2}")).collect();
        println!("{n:>4} {:7.2} {:7.2} {:6.2} {:13.4e}   {}", q.x, q.y, ch.d_ub, ch.hbar_ub.norm(), d.join(" "));
    }
    let path = std::env::temp_dir().join("uavmec_channels.csv");
    channels.write_csv(&path)?;
    println!("written to {}", path.display());
    Ok(())
}
