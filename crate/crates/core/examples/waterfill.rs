//! Water-filling the UAV relay energy over parallel sub-channels.

use uavmec::resource::{waterfill, waterfill_kkt_residual};

fn main() {
    let gains = [4.0, 1.0, 0.25, 0.05];
    for budget in [0.1, 0.5, 1.75, 5.0, 20.0] {
        let e = waterfill(&gains, budget);
        let shown: Vec<String> = e.iter().map(|x| format!("{x:.4}")).collect();
        println!(
            "budget {budget:>5}: [{}]  KKT residual {:.1e}",
            shown.join(", "),
            waterfill_kkt_residual(&gains, budget, &e)
        );
    }
}
