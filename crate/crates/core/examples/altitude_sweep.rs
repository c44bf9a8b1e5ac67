//! Sweep the flight altitude and compare how close the path gets to the GEs.

use uavmec::cli::{run_sweep, Axis, SolverArgs, SweepSpec};
use uavmec::optimizer::Baseline;
use uavmec::scenario::default_scenario;

fn main() {
    let s = default_scenario();
    let spec = SweepSpec { axis: Axis::Altitude, values: vec![5.0, 10.0, 20.0], baselines: vec![Baseline::Full], seeds: vec![0] };
    let rows = run_sweep(&s, &spec, &SolverArgs { max_iters: 30, tol: 1e-4 });
    for r in &rows {
        let Some(t) = r.trace() else {
            println!("H = {}: no solution", r.value);
            continue;
        };
        let mean_gap: f64 = s
            .ges
            .iter()
            .map(|g| t.solution.trajectory.points.iter().map(|q| (q - g.position).norm()).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / s.num_ges() as f64;
        println!("H = {:>4}: eta {:.6e} J, mean closest approach {mean_gap:.3} m", r.value, t.eta());
    }
}
