//! Alternating optimization over the four blocks: receive and relay beams,
//! resource allocation, downlink beams and splitting ratios, and the path.
//! Also the energy ledger and the end-to-end feasibility audit.
//!
//! Each iteration synthesizes channels at the current path, then updates
//! the blocks in order. The blocks are mutually consistent right after the
//! downlink update, so that is where a snapshot is taken; the path update
//! that follows moves the channels and starts the next iteration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::channel::{synthesize_channels, ChannelSet, NlosDraw};
use crate::downlink::{
    downlink_sinr, eta_of, harvested_energy, offload_cap, received_power, refit_rho, sinr_target, solve_downlink, DownlinkOptions,
    DownlinkSlot, DownlinkSolution, RhoMode,
};
use crate::error::{Block, Error, Result};
use crate::resource::{audit_allocation, local_compute_energy, solve_resource_allocation, Allocation, SlotInputs, TimeSplit};
use crate::scenario::{initial_trajectory, Scenario, Trajectory};
use crate::solver_core::FEAS_TOL;
use crate::trajectory::{solve_trajectory, TrajectoryInputs, TrajectoryOptions};
use crate::uplink::{relay_gains, uplink_beams, uplink_gain, UplinkBeams};

/// Splitting ratio used by the fixed-ratio baseline.
pub const FIXED_RHO: f64 = 0.1;

/// The full design or one of the reference schemes it is compared with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    #[default]
    Full,
    /// Path fixed to the straight line.
    NoTrajectory,
    /// Offloading and relaying each get half of the uplink window.
    NoTime,
    /// Every splitting ratio fixed to [`FIXED_RHO`].
    NoRho,
}

impl Baseline {
    pub const ALL: [Baseline; 4] = [Baseline::Full, Baseline::NoTrajectory, Baseline::NoTime, Baseline::NoRho];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::Full => "full",
            Baseline::NoTrajectory => "no-trajectory",
            Baseline::NoTime => "no-time",
            Baseline::NoRho => "no-rho",
        }
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Baseline::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::UnknownBaseline(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AoOptions {
    pub max_iters: usize,
    /// Relative change of `eta` between iterations that counts as converged.
    pub tol: f64,
    pub baseline: Baseline,
    pub downlink: DownlinkOptions,
    pub trajectory: TrajectoryOptions,
}

impl Default for AoOptions {
    fn default() -> Self {
        AoOptions {
            max_iters: 30,
            tol: 1e-4,
            baseline: Baseline::Full,
            downlink: DownlinkOptions::default(),
            trajectory: TrajectoryOptions::default(),
        }
    }
}

impl AoOptions {
    pub fn for_baseline(baseline: Baseline) -> Self {
        AoOptions { baseline, ..AoOptions::default() }
    }
}

/// Per-GE energy totals over the mission (J).
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyLedger {
    pub harvested: Vec<f64>,
    pub compute: Vec<f64>,
    pub transmit: Vec<f64>,
    pub remaining: Vec<f64>,
    pub eta: f64,
}

impl EnergyLedger {
    pub fn from_parts(harvested: Vec<f64>, compute: Vec<f64>, transmit: Vec<f64>) -> Self {
        let remaining: Vec<f64> = harvested.iter().zip(&compute).zip(&transmit).map(|((h, c), t)| h - c - t).collect();
        let eta = remaining.iter().copied().fold(f64::INFINITY, f64::min);
        EnergyLedger { harvested, compute, transmit, remaining, eta }
    }
}

/// Energy totals with the exact harvested energy at `channels`.
pub fn energy_ledger(s: &Scenario, channels: &ChannelSet, a: &Allocation, d: &DownlinkSolution) -> EnergyLedger {
    let kk = s.num_ges();
    let mut harvested = vec![0.0; kk];
    let mut compute = vec![0.0; kk];
    let mut transmit = vec![0.0; kk];
    for (n, ch) in channels.slots.iter().enumerate() {
        for (k, g) in s.ges.iter().enumerate() {
            harvested[k] += harvested_energy(
                d.rho[n][k],
                &ch.h_ku[k],
                &d.w[n],
                g.noise_power,
                g.conversion_efficiency,
                s.downlink_time,
            );
            compute[k] += local_compute_energy(a.l_c[n][k], g.cycles_per_bit, g.capacitance, s.slot_len);
            transmit[k] += a.e[n][k];
        }
    }
    EnergyLedger::from_parts(harvested, compute, transmit)
}

/// Allocation inputs from the current channels, beams and downlink.
pub fn slot_inputs(s: &Scenario, channels: &ChannelSet, uplink: &UplinkBeams, d: &DownlinkSolution) -> Vec<SlotInputs> {
    channels
        .slots
        .iter()
        .enumerate()
        .map(|(n, ch)| {
            let mut inp = SlotInputs {
                uplink_gain: Vec::with_capacity(s.num_ges()),
                relay_gains: relay_gains(&uplink.relay[n], ch.d_ub, s.noise_power),
                offload_cap: Vec::with_capacity(s.num_ges()),
                harvest: Vec::with_capacity(s.num_ges()),
            };
            for (k, g) in s.ges.iter().enumerate() {
                let h = &ch.h_ku[k];
                inp.uplink_gain.push(uplink_gain(&uplink.v[n][k], h, s.noise_power));
                let sinr = downlink_sinr(d.rho[n][k], h, &d.w[n], k, g.noise_power, g.decoder_noise_power);
                inp.offload_cap.push(offload_cap(s, sinr));
                inp.harvest.push(harvested_energy(
                    d.rho[n][k],
                    h,
                    &d.w[n],
                    g.noise_power,
                    g.conversion_efficiency,
                    s.downlink_time,
                ));
            }
            inp
        })
        .collect()
}

/// Downlink inputs from the current channels and allocation.
pub fn downlink_slots(s: &Scenario, channels: &ChannelSet, a: &Allocation) -> Vec<DownlinkSlot> {
    channels
        .slots
        .iter()
        .enumerate()
        .map(|(n, ch)| DownlinkSlot {
            h: ch.h_ku.clone(),
            sinr_target: a.l_o[n].iter().map(|&l| sinr_target(s, l)).collect(),
            spent: s
                .ges
                .iter()
                .enumerate()
                .map(|(k, g)| local_compute_energy(a.l_c[n][k], g.cycles_per_bit, g.capacitance, s.slot_len) + a.e[n][k])
                .collect(),
        })
        .collect()
}

/// A mutually consistent set of blocks.
#[derive(Debug, Clone)]
pub struct Solution {
    pub trajectory: Trajectory,
    pub channels: ChannelSet,
    pub uplink: UplinkBeams,
    pub allocation: Allocation,
    pub downlink: DownlinkSolution,
    pub ledger: EnergyLedger,
}

/// One block update.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockRecord {
    pub iteration: usize,
    pub block: Block,
    /// Worst-GE net energy right after the update (J). For the path block it
    /// is measured with the channels frozen at the previous path.
    pub eta: f64,
    /// Solver residual of the update (0 for closed-form blocks).
    pub residual: f64,
    /// Seconds since the run started.
    pub seconds: f64,
}

/// Summary of one iteration, measured at its snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub eta: f64,
    pub max_violation: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct SolutionTrace {
    pub blocks: Vec<BlockRecord>,
    pub iterations: Vec<IterationRecord>,
    /// The snapshot with the largest `eta`.
    pub solution: Solution,
    pub best_iteration: usize,
    pub converged: bool,
}

impl SolutionTrace {
    pub fn eta(&self) -> f64 {
        self.solution.ledger.eta
    }

    /// Most negative change of `eta` between consecutive updates of the
    /// allocation, downlink and path blocks within one iteration (J).
    pub fn worst_block_decrease(&self) -> f64 {
        let mut worst = 0.0f64;
        for w in self.blocks.windows(2) {
            let audited = matches!(w[0].block, Block::Resource | Block::Downlink);
            if audited && w[0].iteration == w[1].iteration && w[1].block != Block::Uplink {
                worst = worst.min(w[1].eta - w[0].eta);
            }
        }
        worst
    }

    /// CSV with columns `iteration,block,eta,residual,seconds`.
    pub fn write_runlog(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["iteration", "block", "eta", "residual", "seconds"])?;
        for r in &self.blocks {
            w.write_record([
                r.iteration.to_string(),
                r.block.to_string(),
                crate::output::real(r.eta),
                crate::output::real(r.residual),
                crate::output::real(r.seconds),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Run the alternating optimization from the straight-line path.
pub fn alternate(s: &Scenario, opts: &AoOptions) -> Result<SolutionTrace> {
    let report = s.validate();
    if !report.is_empty() {
        return Err(Error::InvalidScenario(report));
    }
    let started = Instant::now();
    let baseline = opts.baseline;
    let split = if baseline == Baseline::NoTime { TimeSplit::Equal } else { TimeSplit::Optimized };
    let mut dl_opts = opts.downlink;
    let mut tr_opts = opts.trajectory;
    if baseline == Baseline::NoRho {
        dl_opts.rho = RhoMode::Fixed(FIXED_RHO);
        tr_opts.adapt_rho = false;
    }
    if baseline == Baseline::NoTime {
        tr_opts.adapt_split = false;
    }
    dl_opts.seed = s.rng_seed;

    let nlos = NlosDraw::new(s.rng_seed);
    let mut traj = initial_trajectory(s)?;
    let mut channels = synthesize_channels(s, &traj, &nlos);
    let mut allocation = Allocation::local_only(s, traj.len());
    let mut downlink = DownlinkSolution::initial(s, &downlink_slots(s, &channels, &allocation));
    if let RhoMode::Fixed(rho) = dl_opts.rho {
        downlink.rho.iter_mut().for_each(|r| r.iter_mut().for_each(|x| *x = rho));
    }

    let mut blocks = Vec::new();
    let mut iterations = Vec::new();
    let mut best: Option<(usize, Solution)> = None;
    let mut prev_eta: Option<f64> = None;
    let mut converged = false;
    for m in 0..opts.max_iters {
        let mut record = |block: Block, eta: f64, residual: f64| {
            log::debug!("iteration {m} {block}: eta = {eta:.9e}");
            blocks.push(BlockRecord { iteration: m, block, eta, residual, seconds: started.elapsed().as_secs_f64() });
        };

        let uplink = uplink_beams(&channels).map_err(|e| e.in_block(Block::Uplink, m))?;
        record(Block::Uplink, energy_ledger(s, &channels, &allocation, &downlink).eta, 0.0);

        let inputs = slot_inputs(s, &channels, &uplink, &downlink);
        let res = solve_resource_allocation(s, &inputs, split).map_err(|e| e.in_block(Block::Resource, m))?;
        allocation = res.allocation;
        record(Block::Resource, energy_ledger(s, &channels, &allocation, &downlink).eta, res.report.max());

        let slots = downlink_slots(s, &channels, &allocation);
        let anchors: Vec<Vec<f64>> = slots
            .iter()
            .enumerate()
            .map(|(n, sl)| {
                (0..s.num_ges())
                    .map(|k| received_power(&sl.h[k], &downlink.w[n], s.ges[k].noise_power).ln())
                    .collect()
            })
            .collect();
        let candidate =
            solve_downlink(s, &slots, Some(&anchors), &dl_opts).map_err(|e| e.in_block(Block::Downlink, m))?;
        let residual = candidate.report.max();
        log::debug!(
            "iteration {m} downlink: relaxed {:?}, recovered {:.9e}, randomized slots {:?}",
            candidate.sca_history,
            candidate.eta,
            candidate.recovery.randomized_slots
        );
        let incumbent_eta = eta_of(s, &slots, &downlink.w, &downlink.rho);
        if candidate.eta >= incumbent_eta || !meets_targets(s, &slots, &downlink) {
            downlink = candidate;
        } else {
            downlink.eta = incumbent_eta;
            downlink.omega = anchors;
        }
        let ledger = energy_ledger(s, &channels, &allocation, &downlink);
        record(Block::Downlink, ledger.eta, residual);

        let snapshot = Solution {
            trajectory: traj.clone(),
            channels: channels.clone(),
            uplink,
            allocation: allocation.clone(),
            downlink: downlink.clone(),
            ledger,
        };
        let eta = snapshot.ledger.eta;
        iterations.push(IterationRecord {
            iteration: m,
            eta,
            max_violation: feasibility_audit(s, &snapshot).max_violation(),
            seconds: started.elapsed().as_secs_f64(),
        });
        let done = prev_eta.is_some_and(|p| (eta - p).abs() <= opts.tol * eta.abs().max(1.0));
        prev_eta = Some(eta);
        let uplink_snapshot = if best.as_ref().is_none_or(|(_, b)| eta > b.ledger.eta) {
            best = Some((m, snapshot));
            None
        } else {
            Some(snapshot.uplink)
        };
        if done {
            converged = true;
            break;
        }

        if baseline != Baseline::NoTrajectory {
            let uplink = match &uplink_snapshot {
                Some(u) => u,
                None => &best.as_ref().expect("snapshot stored").1.uplink,
            };
            let inp = TrajectoryInputs { channels: &channels, uplink, allocation: &allocation, downlink: &downlink };
            let sol = solve_trajectory(s, &traj, &inp, tr_opts).map_err(|e| e.in_block(Block::Trajectory, m))?;
            let mut record = |block: Block, eta: f64, residual: f64| {
                blocks.push(BlockRecord { iteration: m, block, eta, residual, seconds: started.elapsed().as_secs_f64() });
            };
            record(Block::Trajectory, sol.eta, sol.report.max());
            traj = sol.trajectory;
            allocation = sol.allocation;
            downlink.rho_tilde = sol.rho.iter().map(|r| r.iter().map(|x| x.ln()).collect()).collect();
            downlink.rho = sol.rho;
            channels = synthesize_channels(s, &traj, &nlos);
            if dl_opts.rho == RhoMode::Optimized {
                refit_rho(s, &downlink_slots(s, &channels, &allocation), &mut downlink);
            }
        }
    }
    if !converged {
        log::warn!("alternating optimization stopped after {} iterations", opts.max_iters);
    }
    let (best_iteration, solution) = best.ok_or_else(|| Error::Solver("no iterations were run".into()))?;
    Ok(SolutionTrace { blocks, iterations, solution, best_iteration, converged })
}

/// Whether `d` meets every SINR target of `slots`, up to rounding.
fn meets_targets(s: &Scenario, slots: &[DownlinkSlot], d: &DownlinkSolution) -> bool {
    slots.iter().enumerate().all(|(n, sl)| {
        s.ges.iter().enumerate().all(|(k, g)| {
            let sinr = downlink_sinr(d.rho[n][k], &sl.h[k], &d.w[n], k, g.noise_power, g.decoder_noise_power);
            sinr >= sl.sinr_target[k] * (1.0 - 1e-9)
        })
    })
}

/// Largest violation per constraint family, in natural units: fractions of
/// the task size for bit constraints, of the slot for time, of the energy
/// or power budget for energy, of the step limit for speed, metres for the
/// endpoints.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeasibilityReport {
    pub entries: BTreeMap<String, f64>,
}

impl FeasibilityReport {
    fn note(&mut self, family: &str, violation: f64) {
        let e = self.entries.entry(family.to_string()).or_insert(0.0);
        if violation > *e || violation.is_nan() {
            *e = violation;
        }
    }

    pub fn max_violation(&self) -> f64 {
        self.entries.values().copied().fold(0.0, |a, b| if b.is_nan() { f64::NAN } else { a.max(b) })
    }

    pub fn passes(&self) -> bool {
        self.max_violation() <= FEAS_TOL
    }

    /// Families whose violation exceeds the tolerance.
    pub fn failures(&self) -> Vec<(&str, f64)> {
        self.entries
            .iter()
            .filter(|(_, v)| !(**v <= FEAS_TOL))
            .map(|(k, v)| (k.as_str(), *v))
            .collect()
    }
}

pub fn feasibility_audit(s: &Scenario, sol: &Solution) -> FeasibilityReport {
    let mut report = FeasibilityReport::default();
    let traj = &sol.trajectory;
    let limit = s.max_step();
    for w in traj.points.windows(2) {
        report.note("speed", ((w[1] - w[0]).norm() - limit) / limit);
    }
    if let (Some(first), Some(last)) = (traj.points.first(), traj.points.last()) {
        report.note("endpoints", (first - s.start).norm().max((last - s.end).norm()));
    }
    report.note("slot count", (traj.len() as f64 - s.num_slots() as f64).abs());
    let inputs = slot_inputs(s, &sol.channels, &sol.uplink, &sol.downlink);
    for family in [
        "time budget",
        "task requirement",
        "local capacity",
        "GE power",
        "uplink rate",
        "downlink result",
        "relay bits",
        "relay rate",
        "UAV power",
    ] {
        report.note(family, 0.0);
    }
    for (name, v) in audit_allocation(s, &inputs, &sol.allocation) {
        let family = name.split(" n=").next().unwrap_or(&name);
        report.note(family, v);
    }
    for (n, rhos) in sol.downlink.rho.iter().enumerate() {
        for &rho in rhos {
            report.note("splitting ratio", (rho - 1.0).max(-rho));
        }
        let power: f64 = sol.downlink.w[n].iter().map(|w| w.norm_squared()).sum();
        report.note("UAV transmit power", (power - s.uav_max_power) / s.uav_max_power);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::default_scenario;
    use crate::solver_core::C64;
    use approx::assert_relative_eq;

    fn small() -> Scenario {
        let mut s = default_scenario();
        s.mission_time = 6.0 * s.slot_len;
        s.end = s.start + crate::scenario::Point::new(6.0, 2.0);
        s
    }

    #[test]
    fn ledger_arithmetic() {
        let l = EnergyLedger::from_parts(vec![20.0 * 1e-3], vec![0.004], vec![0.001]);
        assert_relative_eq!(l.remaining[0], 0.015, max_relative = 1e-12);
        assert_eq!(l.eta, l.remaining[0]);
        let l = EnergyLedger::from_parts(vec![1.0, 2.0], vec![0.5, 0.1], vec![0.0, 0.0]);
        assert_eq!(l.eta, 0.5);
    }

    #[test]
    fn idle_ledger_is_the_noise_floor() {
        let s = small();
        let traj = initial_trajectory(&s).unwrap();
        let channels = synthesize_channels(&s, &traj, &NlosDraw::new(0));
        let mut a = Allocation::local_only(&s, traj.len());
        a.l_c.iter_mut().for_each(|r| r.iter_mut().for_each(|x| *x = 0.0));
        let mut d = DownlinkSolution::initial(&s, &downlink_slots(&s, &channels, &a));
        d.w.iter_mut().for_each(|ws| ws.iter_mut().for_each(|w| w.fill(C64::new(0.0, 0.0))));
        let rho = 0.3;
        d.rho.iter_mut().for_each(|r| r.iter_mut().for_each(|x| *x = rho));
        let l = energy_ledger(&s, &channels, &a, &d);
        let g = &s.ges[0];
        let floor = s.downlink_time * g.conversion_efficiency * g.noise_power * traj.len() as f64 * (1.0 - rho);
        assert_relative_eq!(l.remaining[0], floor, max_relative = 1e-12);
        d.rho.iter_mut().for_each(|r| r.iter_mut().for_each(|x| *x = 1.0));
        assert_eq!(energy_ledger(&s, &channels, &a, &d).eta, 0.0);
    }

    #[test]
    fn baseline_names_round_trip() {
        for b in Baseline::ALL {
            assert_eq!(b.name().parse::<Baseline>().unwrap(), b);
        }
        assert!("fast".parse::<Baseline>().is_err());
    }

    #[test]
    fn small_run_is_monotone_and_feasible() {
        let s = small();
        let trace = alternate(&s, &AoOptions::default()).unwrap();
        assert!(trace.worst_block_decrease() >= -1e-6, "{:?}", trace.blocks);
        let audit = feasibility_audit(&s, &trace.solution);
        assert!(audit.passes(), "{:?}", audit.failures());
        let again = energy_ledger(&s, &trace.solution.channels, &trace.solution.allocation, &trace.solution.downlink);
        assert_eq!(again.eta, trace.eta());
        assert_eq!(trace.iterations[trace.best_iteration].eta, trace.eta());
    }

    #[test]
    fn fixed_path_baseline_keeps_the_line() {
        let s = small();
        let trace = alternate(&s, &AoOptions::for_baseline(Baseline::NoTrajectory)).unwrap();
        assert_eq!(trace.solution.trajectory, initial_trajectory(&s).unwrap());
        assert!(trace.blocks.iter().all(|b| b.block != Block::Trajectory));
    }

    #[test]
    fn audit_flags_corruption() {
        let s = small();
        let trace = alternate(&s, &AoOptions { max_iters: 2, ..AoOptions::default() }).unwrap();
        let mut sol = trace.solution.clone();
        sol.downlink.rho[1][0] = 1.2;
        let audit = feasibility_audit(&s, &sol);
        assert!(audit.entries["splitting ratio"] > 0.19);
        assert!(!audit.passes());

        let mut sol = trace.solution.clone();
        let power: f64 = sol.downlink.w[2].iter().map(|w| w.norm_squared()).sum();
        let f = C64::from((1.01 * s.uav_max_power / power).sqrt());
        sol.downlink.w[2].iter_mut().for_each(|w| *w *= f);
        let audit = feasibility_audit(&s, &sol);
        assert_relative_eq!(audit.entries["UAV transmit power"], 0.01, max_relative = 1e-9);
    }
}
