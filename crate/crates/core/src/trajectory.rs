//! UAV path design. Every `1/d^2` path-loss factor in the harvested energy
//! is replaced by the quadratic-transform surrogate `2y - y^2 d^2`, which is
//! concave in the path and tight at `y = 1/d^2`. The convex program is
//! solved repeatedly with `y` refreshed at each new path.
//!
//! Normalized channels and beams stay frozen at the anchor path; only the
//! path-loss factors move with the UAV. Rate constraints either become
//! distance caps (transmit energies and splitting ratios held fixed) or are
//! kept as linear costs in `d^2` (energies and ratios re-chosen with the
//! path, see [`TrajectoryOptions`]).

use std::f64::consts::LN_2;

use crate::channel::{link_distance, ChannelSet};
use crate::downlink::{sinr_target, DownlinkSolution, RHO_MARGIN};
use crate::error::{Error, Result};
use crate::resource::{
    local_compute_energy, polish, relay_capacity, relay_power_for_rate, waterfill, Allocation, TimeSplit,
};
use crate::scenario::{Point, Scenario, Trajectory};
use crate::solver_core::kkt::SparseGrad;
use crate::solver_core::{Affine, ConicModel, KktReport, SmoothProblem};
use crate::uplink::UplinkBeams;

/// Relative margin kept from the speed and cap limits inside the conic model.
const CONE_MARGIN: f64 = 1e-7;
/// Absolute slack (m^2) on distance caps in the exact check.
const CAP_SLACK: f64 = 1e-6;
/// Fractions of the step towards the conic solution tried in turn.
const BLEND: [f64; 9] = [1.0, 1.0 - 1e-9, 1.0 - 1e-6, 0.999, 0.99, 0.9, 0.5, 0.25, 0.1];

/// `y = 1 / d_ku^2` at the anchor position.
pub fn fp_y_update(q: &Point, s_k: &Point, altitude: f64) -> f64 {
    let d = link_distance(q, s_k, altitude);
    1.0 / (d * d)
}

/// `2y - y^2 d^2`, a lower bound on `1/d^2` that is tight at `y = 1/d^2`.
pub fn fp_lambda(y: f64, d2: f64) -> f64 {
    2.0 * y - y * y * d2
}

/// Harvested energy with `1/d^2` replaced by `lambda`.
pub fn fp_surrogate_energy(rho: f64, zeta_k: f64, t_d: f64, beam_powers: &[f64], sigma_k2: f64, lambda: f64) -> f64 {
    t_d * (1.0 - rho) * zeta_k * (beam_powers.iter().sum::<f64>() * lambda + sigma_k2)
}

/// Quadratic-transform auxiliaries `y[k][n]` at an anchor path.
#[derive(Debug, Clone, PartialEq)]
pub struct FpState {
    pub y: Vec<Vec<f64>>,
    pub anchor: Trajectory,
}

impl FpState {
    pub fn at(s: &Scenario, anchor: &Trajectory) -> FpState {
        let y = s
            .ges
            .iter()
            .map(|g| anchor.points.iter().map(|q| fp_y_update(q, &g.position, s.altitude)).collect())
            .collect();
        FpState { y, anchor: anchor.clone() }
    }

    pub fn lambda(&self, k: usize, n: usize, d2: f64) -> f64 {
        fp_lambda(self.y[k][n], d2)
    }
}

/// Largest squared UAV-GE distance at which `energy` still carries `bits`
/// over `t_o`; `gain_bar = |v^H hbar|^2`.
pub fn uplink_cap(energy: f64, gain_bar: f64, t_o: f64, sigma2: f64, bits: f64, bandwidth: f64) -> f64 {
    if bits <= 0.0 {
        return f64::INFINITY;
    }
    energy * gain_bar / (t_o * sigma2 * (bits * LN_2 / (t_o * bandwidth)).exp_m1())
}

/// Largest squared UAV-BS distance at which sub-channel `lambda` carries
/// `bits` over `t_u` with `energy`.
pub fn relay_cap(energy: f64, lambda: f64, t_u: f64, sigma2: f64, bits: f64, bandwidth: f64) -> f64 {
    uplink_cap(energy, lambda, t_u, sigma2, bits, bandwidth)
}

/// Largest squared distance at which the downlink SINR reaches `gamma`, or
/// `None` when interference alone rules it out.
pub fn downlink_cap(rho: f64, signal: f64, interference: f64, gamma: f64, sigma_k2: f64, delta_k2: f64) -> Option<f64> {
    if gamma <= 0.0 {
        return Some(f64::INFINITY);
    }
    let margin = signal - gamma * interference;
    if margin <= 0.0 {
        return None;
    }
    Some(rho * margin / (gamma * (rho * sigma_k2 + delta_k2)))
}

/// Smallest splitting ratio meeting `gamma` at squared distance `d2`.
fn rho_for_distance(gamma: f64, margin: f64, d2: f64, sigma_k2: f64, delta_k2: f64) -> Option<f64> {
    let room = margin - gamma * sigma_k2 * d2;
    if room <= 0.0 {
        None
    } else {
        Some(gamma * delta_k2 * d2 / room)
    }
}

/// Squared-distance caps implied by the rate constraints at fixed energies
/// and splitting ratios. GE caps are indexed `[k][n]`, relay caps `[n][i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceCaps {
    pub uplink: Vec<Vec<f64>>,
    pub downlink: Vec<Vec<f64>>,
    pub relay: Vec<Vec<f64>>,
    /// `(k, n)` pairs whose SINR target is out of reach at any distance.
    pub unreachable: Vec<(usize, usize)>,
}

impl DistanceCaps {
    /// Largest `d^2 - cap` over all finite caps along `traj` (m^2).
    pub fn max_violation(&self, s: &Scenario, traj: &Trajectory) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for (n, q) in traj.points.iter().enumerate() {
            for (k, g) in s.ges.iter().enumerate() {
                let d2 = link_distance(q, &g.position, s.altitude).powi(2);
                for cap in [self.uplink[k][n], self.downlink[k][n]] {
                    if cap.is_finite() {
                        worst = worst.max(d2 - cap);
                    }
                }
            }
            let d2 = link_distance(q, &s.bs_position, s.altitude).powi(2);
            for &cap in self.relay[n].iter().filter(|c| c.is_finite()) {
                worst = worst.max(d2 - cap);
            }
        }
        worst
    }
}

/// The fixed blocks the path is optimized against, all taken at the anchor.
#[derive(Debug, Clone, Copy)]
pub struct TrajectoryInputs<'a> {
    pub channels: &'a ChannelSet,
    pub uplink: &'a UplinkBeams,
    pub allocation: &'a Allocation,
    pub downlink: &'a DownlinkSolution,
}

pub fn distance_caps(s: &Scenario, inp: &TrajectoryInputs) -> DistanceCaps {
    let kk = s.num_ges();
    let nn = inp.channels.num_slots();
    let a = inp.allocation;
    let mut caps = DistanceCaps {
        uplink: vec![vec![f64::INFINITY; nn]; kk],
        downlink: vec![vec![f64::INFINITY; nn]; kk],
        relay: vec![Vec::new(); nn],
        unreachable: Vec::new(),
    };
    for (n, ch) in inp.channels.slots.iter().enumerate() {
        let w = &inp.downlink.w[n];
        for (k, g) in s.ges.iter().enumerate() {
            let hbar = &ch.hbar_ku[k];
            let gain_bar = inp.uplink.v[n][k].dotc(hbar).norm_sqr();
            caps.uplink[k][n] = uplink_cap(a.e[n][k], gain_bar, a.t_o[n], s.noise_power, a.l_o[n][k], s.bandwidth);
            let (signal, interference) = signal_split(hbar, w, k);
            let gamma = sinr_target(s, a.l_o[n][k]);
            let rho = inp.downlink.rho[n][k];
            match downlink_cap(rho, signal, interference, gamma, g.noise_power, g.decoder_noise_power) {
                Some(c) => caps.downlink[k][n] = c,
                None => {
                    caps.downlink[k][n] = 0.0;
                    caps.unreachable.push((k, n));
                }
            }
        }
        let lambda = &inp.uplink.relay[n].lambda;
        caps.relay[n] = a.l_ou_i[n]
            .iter()
            .zip(&a.e_uav_i[n])
            .zip(lambda)
            .map(|((&bits, &e), &l)| relay_cap(e, l, a.t_u[n], s.noise_power, bits, s.bandwidth))
            .collect();
    }
    caps
}

/// `(|hbar^H w_k|^2, sum_{j != k} |hbar^H w_j|^2)`
fn signal_split(hbar: &crate::solver_core::CVector, w: &[crate::solver_core::CVector], k: usize) -> (f64, f64) {
    let mut signal = 0.0;
    let mut interference = 0.0;
    for (j, wj) in w.iter().enumerate() {
        let p = hbar.dotc(wj).norm_sqr();
        if j == k {
            signal = p;
        } else {
            interference += p;
        }
    }
    (signal, interference)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryOptions {
    /// Re-choose GE and UAV transmit energies with the path. When false the
    /// uplink and relay rate constraints become fixed distance caps.
    pub adapt_energy: bool,
    /// Raise splitting ratios as needed to hold the downlink SINR. When
    /// false the downlink constraint becomes a fixed distance cap.
    pub adapt_rho: bool,
    /// Also try moving uplink time from offloading to relaying, which
    /// loosens the relay constraint on the distance to the BS. Needs
    /// `adapt_energy`.
    pub adapt_split: bool,
    pub max_fp: usize,
    pub tol: f64,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        TrajectoryOptions { adapt_energy: true, adapt_rho: true, adapt_split: true, max_fp: 30, tol: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct TrajectorySolution {
    pub trajectory: Trajectory,
    /// Input allocation with transmit energies and relay split updated.
    pub allocation: Allocation,
    /// Splitting ratios `[n][k]`.
    pub rho: Vec<Vec<f64>>,
    /// Worst-GE net energy with channels frozen at the anchor (J).
    pub eta: f64,
    /// Exact `eta` at each path visited, starting with the anchor.
    pub fp_history: Vec<f64>,
    /// Optimal surrogate value of each convex solve (J).
    pub surrogate_history: Vec<f64>,
    pub report: KktReport,
    pub caps: DistanceCaps,
    pub progress: bool,
    pub converged: bool,
}

/// Anchor-frozen data of one slot.
#[derive(Debug, Clone)]
struct SlotData {
    /// `sum_j |hbar_k^H w_j|^2`
    beam_power: Vec<f64>,
    /// `|hbar_k^H w_k|^2 - gamma_k sum_{j != k} |hbar_k^H w_j|^2`
    sinr_margin: Vec<f64>,
    gamma: Vec<f64>,
    /// Minimal uplink energy per m^2 of squared distance.
    uplink_coef: Vec<f64>,
    compute: Vec<f64>,
    relay_lambda: Vec<f64>,
    relay_bits: f64,
}

/// One candidate path with the energies and ratios it implies.
#[derive(Debug, Clone)]
struct Iterate {
    q: Vec<Point>,
    rho: Vec<Vec<f64>>,
    e: Vec<Vec<f64>>,
    l_ou_i: Vec<Vec<f64>>,
    e_uav_i: Vec<Vec<f64>>,
    eta: f64,
    /// Largest per-GE harvested-plus-spent total, used to scale the model.
    scale: f64,
}

/// The path subproblem with everything but the path frozen.
pub struct TrajectoryModel<'a> {
    s: &'a Scenario,
    alloc: &'a Allocation,
    rho0: &'a [Vec<f64>],
    slots: Vec<SlotData>,
    caps: DistanceCaps,
    /// Caps widened to the anchor distance where they are tight up to rounding.
    caps_eff: DistanceCaps,
    opts: TrajectoryOptions,
}

impl<'a> TrajectoryModel<'a> {
    pub fn new(s: &'a Scenario, anchor: &Trajectory, inp: &TrajectoryInputs<'a>, opts: TrajectoryOptions) -> Result<Self> {
        let nn = inp.channels.num_slots();
        if anchor.len() != nn || inp.allocation.t_o.len() != nn || inp.downlink.w.len() != nn {
            return Err(Error::Dimension(format!(
                "trajectory block: {} points, {} channel slots, {} allocation slots, {} downlink slots",
                anchor.len(),
                nn,
                inp.allocation.t_o.len(),
                inp.downlink.w.len()
            )));
        }
        let a = inp.allocation;
        let slots = inp
            .channels
            .slots
            .iter()
            .enumerate()
            .map(|(n, ch)| {
                let w = &inp.downlink.w[n];
                let mut d = SlotData {
                    beam_power: Vec::new(),
                    sinr_margin: Vec::new(),
                    gamma: Vec::new(),
                    uplink_coef: Vec::new(),
                    compute: Vec::new(),
                    relay_lambda: inp.uplink.relay[n].lambda.clone(),
                    relay_bits: a.l_ou[n],
                };
                for (k, g) in s.ges.iter().enumerate() {
                    let hbar = &ch.hbar_ku[k];
                    let (signal, interference) = signal_split(hbar, w, k);
                    let gamma = sinr_target(s, a.l_o[n][k]);
                    d.beam_power.push(signal + interference);
                    d.sinr_margin.push(signal - gamma * interference);
                    d.gamma.push(gamma);
                    let gain_bar = inp.uplink.v[n][k].dotc(hbar).norm_sqr();
                    let bits = a.l_o[n][k];
                    d.uplink_coef.push(if bits > 0.0 {
                        a.t_o[n] * s.noise_power * (bits * LN_2 / (a.t_o[n] * s.bandwidth)).exp_m1() / gain_bar
                    } else {
                        0.0
                    });
                    d.compute
                        .push(local_compute_energy(a.l_c[n][k], g.cycles_per_bit, g.capacitance, s.slot_len));
                }
                d
            })
            .collect();
        let caps = distance_caps(s, inp);
        let mut caps_eff = caps.clone();
        let widen = |cap: &mut f64, d2: f64| {
            if cap.is_finite() && *cap < d2 && *cap >= d2 * (1.0 - 1e-9) {
                *cap = d2;
            }
        };
        for (n, q) in anchor.points.iter().enumerate() {
            for (k, g) in s.ges.iter().enumerate() {
                let d2 = link_distance(q, &g.position, s.altitude).powi(2);
                widen(&mut caps_eff.uplink[k][n], d2);
                widen(&mut caps_eff.downlink[k][n], d2);
            }
            let d2 = link_distance(q, &s.bs_position, s.altitude).powi(2);
            caps_eff.relay[n].iter_mut().for_each(|c| widen(c, d2));
        }
        Ok(TrajectoryModel { s, alloc: a, rho0: &inp.downlink.rho, slots, caps, caps_eff, opts })
    }

    pub fn caps(&self) -> &DistanceCaps {
        &self.caps
    }

    /// Exact energies, ratios and `eta` along `q`, or `None` if `q` breaks a
    /// constraint. Splitting ratios never drop below `rho_floor`.
    fn evaluate(&self, q: Vec<Point>, rho_floor: &[Vec<f64>], check_mobility: bool) -> Option<Iterate> {
        let s = self.s;
        let a = self.alloc;
        if check_mobility {
            let limit = s.max_step();
            if q.windows(2).any(|w| (w[1] - w[0]).norm() > limit) {
                return None;
            }
        }
        let kk = s.num_ges();
        let mut it = Iterate {
            rho: rho_floor.to_vec(),
            e: a.e.clone(),
            l_ou_i: a.l_ou_i.clone(),
            e_uav_i: a.e_uav_i.clone(),
            q: Vec::new(),
            eta: 0.0,
            scale: 0.0,
        };
        let mut net = vec![0.0; kk];
        let mut gross = vec![0.0; kk];
        for (n, (p, d)) in q.iter().zip(&self.slots).enumerate() {
            for (k, g) in s.ges.iter().enumerate() {
                let d2 = link_distance(p, &g.position, s.altitude).powi(2);
                if self.opts.adapt_energy {
                    let e = d.uplink_coef[k] * d2;
                    if e > g.max_tx_power * a.t_o[n] {
                        return None;
                    }
                    it.e[n][k] = e;
                } else if d2 > self.caps_eff.uplink[k][n] + CAP_SLACK {
                    return None;
                }
                if self.opts.adapt_rho && d.gamma[k] > 0.0 {
                    let need = rho_for_distance(d.gamma[k], d.sinr_margin[k], d2, g.noise_power, g.decoder_noise_power)?;
                    let rho = it.rho[n][k].max(need * (1.0 + RHO_MARGIN));
                    if rho > 1.0 {
                        return None;
                    }
                    it.rho[n][k] = rho;
                } else if d2 > self.caps_eff.downlink[k][n] + CAP_SLACK {
                    return None;
                }
                let rho = it.rho[n][k];
                let harvest = s.downlink_time
                    * g.conversion_efficiency
                    * (1.0 - rho)
                    * (d.beam_power[k] / d2 + g.noise_power);
                let spent = d.compute[k] + it.e[n][k];
                net[k] += harvest - spent;
                gross[k] += harvest + spent;
            }
            let d2 = link_distance(p, &s.bs_position, s.altitude).powi(2);
            if self.opts.adapt_energy {
                if d.relay_bits > 0.0 && a.t_u[n] > 0.0 {
                    let gains: Vec<f64> = d.relay_lambda.iter().map(|l| l / (d2 * s.noise_power)).collect();
                    let rate = d.relay_bits / a.t_u[n];
                    if relay_capacity(&gains, s.uav_max_power, s.bandwidth) < rate {
                        return None;
                    }
                    let power = relay_power_for_rate(&gains, rate, s.bandwidth, s.uav_max_power);
                    let p = waterfill(&gains, power);
                    it.l_ou_i[n] = p
                        .iter()
                        .zip(&gains)
                        .map(|(pi, gi)| a.t_u[n] * s.bandwidth * (gi * pi).ln_1p() / LN_2)
                        .collect();
                    it.e_uav_i[n] = p.iter().map(|pi| pi * a.t_u[n]).collect();
                }
            } else if self.caps_eff.relay[n].iter().any(|&c| d2 > c + CAP_SLACK) {
                return None;
            }
        }
        it.q = q;
        it.eta = net.iter().copied().fold(f64::INFINITY, f64::min);
        it.scale = gross.iter().copied().fold(0.0, f64::max).max(1e-300);
        Some(it)
    }

    /// Surrogate program built at `it`.
    fn surrogate(&self, it: &Iterate) -> Surrogate {
        let s = self.s;
        let a = self.alloc;
        let nn = it.q.len();
        let kk = s.num_ges();
        let mut free = vec![None; nn];
        let mut m = 0;
        for slot in free.iter_mut().take(nn.saturating_sub(1)).skip(1) {
            *slot = Some(m);
            m += 1;
        }
        let mut sur = Surrogate {
            altitude: s.altitude,
            free,
            fixed: it.q.clone(),
            num_free: m,
            num_rho: 0,
            terms: Vec::new(),
            relay: Vec::new(),
            constant: vec![0.0; kk],
            step: s.max_step(),
            scale: it.scale,
            rows: Vec::new(),
        };
        // Largest squared distance from `c` the UAV can reach in slot `n`.
        let reach2 = |n: usize, c: &Point| {
            let from_start = (it.q[0] - c).norm() + n as f64 * sur.step;
            let from_end = (it.q[nn - 1] - c).norm() + (nn - 1 - n) as f64 * sur.step;
            from_start.min(from_end).powi(2) + s.altitude * s.altitude
        };
        let binding = |upper: f64, reach: f64| if upper < reach * (1.0 + 1e-6) { upper } else { f64::INFINITY };
        for n in 0..nn {
            let d = &self.slots[n];
            let p = it.q[n];
            for (k, g) in s.ges.iter().enumerate() {
                let d2 = link_distance(&p, &g.position, s.altitude).powi(2);
                let rho = it.rho[n][k];
                let td_zeta = s.downlink_time * g.conversion_efficiency;
                if sur.free[n].is_none() {
                    let harvest = td_zeta * (1.0 - rho) * (d.beam_power[k] / d2 + g.noise_power);
                    sur.constant[k] += harvest - d.compute[k] - it.e[n][k];
                    continue;
                }
                let y = 1.0 / d2;
                let x_ub = d.beam_power[k] * fp_lambda(y, s.altitude * s.altitude) + g.noise_power;
                let mut base = td_zeta * (1.0 - rho) * (2.0 * y * d.beam_power[k] + g.noise_power);
                let mut r_coef = -td_zeta * (1.0 - rho) * y * y * d.beam_power[k];
                let mut rho_coef = 0.0;
                let mut r_upper = f64::INFINITY;
                let mut rho_link = None;
                sur.constant[k] -= d.compute[k];
                if self.opts.adapt_energy {
                    r_coef -= d.uplink_coef[k];
                    if d.uplink_coef[k] > 0.0 {
                        r_upper = r_upper.min(g.max_tx_power * a.t_o[n] / d.uplink_coef[k]);
                    }
                } else {
                    sur.constant[k] -= it.e[n][k];
                    r_upper = r_upper.min(self.caps_eff.uplink[k][n]);
                }
                if self.opts.adapt_rho && d.gamma[k] > 0.0 {
                    let gamma = d.gamma[k];
                    let b = gamma * g.noise_power;
                    let margin = d.sinr_margin[k];
                    let r_max = if b > 0.0 { d2 + 1e-7 * (margin / b - d2) } else { f64::INFINITY };
                    let scale = if b > 0.0 { 1.0 - b * r_max / margin } else { 1.0 };
                    let slope = gamma * g.decoder_noise_power / (rho * margin);
                    // rho <= 1 bounds d^2 through the SINR link.
                    r_upper = r_upper.min(r_max).min(scale / (slope * rho));
                    base += td_zeta * rho * x_ub;
                    rho_coef = -td_zeta * rho * x_ub;
                    rho_link = Some(RhoLink { var: sur.num_rho, slope, scale });
                    sur.num_rho += 1;
                } else if !self.opts.adapt_rho {
                    r_upper = r_upper.min(self.caps_eff.downlink[k][n]);
                }
                sur.terms.push(GeTerm {
                    slot: n,
                    ge: k,
                    center: g.position,
                    anchor_d2: d2,
                    base,
                    r_coef,
                    rho_coef,
                    r_upper: binding(r_upper, reach2(n, &g.position)),
                    rho_link,
                });
            }
            if sur.free[n].is_some() {
                let d2 = link_distance(&p, &s.bs_position, s.altitude).powi(2);
                let upper = if self.opts.adapt_energy {
                    let growth: f64 = it.l_ou_i[n]
                        .iter()
                        .zip(&d.relay_lambda)
                        .filter(|(&bits, _)| bits > 0.0)
                        .map(|(&bits, &l)| {
                            a.t_u[n] * s.noise_power * (bits * LN_2 / (a.t_u[n] * s.bandwidth)).exp_m1() / l
                        })
                        .sum();
                    if growth > 0.0 {
                        s.uav_max_power * a.t_u[n] / growth
                    } else {
                        f64::INFINITY
                    }
                } else {
                    self.caps_eff.relay[n].iter().copied().fold(f64::INFINITY, f64::min)
                };
                let upper = binding(upper, reach2(n, &s.bs_position));
                if upper.is_finite() {
                    sur.relay.push(RelayTerm { slot: n, center: s.bs_position, anchor_d2: d2, upper });
                }
            }
        }
        sur.rows = sur.build_rows();
        sur
    }

    /// Surrogate program at the anchor path with the anchor's ratios, for
    /// derivative and optimality checks. `None` if the anchor breaks a
    /// constraint of the model.
    pub fn surrogate_at(&self, anchor: &Trajectory) -> Option<Surrogate> {
        self.evaluate(anchor.points.clone(), self.rho0, false).map(|it| self.surrogate(&it))
    }

    pub fn solve(&self, anchor: &Trajectory) -> Result<TrajectorySolution> {
        let fallback = |eta: f64| TrajectorySolution {
            trajectory: anchor.clone(),
            allocation: self.alloc.clone(),
            rho: self.rho0.to_vec(),
            eta,
            fp_history: vec![eta],
            surrogate_history: Vec::new(),
            report: KktReport::default(),
            caps: self.caps.clone(),
            progress: false,
            converged: false,
        };
        let Some(mut cur) = self.evaluate(anchor.points.clone(), self.rho0, false) else {
            log::warn!("trajectory block: anchor path violates a frozen constraint, keeping it");
            return Ok(fallback(f64::NAN));
        };
        let mut fp_history = vec![cur.eta];
        let mut surrogate_history = Vec::new();
        let mut report = KktReport::default();
        let mut converged = anchor.len() <= 2;
        for _ in 0..self.opts.max_fp {
            if converged {
                break;
            }
            let sur = self.surrogate(&cur);
            let sol = match sur.solve() {
                Ok(sol) => sol,
                Err(e) if e.is_infeasible() => {
                    log::warn!("trajectory block: {e}");
                    break;
                }
                Err(e) => return Err(e),
            };
            report = report.worst(sol.report);
            surrogate_history.push(sol.value);
            let mut next = None;
            for t in BLEND {
                let q = cur.q.iter().zip(&sol.points).map(|(a, b)| a + (b - a) * t).collect();
                if let Some(c) = self.evaluate(q, &cur.rho, true) {
                    if c.eta >= cur.eta {
                        next = Some(c);
                        break;
                    }
                }
            }
            let Some(next) = next else {
                converged = true;
                break;
            };
            let gain = next.eta - cur.eta;
            cur = next;
            fp_history.push(cur.eta);
            if gain <= self.opts.tol * cur.eta.abs().max(1.0) {
                converged = true;
            }
        }
        let mut allocation = self.alloc.clone();
        allocation.e = cur.e;
        allocation.l_ou_i = cur.l_ou_i;
        allocation.e_uav_i = cur.e_uav_i;
        let trajectory = Trajectory { points: cur.q };
        Ok(TrajectorySolution {
            progress: trajectory != *anchor,
            trajectory,
            allocation,
            rho: cur.rho,
            eta: cur.eta,
            fp_history,
            surrogate_history,
            report,
            caps: self.caps.clone(),
            converged,
        })
    }
}

/// Optimize the path for fixed beams, allocation and downlink.
pub fn solve_trajectory(
    s: &Scenario,
    anchor: &Trajectory,
    inp: &TrajectoryInputs,
    opts: TrajectoryOptions,
) -> Result<TrajectorySolution> {
    let mut best = TrajectoryModel::new(s, anchor, inp, opts)?.solve(anchor)?;
    if !(opts.adapt_split && opts.adapt_energy) {
        return Ok(best);
    }
    let slots = crate::optimizer::slot_inputs(s, inp.channels, inp.uplink, inp.downlink);
    let window = s.uplink_window();
    for floor in RELAY_TIME_FLOORS {
        let t_u_min = floor * window;
        if inp.allocation.t_u.iter().all(|&t| t >= t_u_min) {
            continue;
        }
        let mut a = inp.allocation.clone();
        for n in 0..a.t_u.len() {
            if a.t_u[n] < t_u_min {
                a.t_u[n] = t_u_min;
                a.t_o[n] = window - t_u_min;
            }
        }
        let a = polish(s, &slots, a, TimeSplit::Optimized);
        let resplit = TrajectoryInputs { allocation: &a, ..*inp };
        match TrajectoryModel::new(s, anchor, &resplit, opts).and_then(|m| m.solve(anchor)) {
            Ok(sol) if sol.eta > best.eta => best = sol,
            Ok(_) => {}
            Err(e) => log::debug!("trajectory block: relay time floor {floor}: {e}"),
        }
    }
    Ok(best)
}

/// Lower bounds on the relay time, as fractions of the uplink window,
/// tried when the split is adapted.
pub const RELAY_TIME_FLOORS: [f64; 6] = [0.02, 0.05, 0.1, 0.2, 0.35, 0.5];

#[derive(Debug, Clone)]
struct RhoLink {
    /// Index among the ratio variables.
    var: usize,
    /// `rho' * scale >= slope * d^2` with `rho = rho_anchor * rho'`.
    slope: f64,
    scale: f64,
}

/// Net-energy contribution of one GE in one free slot:
/// `base + r_coef d^2 + rho_coef rho'`.
#[derive(Debug, Clone)]
struct GeTerm {
    slot: usize,
    ge: usize,
    center: Point,
    anchor_d2: f64,
    base: f64,
    r_coef: f64,
    rho_coef: f64,
    r_upper: f64,
    rho_link: Option<RhoLink>,
}

#[derive(Debug, Clone)]
struct RelayTerm {
    slot: usize,
    center: Point,
    anchor_d2: f64,
    upper: f64,
}

#[derive(Debug, Clone, Copy)]
enum Row {
    Net(usize),
    Step(usize),
    Cap(usize),
    Relay(usize),
    RhoFloor(usize),
    RhoLink(usize),
}

/// One convexified path program in natural form. Variables are the free
/// positions `(x, y)` in slot order, then the ratio multipliers `rho'`,
/// then `eta` divided by the model's energy scale. Each `d^2` is
/// `||q - c||^2 + H^2` evaluated directly.
#[derive(Debug, Clone)]
pub struct Surrogate {
    altitude: f64,
    free: Vec<Option<usize>>,
    fixed: Vec<Point>,
    num_free: usize,
    num_rho: usize,
    terms: Vec<GeTerm>,
    relay: Vec<RelayTerm>,
    /// Net energy of the fixed slots and fixed costs, per GE (J).
    constant: Vec<f64>,
    step: f64,
    scale: f64,
    rows: Vec<Row>,
}

struct SurrogateSolution {
    points: Vec<Point>,
    value: f64,
    report: KktReport,
}

impl Surrogate {
    fn eta_index(&self) -> usize {
        2 * self.num_free + self.num_rho
    }

    fn rho_index(&self, var: usize) -> usize {
        2 * self.num_free + var
    }

    fn point(&self, slot: usize, x: &[f64]) -> Point {
        match self.free[slot] {
            Some(j) => Point::new(x[2 * j], x[2 * j + 1]),
            None => self.fixed[slot],
        }
    }

    fn d2(&self, slot: usize, center: &Point, x: &[f64]) -> f64 {
        (self.point(slot, x) - center).norm_squared() + self.altitude * self.altitude
    }

    /// Gradient of `d^2` scaled by `c`.
    fn d2_grad(&self, slot: usize, center: &Point, c: f64, x: &[f64], out: &mut SparseGrad) {
        if let Some(j) = self.free[slot] {
            let p = self.point(slot, x) - center;
            out.push((2 * j, 2.0 * c * p.x));
            out.push((2 * j + 1, 2.0 * c * p.y));
        }
    }

    fn build_rows(&self) -> Vec<Row> {
        let mut rows: Vec<Row> = (0..self.constant.len()).map(Row::Net).collect();
        for n in 0..self.fixed.len().saturating_sub(1) {
            if self.free[n].is_some() || self.free[n + 1].is_some() {
                rows.push(Row::Step(n));
            }
        }
        for (t, term) in self.terms.iter().enumerate() {
            if term.r_upper.is_finite() {
                rows.push(Row::Cap(t));
            }
            if term.rho_link.is_some() {
                rows.extend([Row::RhoFloor(t), Row::RhoLink(t)]);
            }
        }
        rows.extend((0..self.relay.len()).map(Row::Relay));
        rows
    }

    /// Natural-form point for the path `traj` with unit ratio multipliers
    /// and the largest feasible `eta`.
    pub fn pack(&self, traj: &Trajectory) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        for (n, p) in traj.points.iter().enumerate() {
            if let Some(j) = self.free[n] {
                x[2 * j] = p.x;
                x[2 * j + 1] = p.y;
            }
        }
        for v in 0..self.num_rho {
            x[self.rho_index(v)] = 1.0;
        }
        let eta = (0..self.constant.len()).map(|k| self.net(k, &x)).fold(f64::INFINITY, f64::min);
        x[self.eta_index()] = eta / self.scale;
        x
    }

    /// Surrogate net energy of GE `k` (J).
    fn net(&self, k: usize, x: &[f64]) -> f64 {
        let mut v = self.constant[k];
        for t in self.terms.iter().filter(|t| t.ge == k) {
            v += t.base + t.r_coef * self.d2(t.slot, &t.center, x);
            if let Some(l) = &t.rho_link {
                v += t.rho_coef * x[self.rho_index(l.var)];
            }
        }
        v
    }

    fn solve(&self) -> Result<SurrogateSolution> {
        let mut model = ConicModel::new("trajectory");
        let qv = model.vars(2 * self.num_free);
        let rv = model.vars(self.num_rho);
        let eta = model.var();
        let coord = |slot: usize, axis: usize| -> Affine {
            match self.free[slot] {
                Some(j) => Affine::var(qv[2 * j + axis]),
                None => Affine::constant(self.fixed[slot][axis]),
            }
        };
        let h2 = self.altitude * self.altitude;
        // r >= ||q - c||^2 + H^2 as a rotated cone scaled by the anchor value.
        let epigraph = |model: &mut ConicModel, slot: usize, center: &Point, anchor_d2: f64| -> usize {
            let r = model.var();
            let m = (anchor_d2 - h2).max(self.step * self.step).max(1.0);
            let u = (Affine::var(r) - h2) * (1.0 / m);
            let root = 2.0 / m.sqrt();
            model.soc(
                u.clone() + 1.0,
                vec![
                    (coord(slot, 0) - center.x) * root,
                    (coord(slot, 1) - center.y) * root,
                    u - 1.0,
                ],
            );
            r
        };
        let mut net: Vec<Affine> = self.constant.iter().map(|&c| Affine::constant(c / self.scale)).collect();
        for t in &self.terms {
            let r = epigraph(&mut model, t.slot, &t.center, t.anchor_d2);
            let e = &mut net[t.ge];
            *e += &Affine::constant(t.base / self.scale);
            e.add_term(r, t.r_coef / self.scale);
            if t.r_upper.is_finite() {
                let bound = if t.r_upper * (1.0 - CONE_MARGIN) >= t.anchor_d2 {
                    t.r_upper * (1.0 - CONE_MARGIN)
                } else {
                    t.r_upper
                };
                model.le(Affine::term(r, 1.0 / bound), Affine::constant(1.0));
            }
            if let Some(l) = &t.rho_link {
                let rho = rv[l.var];
                e.add_term(rho, t.rho_coef / self.scale);
                model.le(Affine::constant(1.0), Affine::var(rho));
                model.le(Affine::term(r, l.slope), Affine::term(rho, l.scale));
            }
        }
        for t in &self.relay {
            let r = epigraph(&mut model, t.slot, &t.center, t.anchor_d2);
            let bound = if t.upper * (1.0 - CONE_MARGIN) >= t.anchor_d2 { t.upper * (1.0 - CONE_MARGIN) } else { t.upper };
            model.le(Affine::term(r, 1.0 / bound), Affine::constant(1.0));
        }
        for k in 0..net.len() {
            model.le(Affine::var(eta), net[k].clone());
        }
        let limit = self.step * (1.0 - CONE_MARGIN);
        for n in 0..self.fixed.len().saturating_sub(1) {
            if self.free[n].is_none() && self.free[n + 1].is_none() {
                continue;
            }
            model.soc(
                Affine::constant(1.0),
                vec![
                    (coord(n + 1, 0) - coord(n, 0)) * (1.0 / limit),
                    (coord(n + 1, 1) - coord(n, 1)) * (1.0 / limit),
                ],
            );
        }
        model.minimize(Affine::term(eta, -1.0));
        let sol = model.solve()?;
        let points = (0..self.fixed.len()).map(|n| self.point(n, &sol.x)).collect();
        Ok(SurrogateSolution { points, value: sol.x[eta] * self.scale, report: sol.report })
    }
}

impl SmoothProblem for Surrogate {
    fn dim(&self) -> usize {
        self.eta_index() + 1
    }

    fn num_constraints(&self) -> usize {
        self.rows.len()
    }

    fn objective(&self, x: &[f64]) -> f64 {
        -x[self.eta_index()]
    }

    fn objective_grad(&self, _x: &[f64]) -> SparseGrad {
        vec![(self.eta_index(), -1.0)]
    }

    fn constraint(&self, i: usize, x: &[f64]) -> f64 {
        match self.rows[i] {
            Row::Net(k) => x[self.eta_index()] - self.net(k, x) / self.scale,
            Row::Step(n) => {
                let step = (self.point(n + 1, x) - self.point(n, x)).norm_squared();
                step / (self.step * self.step) - 1.0
            }
            Row::Cap(t) => {
                let t = &self.terms[t];
                self.d2(t.slot, &t.center, x) / t.r_upper - 1.0
            }
            Row::Relay(r) => {
                let r = &self.relay[r];
                self.d2(r.slot, &r.center, x) / r.upper - 1.0
            }
            Row::RhoFloor(t) => 1.0 - x[self.rho_index(self.link(t).var)],
            Row::RhoLink(t) => {
                let l = self.link(t);
                let term = &self.terms[t];
                l.slope * self.d2(term.slot, &term.center, x) - l.scale * x[self.rho_index(l.var)]
            }
        }
    }

    fn constraint_grad(&self, i: usize, x: &[f64]) -> SparseGrad {
        let mut g = SparseGrad::new();
        match self.rows[i] {
            Row::Net(k) => {
                g.push((self.eta_index(), 1.0));
                for t in self.terms.iter().filter(|t| t.ge == k) {
                    self.d2_grad(t.slot, &t.center, -t.r_coef / self.scale, x, &mut g);
                    if let Some(l) = &t.rho_link {
                        g.push((self.rho_index(l.var), -t.rho_coef / self.scale));
                    }
                }
            }
            Row::Step(n) => {
                let diff = self.point(n + 1, x) - self.point(n, x);
                let c = 2.0 / (self.step * self.step);
                if let Some(j) = self.free[n + 1] {
                    g.push((2 * j, c * diff.x));
                    g.push((2 * j + 1, c * diff.y));
                }
                if let Some(j) = self.free[n] {
                    g.push((2 * j, -c * diff.x));
                    g.push((2 * j + 1, -c * diff.y));
                }
            }
            Row::Cap(t) => {
                let t = &self.terms[t];
                self.d2_grad(t.slot, &t.center, 1.0 / t.r_upper, x, &mut g);
            }
            Row::Relay(r) => {
                let r = &self.relay[r];
                self.d2_grad(r.slot, &r.center, 1.0 / r.upper, x, &mut g);
            }
            Row::RhoFloor(t) => g.push((self.rho_index(self.link(t).var), -1.0)),
            Row::RhoLink(t) => {
                let l = self.link(t);
                let term = &self.terms[t];
                self.d2_grad(term.slot, &term.center, l.slope, x, &mut g);
                g.push((self.rho_index(l.var), -l.scale));
            }
        }
        g
    }

    fn constraint_name(&self, i: usize) -> String {
        match self.rows[i] {
            Row::Net(k) => format!("net energy k={k}"),
            Row::Step(n) => format!("speed n={n}"),
            Row::Cap(t) => format!("distance cap n={} k={}", self.terms[t].slot, self.terms[t].ge),
            Row::Relay(r) => format!("relay cap n={}", self.relay[r].slot),
            Row::RhoFloor(t) => format!("rho floor n={} k={}", self.terms[t].slot, self.terms[t].ge),
            Row::RhoLink(t) => format!("downlink SINR n={} k={}", self.terms[t].slot, self.terms[t].ge),
        }
    }
}

impl Surrogate {
    fn link(&self, t: usize) -> &RhoLink {
        self.terms[t].rho_link.as_ref().expect("row built from a linked term")
    }
}
