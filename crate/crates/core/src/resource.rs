//! Resource allocation with beams, downlink and trajectory fixed: task
//! splits, GE offloading energies, the uplink/relay time split and the UAV
//! relay energies, chosen to maximize the worst GE's net harvested energy.
//!
//! The relay energies are eliminated exactly: with a per-slot UAV power
//! budget the best relay throughput over `t_u` is `t_u * C_n`, where `C_n`
//! is the water-filled capacity at full power. The remaining program is
//! solved as an exponential/power-cone program; the relay energies are then
//! recovered as the smallest water-filling budget that carries the
//! offloaded bits.

use crate::error::{Error, Infeasibility, Result};
use crate::scenario::Scenario;
use crate::solver_core::{
    bisect_bracket, FEAS_TOL, kkt::SparseGrad, Affine, ConicModel, ConicSolution, KktReport, SmoothProblem,
};
use crate::uplink::perspective_log2;

/// Energy unit inside the conic model (J).
const ENERGY_SCALE: f64 = 1e-3;
/// Weight of the total-energy tie-breaker relative to the worst GE.
const TIE_BREAK: f64 = 1e-6;
/// Relative safety margin applied to capacity constraints in the model.
const CAP_MARGIN: f64 = 1e-7;
/// Worst-GE energy given up to let the other GEs spend less: this fraction
/// of the best worst-GE energy, but at least `LEXI_SLACK` J.
pub const LEXI_SLACK_REL: f64 = 1e-4;
pub const LEXI_SLACK: f64 = 1e-7;

pub fn lexi_slack(eta: f64) -> f64 {
    (LEXI_SLACK_REL * eta.abs()).max(LEXI_SLACK)
}

/// `t B log2(1 + num / (t den))`, zero at `t = 0`.
pub fn perspective_rate(t: f64, num: f64, den: f64, bandwidth: f64) -> f64 {
    bandwidth * perspective_log2(t, num / den)
}

/// `L_c^3 C^3 varsigma / delta^2`.
pub fn local_compute_energy(l_c: f64, cycles_per_bit: f64, capacitance: f64, slot_len: f64) -> f64 {
    l_c.powi(3) * cycles_per_bit.powi(3) * capacitance / (slot_len * slot_len)
}

/// Smallest energy that carries `bits` over `t` seconds at gain `a` (1/W).
pub fn min_uplink_energy(bits: f64, t: f64, a: f64, bandwidth: f64) -> f64 {
    if bits <= 0.0 {
        return 0.0;
    }
    t / a * (bits / (t * bandwidth) * std::f64::consts::LN_2).exp_m1()
}

/// Water-filling `E_i = max(0, mu - 1/g_i)` with `sum E_i = budget`.
pub fn waterfill(gains: &[f64], budget: f64) -> Vec<f64> {
    let mu = water_level(gains, budget);
    gains.iter().map(|g| (mu - 1.0 / g).max(0.0)).collect()
}

/// Water level `mu` of [`waterfill`]; found by scanning active sets.
pub fn water_level(gains: &[f64], budget: f64) -> f64 {
    if gains.is_empty() {
        return 0.0;
    }
    if budget <= 0.0 {
        return gains.iter().map(|g| 1.0 / g).fold(f64::INFINITY, f64::min);
    }
    let mut inv: Vec<f64> = gains.iter().map(|g| 1.0 / g).collect();
    inv.sort_by(f64::total_cmp);
    let mut acc = 0.0;
    for m in 1..=inv.len() {
        acc += inv[m - 1];
        let mu = (budget + acc) / m as f64;
        if m == inv.len() || mu <= inv[m] {
            return mu;
        }
    }
    unreachable!()
}

/// Max-norm KKT residual of a water-filling solution, relative to the level.
pub fn waterfill_kkt_residual(gains: &[f64], budget: f64, e: &[f64]) -> f64 {
    if gains.is_empty() {
        return 0.0;
    }
    let active: Vec<usize> = (0..e.len()).filter(|&i| e[i] > 0.0).collect();
    let mu = if active.is_empty() {
        gains.iter().map(|g| 1.0 / g).fold(f64::INFINITY, f64::min)
    } else {
        active.iter().map(|&i| e[i] + 1.0 / gains[i]).sum::<f64>() / active.len() as f64
    };
    let mut r = (e.iter().sum::<f64>() - budget).abs() / budget.max(1e-300).max(mu);
    for i in 0..e.len() {
        let floor = 1.0 / gains[i];
        r = r.max((-e[i]).max(0.0) / mu);
        if e[i] > 0.0 {
            r = r.max((e[i] + floor - mu).abs() / mu);
        } else {
            r = r.max((mu - floor).max(0.0) / mu);
        }
        r = r.max(e[i] * (floor - mu).max(0.0) / (mu * mu));
    }
    r
}

/// Bits per second over parallel sub-channels with water-filled power.
pub fn relay_capacity(gains: &[f64], power: f64, bandwidth: f64) -> f64 {
    waterfill(gains, power)
        .iter()
        .zip(gains)
        .map(|(p, g)| bandwidth * (g * p).ln_1p() / std::f64::consts::LN_2)
        .sum()
}

/// Smallest power whose water-filled capacity reaches `rate` (bits/s).
pub fn relay_power_for_rate(gains: &[f64], rate: f64, bandwidth: f64, max_power: f64) -> f64 {
    if rate <= 0.0 {
        return 0.0;
    }
    if relay_capacity(gains, max_power, bandwidth) <= rate {
        return max_power;
    }
    let f = |p: f64| relay_capacity(gains, p, bandwidth) - rate;
    match bisect_bracket(f, 0.0, max_power, max_power * 1e-14) {
        Ok(b) => b.hi,
        Err(_) => max_power,
    }
}

/// Fixed quantities entering the allocation for one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotInputs {
    /// `|v_k^H h_k|^2 / sigma^2` per GE (1/W).
    pub uplink_gain: Vec<f64>,
    /// `lambda_i / (d_ub^2 sigma^2)` per relay sub-channel (1/W).
    pub relay_gains: Vec<f64>,
    /// Largest offloadable bits per GE allowed by the result downlink.
    pub offload_cap: Vec<f64>,
    /// Harvested energy per GE (J).
    pub harvest: Vec<f64>,
}

/// How the uplink window is split between offloading and relaying.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeSplit {
    #[default]
    Optimized,
    /// `t_o = t_u = (delta - t_d) / 2`.
    Equal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub t_o: Vec<f64>,
    pub t_u: Vec<f64>,
    /// `[n][k]`
    pub e: Vec<Vec<f64>>,
    pub l_c: Vec<Vec<f64>>,
    pub l_o: Vec<Vec<f64>>,
    pub l_ou: Vec<f64>,
    /// `[n][i]`
    pub l_ou_i: Vec<Vec<f64>>,
    pub e_uav_i: Vec<Vec<f64>>,
}

impl Allocation {
    /// Everything computed locally, nothing offloaded.
    pub fn local_only(s: &Scenario, slots: usize) -> Allocation {
        let k = s.num_ges();
        let half = 0.5 * s.uplink_window();
        Allocation {
            t_o: vec![half; slots],
            t_u: vec![half; slots],
            e: vec![vec![0.0; k]; slots],
            l_c: vec![vec![s.task_bits; k]; slots],
            l_o: vec![vec![0.0; k]; slots],
            l_ou: vec![0.0; slots],
            l_ou_i: vec![Vec::new(); slots],
            e_uav_i: vec![Vec::new(); slots],
        }
    }

    /// `sum_n E_comp + E_k` per GE.
    pub fn spent_energy(&self, s: &Scenario) -> Vec<f64> {
        (0..s.num_ges())
            .map(|k| {
                let g = &s.ges[k];
                (0..self.t_o.len())
                    .map(|n| {
                        local_compute_energy(self.l_c[n][k], g.cycles_per_bit, g.capacitance, s.slot_len)
                            + self.e[n][k]
                    })
                    .sum()
            })
            .collect()
    }

    /// Scaled constraint violations; see [`audit_allocation`].
    pub fn violations(&self, s: &Scenario, inputs: &[SlotInputs]) -> Vec<(String, f64)> {
        audit_allocation(s, inputs, self)
    }
}

/// Result of [`solve_resource_allocation`].
#[derive(Debug, Clone)]
pub struct ResourceSolution {
    pub allocation: Allocation,
    /// Worst-GE net energy (J) of the polished allocation.
    pub eta: f64,
    pub report: KktReport,
}

fn infeasible(constraint: &str, slot: usize, ge: usize, detail: String) -> Error {
    Error::Infeasible(Infeasibility {
        constraint: constraint.into(),
        slot: Some(slot),
        ge: Some(ge),
        detail,
    })
}

fn window_split(s: &Scenario, split: TimeSplit) -> Option<(f64, f64)> {
    match split {
        TimeSplit::Optimized => None,
        TimeSplit::Equal => Some((0.5 * s.uplink_window(), 0.5 * s.uplink_window())),
    }
}

/// Largest bits GE `k` can possibly offload in slot `n`, ignoring the other GEs.
fn offload_upper_bound(s: &Scenario, inp: &SlotInputs, k: usize, split: TimeSplit) -> f64 {
    let w = s.uplink_window();
    let (t_o, t_u) = window_split(s, split).unwrap_or((w, w));
    let cap = relay_capacity(&inp.relay_gains, s.uav_max_power, s.bandwidth);
    let up = perspective_rate(t_o, inp.uplink_gain[k] * s.ges[k].max_tx_power * t_o, 1.0, s.bandwidth);
    inp.offload_cap[k].min(t_u * cap).min(up)
}

fn precheck(s: &Scenario, inputs: &[SlotInputs], split: TimeSplit) -> Result<()> {
    for (n, inp) in inputs.iter().enumerate() {
        for (k, g) in s.ges.iter().enumerate() {
            let local = g.local_capacity(s.slot_len);
            let offload = offload_upper_bound(s, inp, k, split);
            if local + offload < s.task_bits * (1.0 - 1e-9) {
                return Err(infeasible(
                    "task requirement",
                    n,
                    k,
                    format!(
                        "local capacity {local:.6e} bits plus offload capacity {offload:.6e} bits < {:.6e} bits",
                        s.task_bits
                    ),
                ));
            }
        }
    }
    Ok(())
}

/// Solve the allocation subproblem for the given per-slot inputs.
pub fn solve_resource_allocation(s: &Scenario, inputs: &[SlotInputs], split: TimeSplit) -> Result<ResourceSolution> {
    precheck(s, inputs, split)?;
    let kk = s.num_ges();
    let gamma = s.task_bits;
    let delta = s.slot_len;
    let window = s.uplink_window() / delta;
    let mut m = ConicModel::new("resource allocation");
    let eta = m.var();
    let mut totals: Vec<Affine> = vec![Affine::default(); kk];
    let mut all = Affine::default();
    struct SlotVars {
        t_o: usize,
        t_u: usize,
        l_o: Vec<usize>,
        l_c: Vec<usize>,
        e: Vec<usize>,
    }
    let mut vars = Vec::with_capacity(inputs.len());
    for inp in inputs {
        let t_o = m.var();
        let t_u = m.var();
        let l_o = m.vars(kk);
        let l_c = m.vars(kk);
        let e = m.vars(kk);
        m.nonneg(Affine::var(t_o));
        m.nonneg(Affine::var(t_u));
        if let Some((a, b)) = window_split(s, split) {
            m.eq(Affine::var(t_o) - a / delta);
            m.eq(Affine::var(t_u) - b / delta);
        } else {
            m.le(Affine::var(t_o) + Affine::var(t_u), window.into());
        }
        let relay = relay_capacity(&inp.relay_gains, s.uav_max_power, s.bandwidth) * delta / gamma;
        let mut carried = Affine::default();
        for k in 0..kk {
            let g = &s.ges[k];
            carried += &Affine::var(l_o[k]);
            m.nonneg(Affine::var(l_o[k]));
            m.nonneg(Affine::var(l_c[k]));
            m.nonneg(Affine::var(e[k]));
            m.nonneg(Affine::var(l_c[k]) + Affine::var(l_o[k]) - 1.0);
            m.le(Affine::var(l_c[k]), (g.local_capacity(delta) / gamma).into());
            m.le(Affine::var(l_o[k]), (inp.offload_cap[k] / gamma * (1.0 - CAP_MARGIN)).into());
            m.le(Affine::term(e[k], ENERGY_SCALE), Affine::term(t_o, g.max_tx_power * delta));
            // l_o Gamma ln2 / B <= t_o ln(1 + a E / t_o), divided by delta
            let a = inp.uplink_gain[k];
            m.exp(
                Affine::term(l_o[k], gamma * std::f64::consts::LN_2 / (s.bandwidth * delta)),
                Affine::var(t_o),
                Affine::var(t_o) + Affine::term(e[k], a * ENERGY_SCALE / delta),
            );
            // local computing energy: ec >= c l_c^3
            let c = g.compute_energy_coeff(delta) * gamma.powi(3) / ENERGY_SCALE;
            let ec = m.var();
            m.pow(Affine::term(ec, 1.0 / c), 1.0.into(), Affine::var(l_c[k]), 1.0 / 3.0);
            let net = Affine::constant(inp.harvest[k] / ENERGY_SCALE) - Affine::var(ec) - Affine::var(e[k]);
            totals[k] += &net;
            all += &net;
        }
        m.le(carried, Affine::term(t_u, relay * (1.0 - CAP_MARGIN)));
        vars.push(SlotVars { t_o, t_u, l_o, l_c, e });
    }
    for total in totals {
        m.le(Affine::var(eta), total);
    }
    m.minimize(-(Affine::var(eta) + all.clone() * TIE_BREAK));
    let sol = m.solve()?;

    let finish = |sol: &ConicSolution| {
        let raw = Allocation {
            t_o: vars.iter().map(|v| sol.x[v.t_o] * delta).collect(),
            t_u: vars.iter().map(|v| sol.x[v.t_u] * delta).collect(),
            e: vars.iter().map(|v| v.e.iter().map(|&i| sol.x[i] * ENERGY_SCALE).collect()).collect(),
            l_c: vars.iter().map(|v| v.l_c.iter().map(|&i| sol.x[i] * gamma).collect()).collect(),
            l_o: vars.iter().map(|v| v.l_o.iter().map(|&i| sol.x[i] * gamma).collect()).collect(),
            l_ou: vec![0.0; inputs.len()],
            l_ou_i: vec![Vec::new(); inputs.len()],
            e_uav_i: vec![Vec::new(); inputs.len()],
        };
        let allocation = polish(s, inputs, raw, split);
        let eta = net_energy(s, inputs, &allocation).into_iter().fold(f64::INFINITY, f64::min);
        ResourceSolution { allocation, eta, report: sol.report }
    };
    let first = finish(&sol);

    // Among the allocations within the slack of the best worst-GE energy,
    // take the one spending least in total.
    let slack = lexi_slack(first.eta);
    m.nonneg(Affine::var(eta) - (sol.x[eta] - slack / ENERGY_SCALE));
    m.minimize(-all);
    // the polished point is judged on its own, so an inaccurate solve is fine
    match m.solve() {
        Ok(raw) => {
            let second = finish(&raw);
            let total = |a: &Allocation| net_energy(s, inputs, a).iter().sum::<f64>();
            let feasible = audit_allocation(s, inputs, &second.allocation).iter().all(|(_, v)| *v <= FEAS_TOL);
            if feasible && second.eta >= first.eta - slack && total(&second.allocation) >= total(&first.allocation) {
                return Ok(second);
            }
            log::debug!(
                "resource allocation: second stage rejected (accurate {}, feasible {feasible}, lost {:.3e} J)",
                raw.accurate,
                first.eta - second.eta
            );
        }
        Err(e) => log::debug!("resource allocation: second stage failed: {e}"),
    }
    Ok(first)
}

/// `sum_n harvest - E_comp - E_k` per GE.
pub fn net_energy(s: &Scenario, inputs: &[SlotInputs], a: &Allocation) -> Vec<f64> {
    let spent = a.spent_energy(s);
    (0..s.num_ges())
        .map(|k| inputs.iter().map(|inp| inp.harvest[k]).sum::<f64>() - spent[k])
        .collect()
}

/// Snap a solver point onto the feasible set: exact minimal energies,
/// exact task splits and the smallest relay energies that carry the bits.
pub fn polish(s: &Scenario, inputs: &[SlotInputs], mut a: Allocation, split: TimeSplit) -> Allocation {
    let w = s.uplink_window();
    for (n, inp) in inputs.iter().enumerate() {
        let (mut t_o, mut t_u) = match window_split(s, split) {
            Some(pair) => pair,
            None => (a.t_o[n].max(0.0), a.t_u[n].max(0.0)),
        };
        if t_o + t_u > w {
            let f = w / (t_o + t_u);
            t_o *= f;
            t_u *= f;
        }
        let cap = relay_capacity(&inp.relay_gains, s.uav_max_power, s.bandwidth);
        for k in 0..s.num_ges() {
            let g = &s.ges[k];
            let mut l_o = a.l_o[n][k].clamp(0.0, s.task_bits.min(inp.offload_cap[k]));
            if t_o <= 0.0 {
                l_o = 0.0;
            }
            let max_bits = perspective_rate(t_o, inp.uplink_gain[k] * g.max_tx_power * t_o, 1.0, s.bandwidth);
            l_o = l_o.min(max_bits);
            a.l_o[n][k] = l_o;
        }
        let carried: f64 = a.l_o[n].iter().sum();
        if carried > t_u * cap {
            let f = t_u * cap / carried;
            a.l_o[n].iter_mut().for_each(|l| *l *= f);
        }
        for k in 0..s.num_ges() {
            let g = &s.ges[k];
            let l_o = a.l_o[n][k];
            a.l_c[n][k] = (s.task_bits - l_o).max(0.0);
            let e = if t_o > 0.0 { min_uplink_energy(l_o, t_o, inp.uplink_gain[k], s.bandwidth) } else { 0.0 };
            a.e[n][k] = e.min(g.max_tx_power * t_o);
        }
        a.t_o[n] = t_o;
        a.t_u[n] = t_u;
        let carried: f64 = a.l_o[n].iter().sum();
        a.l_ou[n] = carried;
        if t_u > 0.0 && !inp.relay_gains.is_empty() {
            let power = relay_power_for_rate(&inp.relay_gains, carried / t_u, s.bandwidth, s.uav_max_power);
            let p = waterfill(&inp.relay_gains, power);
            a.l_ou_i[n] = p
                .iter()
                .zip(&inp.relay_gains)
                .map(|(pi, gi)| t_u * s.bandwidth * (gi * pi).ln_1p() / std::f64::consts::LN_2)
                .collect();
            a.e_uav_i[n] = p.iter().map(|pi| pi * t_u).collect();
        } else {
            a.l_ou_i[n] = vec![0.0; inp.relay_gains.len()];
            a.e_uav_i[n] = vec![0.0; inp.relay_gains.len()];
        }
    }
    a
}

/// Violations of every allocation constraint, each divided by its natural
/// scale (task bits, slot length, energy budget). Only positive entries
/// are returned.
pub fn audit_allocation(s: &Scenario, inputs: &[SlotInputs], a: &Allocation) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let mut check = |name: String, v: f64| {
        if v > 0.0 || v.is_nan() {
            out.push((name, v));
        }
    };
    let gamma = s.task_bits;
    let ln2 = std::f64::consts::LN_2;
    for (n, inp) in inputs.iter().enumerate() {
        check(format!("time budget n={n}"), (a.t_o[n] + a.t_u[n] - s.uplink_window()) / s.slot_len);
        check(format!("t_o >= 0 n={n}"), -a.t_o[n] / s.slot_len);
        check(format!("t_u >= 0 n={n}"), -a.t_u[n] / s.slot_len);
        for k in 0..s.num_ges() {
            let g = &s.ges[k];
            check(format!("task requirement n={n} k={k}"), (gamma - a.l_c[n][k] - a.l_o[n][k]) / gamma);
            check(format!("local capacity n={n} k={k}"), (a.l_c[n][k] - g.local_capacity(s.slot_len)) / gamma);
            check(format!("L_c >= 0 n={n} k={k}"), -a.l_c[n][k] / gamma);
            check(format!("L_o >= 0 n={n} k={k}"), -a.l_o[n][k] / gamma);
            check(format!("E >= 0 n={n} k={k}"), -a.e[n][k]);
            let p_budget = g.max_tx_power * s.slot_len;
            check(format!("GE power n={n} k={k}"), (a.e[n][k] - g.max_tx_power * a.t_o[n]) / p_budget);
            let rate = perspective_rate(a.t_o[n], inp.uplink_gain[k] * a.e[n][k], 1.0, s.bandwidth);
            check(format!("uplink rate n={n} k={k}"), (a.l_o[n][k] - rate) / gamma);
            check(format!("downlink result n={n} k={k}"), (a.l_o[n][k] - inp.offload_cap[k]) / gamma);
        }
        let carried: f64 = a.l_o[n].iter().sum();
        check(format!("relay bits n={n}"), (carried - a.l_ou[n]) / gamma);
        check(format!("relay split n={n}"), (a.l_ou[n] - a.l_ou_i[n].iter().sum::<f64>()) / gamma);
        let budget = s.uav_max_power * s.slot_len;
        check(format!("UAV power n={n}"), (a.e_uav_i[n].iter().sum::<f64>() - s.uav_max_power * a.t_u[n]) / budget);
        for (i, (&bits, &e)) in a.l_ou_i[n].iter().zip(&a.e_uav_i[n]).enumerate() {
            let cap = a.t_u[n] * s.bandwidth * (inp.relay_gains[i] * e / a.t_u[n].max(1e-300)).ln_1p() / ln2;
            check(format!("relay rate n={n} i={i}"), (bits - cap) / gamma);
        }
    }
    out
}

/// The allocation program in its natural smooth form, for derivative and
/// optimality checks. Variables per slot are
/// `[t_o, t_u, (L_c, L_o, E) for each GE]` in units of slot length, task
/// bits and millijoules, followed by the epigraph variable `eta` (mJ).
pub struct ResourceProblem<'a> {
    pub scenario: &'a Scenario,
    pub inputs: &'a [SlotInputs],
}

impl ResourceProblem<'_> {
    fn per_slot(&self) -> usize {
        2 + 3 * self.scenario.num_ges()
    }

    fn eta_index(&self) -> usize {
        self.per_slot() * self.inputs.len()
    }

    /// Per-slot constraints: time budget, then for each GE task, local cap,
    /// power, uplink rate and result cap; then relay throughput.
    fn per_slot_constraints(&self) -> usize {
        2 + 5 * self.scenario.num_ges()
    }

    /// Pack an allocation (and `eta` in J) into the variable vector.
    pub fn pack(&self, a: &Allocation, eta: f64) -> Vec<f64> {
        let s = self.scenario;
        let mut x = Vec::with_capacity(self.dim());
        for n in 0..self.inputs.len() {
            x.push(a.t_o[n] / s.slot_len);
            x.push(a.t_u[n] / s.slot_len);
            for k in 0..s.num_ges() {
                x.push(a.l_c[n][k] / s.task_bits);
                x.push(a.l_o[n][k] / s.task_bits);
                x.push(a.e[n][k] / ENERGY_SCALE);
            }
        }
        x.push(eta / ENERGY_SCALE);
        x
    }

    fn idx(&self, n: usize, k: usize, which: usize) -> usize {
        n * self.per_slot() + 2 + 3 * k + which
    }
}

impl SmoothProblem for ResourceProblem<'_> {
    fn dim(&self) -> usize {
        self.eta_index() + 1
    }

    fn num_constraints(&self) -> usize {
        self.inputs.len() * self.per_slot_constraints() + self.scenario.num_ges()
    }

    fn objective(&self, x: &[f64]) -> f64 {
        -x[self.eta_index()]
    }

    fn objective_grad(&self, _x: &[f64]) -> SparseGrad {
        vec![(self.eta_index(), -1.0)]
    }

    fn constraint(&self, i: usize, x: &[f64]) -> f64 {
        let s = self.scenario;
        let kk = s.num_ges();
        let per = self.per_slot_constraints();
        let (gamma, delta) = (s.task_bits, s.slot_len);
        if i >= self.inputs.len() * per {
            let k = i - self.inputs.len() * per;
            let g = &s.ges[k];
            let net: f64 = (0..self.inputs.len())
                .map(|n| {
                    let l_c = x[self.idx(n, k, 0)] * gamma;
                    let ec = local_compute_energy(l_c, g.cycles_per_bit, g.capacitance, delta);
                    (self.inputs[n].harvest[k] - ec) / ENERGY_SCALE - x[self.idx(n, k, 2)]
                })
                .sum();
            return x[self.eta_index()] - net;
        }
        let (n, r) = (i / per, i % per);
        let inp = &self.inputs[n];
        let t_o = x[n * self.per_slot()];
        let t_u = x[n * self.per_slot() + 1];
        if r == 0 {
            return t_o + t_u - s.uplink_window() / delta;
        }
        if r == per - 1 {
            let cap = relay_capacity(&inp.relay_gains, s.uav_max_power, s.bandwidth) * delta / gamma;
            return (0..kk).map(|k| x[self.idx(n, k, 1)]).sum::<f64>() - t_u * cap;
        }
        let (k, c) = ((r - 1) / 5, (r - 1) % 5);
        let g = &s.ges[k];
        let (l_c, l_o, e) = (x[self.idx(n, k, 0)], x[self.idx(n, k, 1)], x[self.idx(n, k, 2)]);
        match c {
            0 => 1.0 - l_c - l_o,
            1 => l_c - g.local_capacity(delta) / gamma,
            2 => e * ENERGY_SCALE / (g.max_tx_power * delta) - t_o,
            3 => {
                let a = inp.uplink_gain[k] * ENERGY_SCALE / delta;
                let c1 = gamma * std::f64::consts::LN_2 / (s.bandwidth * delta);
                c1 * l_o - t_o * (a * e / t_o).ln_1p()
            }
            _ => l_o - inp.offload_cap[k] / gamma,
        }
    }

    fn constraint_grad(&self, i: usize, x: &[f64]) -> SparseGrad {
        let s = self.scenario;
        let kk = s.num_ges();
        let per = self.per_slot_constraints();
        let (gamma, delta) = (s.task_bits, s.slot_len);
        if i >= self.inputs.len() * per {
            let k = i - self.inputs.len() * per;
            let g = &s.ges[k];
            let mut out = vec![(self.eta_index(), 1.0)];
            for n in 0..self.inputs.len() {
                let l_c = x[self.idx(n, k, 0)];
                let coeff = g.compute_energy_coeff(delta) * gamma.powi(3) / ENERGY_SCALE;
                out.push((self.idx(n, k, 0), 3.0 * coeff * l_c * l_c));
                out.push((self.idx(n, k, 2), 1.0));
            }
            return out;
        }
        let (n, r) = (i / per, i % per);
        let inp = &self.inputs[n];
        let (i_to, i_tu) = (n * self.per_slot(), n * self.per_slot() + 1);
        if r == 0 {
            return vec![(i_to, 1.0), (i_tu, 1.0)];
        }
        if r == per - 1 {
            let cap = relay_capacity(&inp.relay_gains, s.uav_max_power, s.bandwidth) * delta / gamma;
            let mut out: SparseGrad = (0..kk).map(|k| (self.idx(n, k, 1), 1.0)).collect();
            out.push((i_tu, -cap));
            return out;
        }
        let (k, c) = ((r - 1) / 5, (r - 1) % 5);
        let g = &s.ges[k];
        match c {
            0 => vec![(self.idx(n, k, 0), -1.0), (self.idx(n, k, 1), -1.0)],
            1 => vec![(self.idx(n, k, 0), 1.0)],
            2 => vec![(self.idx(n, k, 2), ENERGY_SCALE / (g.max_tx_power * delta)), (i_to, -1.0)],
            3 => {
                let a = inp.uplink_gain[k] * ENERGY_SCALE / delta;
                let c1 = gamma * std::f64::consts::LN_2 / (s.bandwidth * delta);
                let (t_o, e) = (x[i_to], x[self.idx(n, k, 2)]);
                let z = a * e / t_o;
                vec![
                    (self.idx(n, k, 1), c1),
                    (i_to, -(z.ln_1p() - z / (1.0 + z))),
                    (self.idx(n, k, 2), -a / (1.0 + z)),
                ]
            }
            _ => vec![(self.idx(n, k, 1), 1.0)],
        }
    }

    fn constraint_name(&self, i: usize) -> String {
        let per = self.per_slot_constraints();
        if i >= self.inputs.len() * per {
            return format!("epigraph k={}", i - self.inputs.len() * per);
        }
        let (n, r) = (i / per, i % per);
        if r == 0 {
            return format!("time budget n={n}");
        }
        if r == per - 1 {
            return format!("relay throughput n={n}");
        }
        let names = ["task requirement", "local capacity", "GE power", "uplink rate", "result downlink"];
        format!("{} n={n} k={}", names[(r - 1) % 5], (r - 1) / 5)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::default_scenario;
    use nalgebra::DVector;
    use crate::solver_core::check_gradients;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn log_sum_rate(gains: &[f64], e: &DVector<f64>) -> f64 {
        gains.iter().zip(e.iter()).map(|(g, x)| (g * x).ln_1p()).sum()
    }

    #[test]
    fn perspective_examples() {
        assert_eq!(perspective_rate(0.0, 1.0, 1.0, 1e7), 0.0);
        assert!((perspective_rate(1.0, 1.0, 1.0, 1e7) - 1e7).abs() < 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let (t1, t2, x) = (rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0), rng.gen_range(0.0..5.0));
            let mid = perspective_rate(0.5 * (t1 + t2), x, 1.0, 1.0);
            let avg = 0.5 * (perspective_rate(t1, x, 1.0, 1.0) + perspective_rate(t2, x, 1.0, 1.0));
            assert!(mid >= avg - 1e-12);
        }
    }

    #[test]
    fn compute_energy_examples() {
        assert_eq!(local_compute_energy(0.0, 1000.0, 1e-28, 0.5), 0.0);
        assert!((local_compute_energy(1e6, 1000.0, 1e-28, 0.5) - 0.4).abs() < 1e-12);
        let a = local_compute_energy(3e5, 1000.0, 1e-28, 0.5);
        let b = local_compute_energy(6e5, 1000.0, 1e-28, 0.5);
        assert!((b / a - 8.0).abs() < 1e-12);
    }

    #[test]
    fn waterfill_examples() {
        let e = waterfill(&[2.0, 2.0, 2.0], 3.0);
        assert!(e.iter().all(|x| (x - 1.0).abs() < 1e-15));
        let e = waterfill(&[4.0, 1.0], 1.75);
        assert!((e[0] - 1.25).abs() < 1e-15 && (e[1] - 0.5).abs() < 1e-15);
        assert!(waterfill_kkt_residual(&[4.0, 1.0], 1.75, &e) <= 1e-8);
        assert_eq!(waterfill(&[4.0, 1.0], 0.0), vec![0.0, 0.0]);
        let e = waterfill(&[4.0, 1.0], 0.5);
        assert!((e[0] - 0.5).abs() < 1e-15 && e[1] == 0.0);
        assert!(waterfill_kkt_residual(&[4.0, 1.0], 0.5, &e) <= 1e-8);
    }

    #[test]
    fn waterfill_beats_random_splits() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let g: Vec<f64> = (0..5).map(|_| rng.gen_range(0.1..10.0)).collect();
            let budget = rng.gen_range(0.0..3.0);
            let best = log_sum_rate(&g, &DVector::from_vec(waterfill(&g, budget)));
            for _ in 0..20 {
                let w: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..1.0)).collect();
                let total: f64 = w.iter().sum();
                let e = DVector::from_iterator(5, w.iter().map(|x| x / total * budget));
                assert!(log_sum_rate(&g, &e) <= best + 1e-12);
            }
        }
    }

    #[test]
    fn relay_power_inverts_capacity() {
        let g = [3e9, 1e9, 2e7];
        let rate = 0.5 * relay_capacity(&g, 50.0, 1e7);
        let p = relay_power_for_rate(&g, rate, 1e7, 50.0);
        assert!((relay_capacity(&g, p, 1e7) - rate).abs() <= 1e-9 * rate);
    }

    fn single_ge() -> Scenario {
        let mut s = default_scenario();
        s.ges.truncate(1);
        s.uav_antennas = 1;
        s.mission_time = s.slot_len;
        s
    }

    fn inputs_for(s: &Scenario, gain: f64, relay: f64, cap: f64) -> Vec<SlotInputs> {
        vec![SlotInputs {
            uplink_gain: vec![gain; s.num_ges()],
            relay_gains: vec![relay],
            offload_cap: vec![cap; s.num_ges()],
            harvest: vec![0.05; s.num_ges()],
        }]
    }

    #[test]
    fn local_only_boundary() {
        let s = single_ge();
        let inputs = inputs_for(&s, 1e5, 1e9, 0.0);
        let sol = solve_resource_allocation(&s, &inputs, TimeSplit::Optimized).unwrap();
        let a = &sol.allocation;
        assert!((a.l_c[0][0] - s.task_bits).abs() <= 1e-6 * s.task_bits);
        assert_eq!(a.l_o[0][0], 0.0);
        assert_eq!(a.e[0][0], 0.0);
        assert!((sol.eta - (0.05 - 0.4)).abs() < 1e-6);
    }

    #[test]
    fn unreachable_task_is_reported() {
        let mut s = single_ge();
        s.task_bits = 2e6;
        let inputs = inputs_for(&s, 1e5, 1e9, 0.0);
        let err = solve_resource_allocation(&s, &inputs, TimeSplit::Optimized).unwrap_err();
        assert!(err.to_string().contains("task requirement infeasible"), "{err}");
    }

    #[test]
    fn solution_is_feasible_and_beats_local_only() {
        let s = single_ge();
        let inputs = inputs_for(&s, 1e5, 1e9, 1e7);
        let sol = solve_resource_allocation(&s, &inputs, TimeSplit::Optimized).unwrap();
        let worst = audit_allocation(&s, &inputs, &sol.allocation)
            .into_iter()
            .fold(0.0f64, |m, (_, v)| m.max(v));
        assert!(worst <= 1e-6);
        assert!(sol.eta > 0.05 - 0.4 + 0.3);
    }

    #[test]
    fn more_power_never_hurts() {
        let mut s = default_scenario();
        s.mission_time = 1.5;
        let inputs: Vec<SlotInputs> = (0..3)
            .map(|n| SlotInputs {
                uplink_gain: vec![2e3 * (n + 1) as f64, 5e3, 1e4, 3e3],
                relay_gains: vec![1e9, 1e8],
                offload_cap: vec![6e5, 8e5, 1e6, 1e6],
                harvest: vec![0.01, 0.02, 0.015, 0.01],
            })
            .collect();
        let mut last = f64::NEG_INFINITY;
        for p in [0.01, 0.05, 0.2, 1.0] {
            s.ges.iter_mut().for_each(|g| g.max_tx_power = p);
            let eta = solve_resource_allocation(&s, &inputs, TimeSplit::Optimized).unwrap().eta;
            assert!(eta >= last - 1e-7, "{eta} < {last}");
            last = eta;
        }
    }

    #[test]
    fn natural_form_gradients() {
        let s = default_scenario();
        let inputs: Vec<SlotInputs> = (0..2)
            .map(|_| SlotInputs {
                uplink_gain: vec![2e3, 5e3, 1e4, 3e3],
                relay_gains: vec![1e9, 1e8],
                offload_cap: vec![6e5, 8e5, 1e6, 1e6],
                harvest: vec![0.01, 0.02, 0.015, 0.01],
            })
            .collect();
        let p = ResourceProblem { scenario: &s, inputs: &inputs };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let x: Vec<f64> = (0..p.dim()).map(|_| rng.gen_range(0.05..1.0)).collect();
            assert!(check_gradients(&p, &x, 1e-6).max_rel_error < 1e-5);
        }
    }
}
