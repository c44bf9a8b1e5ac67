//! Downlink SWIPT beamforming: beam covariances and power-splitting ratios
//! chosen by successive convex approximation of the harvested-energy term,
//! followed by rank-one beam recovery.
//!
//! Each covariance `W_k` is restricted to the span of the GE channels of its
//! slot. Every quantity in the program depends on `W_k` only through
//! quadratic forms `h_j^H W_k h_j` (unchanged by the restriction) and its
//! trace (which can only shrink), so the restriction loses nothing and
//! keeps the PSD blocks `K x K` instead of `L x L`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Infeasibility, Result};
use crate::scenario::Scenario;
use crate::solver_core::{
    hermitian_eigen, orthonormal_basis, psd_project, quad_form, trace_re, Affine, CMatrix, CVector, ConicModel,
    KktReport, C64, FEAS_TOL,
};

/// Lower bound on `ln rho` inside the conic model.
const LOG_RHO_FLOOR: f64 = -36.0;
/// Relative margin placed on `rho` above its smallest feasible value.
pub(crate) const RHO_MARGIN: f64 = 1e-6;
/// Relative slack allowed when checking that the SCA objective never
/// decreases; each value carries the inner solver's accuracy.
pub const SCA_MONOTONE_TOL: f64 = 1e-7;
/// Candidate beams drawn per slot when rank-one recovery breaks a constraint.
pub const RANDOMIZATION_DRAWS: usize = 1000;

/// SINR at the information decoder of GE `k`.
pub fn downlink_sinr(rho: f64, h: &CVector, beams: &[CVector], k: usize, sigma_k2: f64, delta_k2: f64) -> f64 {
    if rho == 0.0 {
        return 0.0;
    }
    let gain = |j: usize| h.dotc(&beams[j]).norm_sqr();
    let interference: f64 = (0..beams.len()).filter(|&j| j != k).map(gain).sum();
    rho * gain(k) / (rho * (interference + sigma_k2) + delta_k2)
}

/// Energy harvested by a GE over the downlink period.
pub fn harvested_energy(rho: f64, h: &CVector, beams: &[CVector], sigma_k2: f64, zeta_k: f64, t_d: f64) -> f64 {
    t_d * zeta_k * (1.0 - rho) * received_power(h, beams, sigma_k2)
}

/// `sum_j |h^H w_j|^2 + sigma_k^2`.
pub fn received_power(h: &CVector, beams: &[CVector], sigma_k2: f64) -> f64 {
    beams.iter().map(|w| h.dotc(w).norm_sqr()).sum::<f64>() + sigma_k2
}

/// First-order expansion of `exp` at `anchor`, a global under-estimator.
pub fn taylor_xi1(omega: f64, anchor: f64) -> f64 {
    anchor.exp() * (1.0 + omega - anchor)
}

/// SINR needed to return `theta L_o` result bits within `t_d`.
pub fn sinr_target(s: &Scenario, l_o: f64) -> f64 {
    (s.result_ratio * l_o / (s.downlink_time * s.bandwidth) * std::f64::consts::LN_2).exp_m1()
}

/// Offloaded bits whose results fit in the downlink at the given SINR.
pub fn offload_cap(s: &Scenario, sinr: f64) -> f64 {
    s.downlink_time * s.bandwidth * sinr.ln_1p() / std::f64::consts::LN_2 / s.result_ratio
}

/// Smallest power-splitting ratio meeting `target`, or `None` if no
/// `rho <= 1` does.
pub fn min_rho(target: f64, h: &CVector, beams: &[CVector], k: usize, sigma_k2: f64, delta_k2: f64) -> Option<f64> {
    if target <= 0.0 {
        return Some(0.0);
    }
    let signal = h.dotc(&beams[k]).norm_sqr();
    let interference: f64 = (0..beams.len()).filter(|&j| j != k).map(|j| h.dotc(&beams[j]).norm_sqr()).sum();
    let margin = signal - target * (interference + sigma_k2);
    if margin <= 0.0 {
        return None;
    }
    let rho = target * delta_k2 / margin;
    (rho <= 1.0).then_some(rho)
}

/// Identities checked on a rank-one recovery.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RankOneAudit {
    /// `|h^H W' h - h^H W h| / h^H W h`
    pub quad_rel_error: f64,
    pub trace_before: f64,
    pub trace_after: f64,
    /// `lambda_2 / lambda_1` of `w w^H` computed numerically.
    pub rank_ratio: f64,
}

/// `w = W h / sqrt(h^H W h)`, so that `w w^H = W h h^H W / (h^H W h)`.
pub fn rank_one_recover(w_star: &CMatrix, h: &CVector) -> Result<(CVector, RankOneAudit)> {
    let q = quad_form(w_star, h);
    if !(q > 0.0) {
        return Err(Error::Solver(format!("rank-one recovery undefined: h^H W h = {q:e}")));
    }
    let w = w_star * h / C64::from(q.sqrt());
    let recovered = &w * w.adjoint();
    let (vals, _) = hermitian_eigen(&recovered);
    let rank_ratio = if vals.len() > 1 && vals[0] > 0.0 { vals[1].abs() / vals[0] } else { 0.0 };
    let audit = RankOneAudit {
        quad_rel_error: (quad_form(&recovered, h) - q).abs() / q,
        trace_before: trace_re(w_star),
        trace_after: w.norm_squared(),
        rank_ratio,
    };
    Ok((w, audit))
}

/// Fixed per-slot data for the downlink subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct DownlinkSlot {
    /// `h_ku[k]` (not distance-normalized).
    pub h: Vec<CVector>,
    /// SINR target per GE from its offloaded bits.
    pub sinr_target: Vec<f64>,
    /// `E_comp + E_k` per GE (J).
    pub spent: Vec<f64>,
}

/// How the power-splitting ratio is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum RhoMode {
    #[default]
    Optimized,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DownlinkOptions {
    pub rho: RhoMode,
    pub max_outer: usize,
    pub tol: f64,
    pub draws: usize,
    pub seed: u64,
}

impl Default for DownlinkOptions {
    fn default() -> Self {
        DownlinkOptions {
            rho: RhoMode::Optimized,
            max_outer: 20,
            tol: 1e-5,
            draws: RANDOMIZATION_DRAWS,
            seed: 0,
        }
    }
}

/// Summary of the recovery step over all slots.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RecoveryReport {
    pub max_quad_rel_error: f64,
    /// `max(tr W' - tr W)`; never positive up to round-off.
    pub max_trace_increase: f64,
    pub max_rank_ratio: f64,
    /// Largest relative violation of the relaxed constraints at the
    /// recovered beams, before randomization.
    pub max_violation: f64,
    pub randomized_slots: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DownlinkSolution {
    /// `w[n][k]`
    pub w: Vec<Vec<CVector>>,
    /// Relaxed covariances `W*[n][k]` from the last convex solve.
    pub covariance: Vec<Vec<CMatrix>>,
    pub rho: Vec<Vec<f64>>,
    pub rho_tilde: Vec<Vec<f64>>,
    /// `ln` of the received power at the recovered beams.
    pub omega: Vec<Vec<f64>>,
    /// Worst-GE net energy at the recovered beams (J).
    pub eta: f64,
    /// Relaxed objective after each convex solve (J).
    pub sca_history: Vec<f64>,
    pub report: KktReport,
    pub recovery: RecoveryReport,
    pub converged: bool,
}

impl DownlinkSolution {
    /// Matched-filter beams with equal power and `rho = 1/2`.
    pub fn initial(s: &Scenario, slots: &[DownlinkSlot]) -> DownlinkSolution {
        let kk = s.num_ges();
        let amp = (s.uav_max_power / kk as f64).sqrt();
        let w: Vec<Vec<CVector>> = slots
            .iter()
            .map(|sl| sl.h.iter().map(|h| h * C64::from(amp / h.norm())).collect())
            .collect();
        from_beams(s, slots, w, vec![vec![0.5; kk]; slots.len()])
    }

    pub fn harvest(&self, s: &Scenario, slots: &[DownlinkSlot]) -> Vec<Vec<f64>> {
        slot_harvest(s, slots, &self.w, &self.rho)
    }
}

fn slot_harvest(s: &Scenario, slots: &[DownlinkSlot], w: &[Vec<CVector>], rho: &[Vec<f64>]) -> Vec<Vec<f64>> {
    slots
        .iter()
        .enumerate()
        .map(|(n, sl)| {
            (0..s.num_ges())
                .map(|k| {
                    let g = &s.ges[k];
                    harvested_energy(rho[n][k], &sl.h[k], &w[n], g.noise_power, g.conversion_efficiency, s.downlink_time)
                })
                .collect()
        })
        .collect()
}

/// Worst-GE net energy for given beams and splitting ratios.
pub fn eta_of(s: &Scenario, slots: &[DownlinkSlot], w: &[Vec<CVector>], rho: &[Vec<f64>]) -> f64 {
    let harvest = slot_harvest(s, slots, w, rho);
    (0..s.num_ges())
        .map(|k| (0..slots.len()).map(|n| harvest[n][k] - slots[n].spent[k]).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

fn from_beams(s: &Scenario, slots: &[DownlinkSlot], w: Vec<Vec<CVector>>, rho: Vec<Vec<f64>>) -> DownlinkSolution {
    let omega = slots
        .iter()
        .enumerate()
        .map(|(n, sl)| {
            (0..s.num_ges())
                .map(|k| received_power(&sl.h[k], &w[n], s.ges[k].noise_power).ln())
                .collect()
        })
        .collect();
    let covariance = w.iter().map(|ws| ws.iter().map(|v| v * v.adjoint()).collect()).collect();
    let rho_tilde = rho.iter().map(|r| r.iter().map(|x: &f64| x.ln()).collect()).collect();
    let eta = eta_of(s, slots, &w, &rho);
    DownlinkSolution {
        w,
        covariance,
        rho,
        rho_tilde,
        omega,
        eta,
        sca_history: Vec::new(),
        report: KktReport::default(),
        recovery: RecoveryReport::default(),
        converged: true,
    }
}

/// Anchors `ln(P ||h_k||^2 / L + sigma_k^2)` of the isotropic start
/// `W_j = P / (K L) I`.
pub fn isotropic_anchors(s: &Scenario, slots: &[DownlinkSlot]) -> Vec<Vec<f64>> {
    let l = s.uav_antennas as f64;
    slots
        .iter()
        .map(|sl| {
            sl.h.iter()
                .zip(&s.ges)
                .map(|(h, g)| (s.uav_max_power * h.norm_squared() / l + g.noise_power).ln())
                .collect()
        })
        .collect()
}

/// Coefficients `c` with `g^H X g = sum_{a<=b} c_ab Y_ab` for the real
/// `2r x 2r` representation `Y` of `X`, symmetrized over the complex
/// structure.
fn quad_coeffs(g: &CVector) -> Vec<Vec<f64>> {
    let r = g.len();
    let z: Vec<f64> = g.iter().map(|c| c.re).chain(g.iter().map(|c| c.im)).collect();
    let jz: Vec<f64> = g.iter().map(|c| -c.im).chain(g.iter().map(|c| c.re)).collect();
    let mut out = vec![vec![0.0; 2 * r]; 2 * r];
    for a in 0..2 * r {
        for b in a..2 * r {
            let m = 0.5 * (z[a] * z[b] + jz[a] * jz[b]);
            out[a][b] = if a == b { m } else { 2.0 * m };
        }
    }
    out
}

struct SlotModel {
    basis: CMatrix,
    /// `y[k][a][b]` variable index, `a <= b`.
    y: Vec<Vec<Vec<usize>>>,
    omega: Vec<usize>,
    rho_tilde: Vec<usize>,
}

fn quad_expr(coeffs: &[Vec<f64>], y: &[Vec<usize>], scale: f64) -> Affine {
    let mut e = Affine::default();
    for a in 0..coeffs.len() {
        for b in a..coeffs.len() {
            if coeffs[a][b] != 0.0 {
                e.add_term(y[a][b], scale * coeffs[a][b]);
            }
        }
    }
    e
}

fn recover_x(sol: &[f64], y: &[Vec<usize>], r: usize) -> CMatrix {
    let at = |a: usize, b: usize| if a <= b { sol[y[a][b]] } else { sol[y[b][a]] };
    let x = CMatrix::from_fn(r, r, |a, b| {
        C64::new(0.5 * (at(a, b) + at(a + r, b + r)), 0.5 * (at(a + r, b) - at(a, b + r)))
    });
    psd_project(&((&x + x.adjoint()) * C64::from(0.5)))
}

struct Relaxed {
    /// `X[n][k]` in the slot basis, in units of `P_uav_max`.
    x: Vec<Vec<CMatrix>>,
    basis: Vec<CMatrix>,
    omega: Vec<Vec<f64>>,
    rho_tilde: Vec<Vec<f64>>,
    objective: f64,
    report: KktReport,
}

fn solve_relaxed(s: &Scenario, slots: &[DownlinkSlot], anchors: &[Vec<f64>], mode: RhoMode) -> Result<Relaxed> {
    let kk = s.num_ges();
    let p = s.uav_max_power;
    // energy unit: the largest single-slot harvest at the anchors
    let energy_scale = slots
        .iter()
        .enumerate()
        .flat_map(|(n, _)| (0..kk).map(move |k| (n, k)))
        .map(|(n, k)| s.downlink_time * s.ges[k].conversion_efficiency * anchors[n][k].exp())
        .fold(1e-300, f64::max);
    let mut m = ConicModel::new("downlink SINR");
    let eta = m.var();
    let mut totals = vec![Affine::default(); kk];
    let mut models = Vec::with_capacity(slots.len());
    for (n, sl) in slots.iter().enumerate() {
        let (basis, r) = orthonormal_basis(&CMatrix::from_columns(&sl.h));
        let dim = 2 * r;
        let mut y = Vec::with_capacity(kk);
        let mut power = Affine::default();
        for _ in 0..kk {
            let mut idx = vec![vec![usize::MAX; dim]; dim];
            for b in 0..dim {
                for a in 0..=b {
                    idx[a][b] = m.var();
                }
            }
            let mat: Vec<Vec<Affine>> = (0..dim)
                .map(|a| (0..dim).map(|b| Affine::var(if a <= b { idx[a][b] } else { idx[b][a] })).collect())
                .collect();
            m.psd(&mat);
            for a in 0..dim {
                power.add_term(idx[a][a], 0.5);
            }
            y.push(idx);
        }
        m.le(power, 1.0.into());
        let coeffs: Vec<Vec<Vec<f64>>> = sl.h.iter().map(|h| quad_coeffs(&(basis.adjoint() * h))).collect();
        let omega = m.vars(kk);
        let rho_tilde = m.vars(kk);
        for k in 0..kk {
            let g = &s.ges[k];
            let received: Vec<Affine> = (0..kk).map(|j| quad_expr(&coeffs[k], &y[j], p)).collect();
            let mut total = Affine::constant(g.noise_power);
            for e in &received {
                total += e;
            }
            m.exp(Affine::var(omega[k]), 1.0.into(), total);
            match mode {
                RhoMode::Optimized => {
                    m.le(Affine::var(rho_tilde[k]), 0.0.into());
                    m.le(LOG_RHO_FLOOR.into(), Affine::var(rho_tilde[k]));
                }
                RhoMode::Fixed(rho) => m.eq(Affine::var(rho_tilde[k]) - rho.ln()),
            }
            let gamma = sl.sinr_target[k];
            if gamma > 0.0 {
                // tr(H_k W_k) >= gamma (sum_{j != k} tr(H_k W_j) + sigma_k^2 + delta_k^2 e^{-rho~})
                let sv = m.var();
                m.exp(Affine::constant(g.decoder_noise_power.ln()) - Affine::var(rho_tilde[k]), 1.0.into(), Affine::var(sv));
                let mut rhs = Affine::constant(g.noise_power) + Affine::var(sv);
                for (j, e) in received.iter().enumerate() {
                    if j != k {
                        rhs += e;
                    }
                }
                let scale = 1.0 / anchors[n][k].exp();
                m.le(rhs * (gamma * scale), received[k].clone() * scale);
            }
            // u >= e^{rho~ + Omega}
            let u = m.var();
            m.exp(Affine::var(rho_tilde[k]) + Affine::var(omega[k]), 1.0.into(), Affine::var(u));
            let a0 = anchors[n][k];
            let coeff = s.downlink_time * g.conversion_efficiency / energy_scale;
            let xi = Affine::constant(a0.exp() * (1.0 - a0)) + Affine::term(omega[k], a0.exp());
            let net = (xi - Affine::var(u)) * coeff - sl.spent[k] / energy_scale;
            totals[k] += &net;
        }
        models.push(SlotModel { basis, y, omega, rho_tilde });
    }
    for t in totals {
        m.le(Affine::var(eta), t);
    }
    m.minimize(-Affine::var(eta));
    let sol = m.solve()?;
    let r_of = |sm: &SlotModel| sm.basis.ncols();
    Ok(Relaxed {
        x: models.iter().map(|sm| sm.y.iter().map(|y| recover_x(&sol.x, y, r_of(sm))).collect()).collect(),
        omega: models.iter().map(|sm| sm.omega.iter().map(|&i| sol.x[i]).collect()).collect(),
        rho_tilde: models.iter().map(|sm| sm.rho_tilde.iter().map(|&i| sol.x[i]).collect()).collect(),
        basis: models.into_iter().map(|sm| sm.basis).collect(),
        objective: sol.x[eta] * energy_scale,
        report: sol.report,
    })
}

/// Quick necessary check: each GE must reach its SINR target with all the
/// UAV power on a matched beam and `rho = 1`.
fn precheck(s: &Scenario, slots: &[DownlinkSlot]) -> Result<()> {
    for (n, sl) in slots.iter().enumerate() {
        for (k, g) in s.ges.iter().enumerate() {
            let best = s.uav_max_power * sl.h[k].norm_squared() / (g.noise_power + g.decoder_noise_power);
            if sl.sinr_target[k] > best * (1.0 + 1e-9) {
                return Err(Error::Infeasible(Infeasibility {
                    constraint: "downlink SINR".into(),
                    slot: Some(n),
                    ge: Some(k),
                    detail: format!("target {:.6e} exceeds single-user bound {best:.6e}", sl.sinr_target[k]),
                }));
            }
        }
    }
    Ok(())
}

/// Solve the downlink subproblem by SCA from the given `Omega` anchors.
pub fn solve_downlink(
    s: &Scenario,
    slots: &[DownlinkSlot],
    anchors: Option<&[Vec<f64>]>,
    opts: &DownlinkOptions,
) -> Result<DownlinkSolution> {
    precheck(s, slots)?;
    let mut anchors = match anchors {
        Some(a) => a.to_vec(),
        None => isotropic_anchors(s, slots),
    };
    let mut history = Vec::new();
    let mut relaxed = solve_relaxed(s, slots, &anchors, opts.rho)?;
    history.push(relaxed.objective);
    let mut converged = false;
    for _ in 1..opts.max_outer {
        anchors = relaxed.omega.clone();
        let next = solve_relaxed(s, slots, &anchors, opts.rho)?;
        let prev = relaxed.objective;
        history.push(next.objective);
        let done = (next.objective - prev).abs() <= opts.tol * prev.abs().max(1.0);
        if next.objective >= prev {
            relaxed = next;
        }
        if done {
            converged = true;
            break;
        }
    }
    if opts.max_outer <= 1 {
        converged = true;
    }
    if !converged {
        log::warn!("downlink SCA stopped after {} outer iterations", opts.max_outer);
    }
    let mut sol = recover(s, slots, &relaxed, opts)?;
    sol.sca_history = history;
    sol.converged = converged;
    Ok(sol)
}

/// Splitting ratios for given beams: the smallest feasible `rho` (or the
/// fixed value). `None` when some target cannot be met.
fn rhos_for(s: &Scenario, sl: &DownlinkSlot, w: &[CVector], mode: RhoMode) -> Option<Vec<f64>> {
    (0..s.num_ges())
        .map(|k| {
            let g = &s.ges[k];
            match mode {
                RhoMode::Fixed(rho) => {
                    let ok = downlink_sinr(rho, &sl.h[k], w, k, g.noise_power, g.decoder_noise_power)
                        >= sl.sinr_target[k] * (1.0 - 1e-12);
                    ok.then_some(rho)
                }
                RhoMode::Optimized => min_rho(sl.sinr_target[k], &sl.h[k], w, k, g.noise_power, g.decoder_noise_power)
                    .map(|r| (r * (1.0 + RHO_MARGIN)).min(1.0)),
            }
        })
        .collect()
}

/// Re-derive the splitting ratios of fixed beams for new channels: the
/// smallest ratio meeting each target, or 1 where none does.
pub fn refit_rho(s: &Scenario, slots: &[DownlinkSlot], d: &mut DownlinkSolution) {
    for (n, sl) in slots.iter().enumerate() {
        for (k, g) in s.ges.iter().enumerate() {
            let rho = min_rho(sl.sinr_target[k], &sl.h[k], &d.w[n], k, g.noise_power, g.decoder_noise_power)
                .map_or(1.0, |r| (r * (1.0 + RHO_MARGIN)).min(1.0));
            d.rho[n][k] = rho;
            d.rho_tilde[n][k] = rho.ln();
        }
    }
    d.eta = eta_of(s, slots, &d.w, &d.rho);
}

fn recover(s: &Scenario, slots: &[DownlinkSlot], relaxed: &Relaxed, opts: &DownlinkOptions) -> Result<DownlinkSolution> {
    let kk = s.num_ges();
    let p = s.uav_max_power;
    let mut report = RecoveryReport::default();
    let mut beams = Vec::with_capacity(slots.len());
    let mut rhos = Vec::with_capacity(slots.len());
    let mut covariance = Vec::with_capacity(slots.len());
    for (n, sl) in slots.iter().enumerate() {
        let basis = &relaxed.basis[n];
        let w_star: Vec<CMatrix> = relaxed.x[n].iter().map(|x| basis * x * basis.adjoint() * C64::from(p)).collect();
        let mut w = Vec::with_capacity(kk);
        for k in 0..kk {
            let v = match rank_one_recover(&w_star[k], &sl.h[k]) {
                Ok((v, audit)) => {
                    report.max_quad_rel_error = report.max_quad_rel_error.max(audit.quad_rel_error);
                    report.max_trace_increase = report.max_trace_increase.max(audit.trace_after - audit.trace_before);
                    report.max_rank_ratio = report.max_rank_ratio.max(audit.rank_ratio);
                    v
                }
                Err(_) => principal_beam(&w_star[k]),
            };
            w.push(v);
        }
        // relaxed constraints re-checked at the recovered beams
        let mut violation = 0.0f64;
        for k in 0..kk {
            let g = &s.ges[k];
            let prx = received_power(&sl.h[k], &w, g.noise_power);
            let omega = relaxed.omega[n][k];
            violation = violation.max((omega.exp() - prx) / prx);
            let rho = relaxed.rho_tilde[n][k].exp();
            let sinr = downlink_sinr(rho, &sl.h[k], &w, k, g.noise_power, g.decoder_noise_power);
            if sl.sinr_target[k] > 0.0 {
                violation = violation.max((sl.sinr_target[k] - sinr) / sl.sinr_target[k]);
            }
        }
        report.max_violation = report.max_violation.max(violation);
        let mut rho = rhos_for(s, sl, &w, opts.rho);
        if violation > FEAS_TOL || rho.is_none() {
            report.randomized_slots.push(n);
            if let Some((bw, br)) = randomize(s, sl, &w_star, &w, rho.as_deref(), n, opts) {
                w = bw;
                rho = Some(br);
            }
        }
        let rho = rho.ok_or_else(|| {
            Error::Infeasible(Infeasibility {
                constraint: "downlink SINR".into(),
                slot: Some(n),
                ge: None,
                detail: format!("no rank-one beams found after {} randomized draws", opts.draws),
            })
        })?;
        beams.push(w);
        rhos.push(rho);
        covariance.push(w_star);
    }
    let mut sol = from_beams(s, slots, beams, rhos);
    sol.covariance = covariance;
    sol.report = relaxed.report;
    sol.recovery = report;
    Ok(sol)
}

fn principal_beam(w: &CMatrix) -> CVector {
    let (vals, vecs) = hermitian_eigen(w);
    let top = vals.first().copied().unwrap_or(0.0).max(0.0);
    vecs.column(0).into_owned() * C64::from(top.sqrt())
}

/// Per-slot score: the worst GE's harvested energy.
fn slot_score(s: &Scenario, sl: &DownlinkSlot, w: &[CVector], rho: &[f64]) -> f64 {
    (0..s.num_ges())
        .map(|k| {
            let g = &s.ges[k];
            harvested_energy(rho[k], &sl.h[k], w, g.noise_power, g.conversion_efficiency, s.downlink_time)
                - sl.spent[k]
        })
        .fold(f64::INFINITY, f64::min)
}

/// Gaussian randomization: beams `W*^{1/2} xi` rescaled to the recovered
/// powers; the best feasible candidate (including the recovered beams) wins.
fn randomize(
    s: &Scenario,
    sl: &DownlinkSlot,
    w_star: &[CMatrix],
    recovered: &[CVector],
    recovered_rho: Option<&[f64]>,
    slot: usize,
    opts: &DownlinkOptions,
) -> Option<(Vec<CVector>, Vec<f64>)> {
    let kk = s.num_ges();
    let roots: Vec<CMatrix> = w_star
        .iter()
        .map(|w| {
            let (vals, vecs) = hermitian_eigen(w);
            let d = CMatrix::from_diagonal(&CVector::from_iterator(vals.len(), vals.iter().map(|v| C64::from(v.max(0.0).sqrt()))));
            &vecs * d
        })
        .collect();
    let powers: Vec<f64> = recovered.iter().map(|w| w.norm_squared()).collect();
    let mut best: Option<(f64, Vec<CVector>, Vec<f64>)> =
        recovered_rho.map(|r| (slot_score(s, sl, recovered, r), recovered.to_vec(), r.to_vec()));
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (slot as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let l = s.uav_antennas;
    for _ in 0..opts.draws {
        let cand: Vec<CVector> = (0..kk)
            .map(|k| {
                let xi = CVector::from_fn(l, |_, _| {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
                });
                let v = &roots[k] * xi;
                let norm = v.norm();
                if norm > 0.0 {
                    v * C64::from(powers[k].sqrt() / norm)
                } else {
                    v
                }
            })
            .collect();
        if let Some(rho) = rhos_for(s, sl, &cand, opts.rho) {
            let score = slot_score(s, sl, &cand, &rho);
            if best.as_ref().map_or(true, |b| score > b.0) {
                best = Some((score, cand, rho));
            }
        }
    }
    best.map(|(_, w, r)| (w, r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{synthesize_channels, NlosDraw};
    use crate::scenario::{default_scenario, initial_trajectory};
    use rand::Rng;

    fn cvec(v: &[(f64, f64)]) -> CVector {
        CVector::from_iterator(v.len(), v.iter().map(|&(a, b)| C64::new(a, b)))
    }

    fn real(rows: usize, cols: usize, data: &[f64]) -> CMatrix {
        CMatrix::from_row_iterator(rows, cols, data.iter().map(|&v| C64::new(v, 0.0)))
    }

    #[test]
    fn sinr_examples() {
        let h = cvec(&[(1e-3, 0.0)]);
        let w = vec![cvec(&[(1.0, 0.0)])];
        assert_eq!(downlink_sinr(0.0, &h, &w, 0, 1e-9, 1e-8), 0.0);
        let r = downlink_sinr(1.0, &h, &w, 0, 1e-9, 1e-8);
        assert!((r - 1e-6 / 1.1e-8).abs() < 1e-9);
        let stronger = vec![cvec(&[(2.0, 0.0)])];
        assert!(downlink_sinr(0.3, &h, &stronger, 0, 1e-9, 1e-8) > downlink_sinr(0.3, &h, &w, 0, 1e-9, 1e-8));
    }

    #[test]
    fn harvest_examples() {
        let h = cvec(&[(1e-3, 0.0)]);
        let w = vec![cvec(&[(1.0, 0.0)])];
        assert_eq!(harvested_energy(1.0, &h, &w, 0.0, 0.8, 0.25), 0.0);
        assert!((harvested_energy(0.0, &h, &w, 0.0, 0.8, 0.25) - 2e-7).abs() < 1e-20);
        let a = harvested_energy(0.2, &h, &w, 1e-9, 0.8, 0.25);
        let b = harvested_energy(0.6, &h, &w, 1e-9, 0.8, 0.25);
        let c = harvested_energy(1.0, &h, &w, 1e-9, 0.8, 0.25);
        assert!(((a - b) - (b - c)).abs() < 1e-18);
    }

    #[test]
    fn taylor_examples() {
        assert!((taylor_xi1(0.7, 0.0) - 1.7).abs() < 1e-15);
        assert!((taylor_xi1(1.3, 1.3) - 1.3f64.exp()).abs() < 1e-15);
        assert!((taylor_xi1(1.1, 1.0) - std::f64::consts::E * 1.1).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let (o, a) = (rng.gen_range(-20.0..5.0), rng.gen_range(-20.0..5.0));
            assert!(taylor_xi1(o, a) <= o.exp() * (1.0 + 1e-15));
        }
    }

    #[test]
    fn rank_one_examples() {
        let h = cvec(&[(1.0, 0.0), (0.0, 0.0)]);
        let (w, audit) = rank_one_recover(&real(2, 2, &[2.0, 1.0, 1.0, 1.0]), &h).unwrap();
        let wstar = &w * w.adjoint();
        assert!((wstar - real(2, 2, &[2.0, 1.0, 1.0, 0.5])).norm() < 1e-12);
        assert!(audit.quad_rel_error < 1e-12);
        assert!((audit.trace_before - 3.0).abs() < 1e-12 && (audit.trace_after - 2.5).abs() < 1e-12);

        let (w, audit) = rank_one_recover(&CMatrix::identity(2, 2), &h).unwrap();
        assert!((&w * w.adjoint() - real(2, 2, &[1.0, 0.0, 0.0, 0.0])).norm() < 1e-12);
        assert!(audit.quad_rel_error < 1e-12);

        let u = cvec(&[(0.6, 0.0), (0.0, 0.8)]);
        let rank_one = &u * u.adjoint() * C64::from(3.0);
        let (w, _) = rank_one_recover(&rank_one, &u).unwrap();
        assert!((&w * w.adjoint() - rank_one).norm() < 1e-12);

        assert!(rank_one_recover(&CMatrix::zeros(2, 2), &h).is_err());
    }

    #[test]
    fn cap_and_target_are_inverse() {
        let s = default_scenario();
        let l_o = 7.5e5;
        assert!((offload_cap(&s, sinr_target(&s, l_o)) - l_o).abs() <= 1e-6 * l_o);
    }

    fn scalar_case() -> (Scenario, Vec<DownlinkSlot>) {
        let mut s = default_scenario();
        s.ges.truncate(1);
        s.uav_antennas = 1;
        s.mission_time = s.slot_len;
        s.uav_max_power = 2.0;
        let slots = vec![DownlinkSlot {
            h: vec![cvec(&[(3e-3, 1e-3)])],
            // rho* = 5e-4, midway between grid points of the oracle below
            sinr_target: vec![1.0],
            spent: vec![1e-6],
        }];
        (s, slots)
    }

    #[test]
    fn no_results_means_everything_harvested() {
        let (s, mut slots) = scalar_case();
        slots[0].sinr_target = vec![0.0];
        let sol = solve_downlink(&s, &slots, None, &DownlinkOptions::default()).unwrap();
        assert_eq!(sol.rho[0][0], 0.0);
        let g = &s.ges[0];
        let full = s.downlink_time * g.conversion_efficiency * (2.0 * slots[0].h[0].norm_squared() + g.noise_power);
        assert!((sol.eta - (full - 1e-6)).abs() <= 1e-6 * full);
    }

    #[test]
    fn scalar_case_matches_grid() {
        let (s, slots) = scalar_case();
        let sol = solve_downlink(&s, &slots, None, &DownlinkOptions::default()).unwrap();
        let g = &s.ges[0];
        let h = &slots[0].h[0];
        let mut best = f64::NEG_INFINITY;
        for i in 0..=1000 {
            let rho = i as f64 * 1e-3;
            for j in 1..=1000 {
                let p = j as f64 * 1e-3 * s.uav_max_power;
                let w = vec![h * C64::from(p.sqrt() / h.norm())];
                if downlink_sinr(rho, h, &w, 0, g.noise_power, g.decoder_noise_power) >= slots[0].sinr_target[0] {
                    best = best.max(eta_of(&s, &slots, &[w], &[vec![rho]]));
                }
            }
        }
        assert!((sol.eta - best).abs() <= 1e-3 * best.abs(), "{} vs {best}", sol.eta);
        assert!(sol.eta >= best - 1e-12);
        assert!(sol.sca_history.windows(2).all(|p| p[1] >= p[0] - SCA_MONOTONE_TOL * p[0].abs()));
    }

    #[test]
    fn scenario_slots_are_feasible_and_improve_on_start() {
        let mut s = default_scenario();
        s.mission_time = 1.5;
        s.end = s.start + crate::scenario::Point::new(3.0, 1.0);
        let traj = initial_trajectory(&s).unwrap();
        let ch = synthesize_channels(&s, &traj, &NlosDraw::new(1));
        let slots: Vec<DownlinkSlot> = ch
            .slots
            .iter()
            .map(|c| DownlinkSlot {
                h: c.h_ku.clone(),
                sinr_target: vec![sinr_target(&s, s.task_bits); s.num_ges()],
                spent: vec![1e-6; s.num_ges()],
            })
            .collect();
        let start = DownlinkSolution::initial(&s, &slots);
        let sol = solve_downlink(&s, &slots, None, &DownlinkOptions::default()).unwrap();
        assert!(sol.eta > start.eta);
        for (n, sl) in slots.iter().enumerate() {
            let total: f64 = sol.w[n].iter().map(|w| w.norm_squared()).sum();
            assert!(total <= s.uav_max_power * (1.0 + 1e-9));
            for k in 0..s.num_ges() {
                let g = &s.ges[k];
                let sinr = downlink_sinr(sol.rho[n][k], &sl.h[k], &sol.w[n], k, g.noise_power, g.decoder_noise_power);
                assert!(sinr >= sl.sinr_target[k] * (1.0 - 1e-9));
                assert!((0.0..=1.0).contains(&sol.rho[n][k]));
                assert!((sol.rho_tilde[n][k].exp() - sol.rho[n][k]).abs() <= 1e-10);
            }
        }
        assert!(sol.recovery.max_quad_rel_error <= 1e-9);
        assert!(sol.recovery.max_trace_increase <= 1e-9);
        assert!(sol.recovery.max_rank_ratio <= 1e-9);
    }
}
