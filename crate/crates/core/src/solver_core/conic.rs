//! A small modelling layer over the Clarabel interior-point solver.
//!
//! Variables are indexed scalars; constraints are affine expressions placed in
//! cones. The model only covers what the subproblems need: linear equalities
//! and inequalities, second-order, exponential, power and PSD cones.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use super::kkt::KktReport;
use crate::error::{Error, Infeasibility, Result};

/// `sum_i c_i x_i + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Affine {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Affine {
    pub fn var(i: usize) -> Self {
        Affine {
            terms: vec![(i, 1.0)],
            constant: 0.0,
        }
    }

    pub fn constant(c: f64) -> Self {
        Affine {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn term(i: usize, c: f64) -> Self {
        Affine {
            terms: vec![(i, c)],
            constant: 0.0,
        }
    }

    pub fn add_term(&mut self, i: usize, c: f64) -> &mut Self {
        self.terms.push((i, c));
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>() + self.constant
    }
}

impl From<f64> for Affine {
    fn from(c: f64) -> Self {
        Affine::constant(c)
    }
}

impl AddAssign<&Affine> for Affine {
    fn add_assign(&mut self, rhs: &Affine) {
        self.terms.extend_from_slice(&rhs.terms);
        self.constant += rhs.constant;
    }
}

impl Add for Affine {
    type Output = Affine;
    fn add(mut self, rhs: Affine) -> Affine {
        self += &rhs;
        self
    }
}

impl Add<f64> for Affine {
    type Output = Affine;
    fn add(mut self, rhs: f64) -> Affine {
        self.constant += rhs;
        self
    }
}

impl Sub for Affine {
    type Output = Affine;
    fn sub(self, rhs: Affine) -> Affine {
        self + (-rhs)
    }
}

impl Sub<f64> for Affine {
    type Output = Affine;
    fn sub(self, rhs: f64) -> Affine {
        self + (-rhs)
    }
}

impl Neg for Affine {
    type Output = Affine;
    fn neg(self) -> Affine {
        self * -1.0
    }
}

impl Mul<f64> for Affine {
    type Output = Affine;
    fn mul(mut self, rhs: f64) -> Affine {
        self.terms.iter_mut().for_each(|t| t.1 *= rhs);
        self.constant *= rhs;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Cone {
    Zero,
    Nonneg,
    Soc,
    Exp,
    Pow(f64),
    Psd(usize),
}

/// Accumulates variables, a linear cost and conic constraints.
#[derive(Debug, Clone)]
pub struct ConicModel {
    name: String,
    num_vars: usize,
    cost: Affine,
    blocks: Vec<(Cone, Vec<Affine>)>,
    tolerance: f64,
    max_iter: u32,
}

/// Primal point returned by a successful solve.
#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub x: Vec<f64>,
    pub cost: f64,
    /// Solver residuals: relative dual residual, primal residual and gap.
    pub report: KktReport,
    pub iterations: u32,
    /// False when the solver stopped at reduced accuracy.
    pub accurate: bool,
}

impl ConicSolution {
    pub fn value(&self, e: &Affine) -> f64 {
        e.eval(&self.x)
    }
}

impl ConicModel {
    /// `name` labels infeasibility reports.
    pub fn new(name: impl Into<String>) -> Self {
        ConicModel {
            name: name.into(),
            num_vars: 0,
            cost: Affine::default(),
            blocks: Vec::new(),
            tolerance: 1e-8,
            max_iter: 200,
        }
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tolerance = tol;
        self
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn var(&mut self) -> usize {
        self.num_vars += 1;
        self.num_vars - 1
    }

    pub fn vars(&mut self, n: usize) -> Vec<usize> {
        (0..n).map(|_| self.var()).collect()
    }

    pub fn minimize(&mut self, cost: Affine) {
        self.cost = cost;
    }

    pub fn eq(&mut self, e: Affine) {
        self.push(Cone::Zero, vec![e]);
    }

    /// `e >= 0`
    pub fn nonneg(&mut self, e: Affine) {
        self.push(Cone::Nonneg, vec![e]);
    }

    /// `a <= b`
    pub fn le(&mut self, a: Affine, b: Affine) {
        self.nonneg(b - a);
    }

    /// `|rest| <= head`
    pub fn soc(&mut self, head: Affine, rest: Vec<Affine>) {
        let mut rows = Vec::with_capacity(rest.len() + 1);
        rows.push(head);
        rows.extend(rest);
        self.push(Cone::Soc, rows);
    }

    /// `y exp(x / y) <= z`, `y > 0`
    pub fn exp(&mut self, x: Affine, y: Affine, z: Affine) {
        self.push(Cone::Exp, vec![x, y, z]);
    }

    /// `x^alpha y^(1 - alpha) >= |z|`, `x, y >= 0`
    pub fn pow(&mut self, x: Affine, y: Affine, z: Affine, alpha: f64) {
        self.push(Cone::Pow(alpha), vec![x, y, z]);
    }

    /// Symmetric matrix `m` (only the upper triangle is read) is PSD.
    pub fn psd(&mut self, m: &[Vec<Affine>]) {
        let n = m.len();
        let mut rows = Vec::with_capacity(n * (n + 1) / 2);
        for j in 0..n {
            for i in 0..=j {
                let scale = if i == j { 1.0 } else { std::f64::consts::SQRT_2 };
                rows.push(m[i][j].clone() * scale);
            }
        }
        self.push(Cone::Psd(n), rows);
    }

    fn push(&mut self, cone: Cone, rows: Vec<Affine>) {
        match (self.blocks.last_mut(), &cone) {
            (Some((Cone::Zero, r)), Cone::Zero) | (Some((Cone::Nonneg, r)), Cone::Nonneg) => r.extend(rows),
            _ => self.blocks.push((cone, rows)),
        }
    }

    pub fn solve(&self) -> Result<ConicSolution> {
        let n = self.num_vars;
        let mut q = vec![0.0; n];
        for &(i, c) in &self.cost.terms {
            q[i] += c;
        }
        let (mut ri, mut ci, mut vals, mut b) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut cones = Vec::with_capacity(self.blocks.len());
        for (cone, rows) in &self.blocks {
            for e in rows {
                let r = b.len();
                for &(i, c) in &e.terms {
                    ri.push(r);
                    ci.push(i);
                    vals.push(-c);
                }
                b.push(e.constant);
            }
            cones.push(match cone {
                Cone::Zero => SupportedConeT::ZeroConeT(rows.len()),
                Cone::Nonneg => SupportedConeT::NonnegativeConeT(rows.len()),
                Cone::Soc => SupportedConeT::SecondOrderConeT(rows.len()),
                Cone::Exp => SupportedConeT::ExponentialConeT(),
                Cone::Pow(a) => SupportedConeT::PowerConeT(*a),
                Cone::Psd(d) => SupportedConeT::PSDTriangleConeT(*d),
            });
        }
        let a = CscMatrix::new_from_triplets(b.len(), n, ri, ci, vals);
        let p = CscMatrix::zeros((n, n));
        let settings = DefaultSettings {
            verbose: false,
            max_iter: self.max_iter,
            tol_gap_abs: self.tolerance,
            tol_gap_rel: self.tolerance,
            tol_feas: self.tolerance,
            ..DefaultSettings::default()
        };
        let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings)
            .map_err(|e| Error::Solver(format!("{}: {e}", self.name)))?;
        solver.solve();
        let info = &solver.info;
        let status = solver.solution.status;
        let report = KktReport {
            stationarity: info.res_dual,
            primal_infeasibility: info.res_primal,
            dual_infeasibility: 0.0,
            complementarity: info.gap_rel.min(info.gap_abs),
        };
        let accurate = match status {
            SolverStatus::Solved => true,
            SolverStatus::AlmostSolved | SolverStatus::InsufficientProgress | SolverStatus::MaxIterations => false,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                return Err(Error::Infeasible(Infeasibility {
                    constraint: self.name.clone(),
                    slot: None,
                    ge: None,
                    detail: "solver returned a certificate of primal infeasibility".into(),
                }))
            }
            other => return Err(Error::Solver(format!("{}: {other:?}", self.name))),
        };
        let x = solver.solution.x.clone();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver(format!("{}: non-finite solution ({status:?})", self.name)));
        }
        Ok(ConicSolution {
            cost: self.cost.eval(&x),
            x,
            report,
            iterations: info.iterations,
            accurate,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_program() {
        // maximize x + y s.t. x + 2y <= 4, 3x + y <= 6, x, y >= 0
        let mut m = ConicModel::new("lp");
        let x = m.var();
        let y = m.var();
        m.minimize(-Affine::var(x) - Affine::var(y));
        m.le(Affine::var(x) + Affine::term(y, 2.0), 4.0.into());
        m.le(Affine::term(x, 3.0) + Affine::var(y), 6.0.into());
        m.nonneg(Affine::var(x));
        m.nonneg(Affine::var(y));
        let s = m.solve().unwrap();
        assert!((s.x[x] - 1.6).abs() < 1e-7 && (s.x[y] - 1.2).abs() < 1e-7);
        assert!((s.cost + 2.8).abs() < 1e-7);
        assert!(s.accurate);
    }

    #[test]
    fn exponential_cone_bounds_log() {
        // maximize t s.t. exp(t) <= 5
        let mut m = ConicModel::new("exp");
        let t = m.var();
        m.minimize(-Affine::var(t));
        m.exp(Affine::var(t), 1.0.into(), 5.0.into());
        let s = m.solve().unwrap();
        assert!((s.x[t] - 5f64.ln()).abs() < 1e-7);
    }

    #[test]
    fn power_cone_bounds_cube_root() {
        // maximize z s.t. x^(1/3) >= |z|, x <= 8
        let mut m = ConicModel::new("pow");
        let x = m.var();
        let z = m.var();
        m.minimize(-Affine::var(z));
        m.pow(Affine::var(x), 1.0.into(), Affine::var(z), 1.0 / 3.0);
        m.le(Affine::var(x), 8.0.into());
        let s = m.solve().unwrap();
        assert!((s.x[z] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn second_order_cone_projection() {
        // minimize t s.t. |(x - 3, y - 4)| <= t
        let mut m = ConicModel::new("soc");
        let v = m.vars(3);
        m.minimize(Affine::var(v[2]));
        m.soc(Affine::var(v[2]), vec![Affine::var(v[0]) - 3.0, Affine::var(v[1]) - 4.0]);
        m.eq(Affine::var(v[0]));
        let s = m.solve().unwrap();
        assert!((s.x[v[2]] - 3.0).abs() < 1e-7 && (s.x[v[1]] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn psd_cone_minimum_eigenvalue() {
        // maximize t s.t. A - t I is PSD for A = [[2, 1], [1, 2]] (lambda_min = 1)
        let mut m = ConicModel::new("psd");
        let t = m.var();
        m.minimize(-Affine::var(t));
        let mat = vec![
            vec![Affine::constant(2.0) - Affine::var(t), Affine::constant(1.0)],
            vec![Affine::constant(1.0), Affine::constant(2.0) - Affine::var(t)],
        ];
        m.psd(&mat);
        let s = m.solve().unwrap();
        assert!((s.x[t] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn infeasible_model_names_itself() {
        let mut m = ConicModel::new("budget");
        let x = m.var();
        m.le(Affine::var(x), (-1.0).into());
        m.nonneg(Affine::var(x));
        let err = m.solve().unwrap_err();
        assert!(err.is_infeasible());
        assert!(err.to_string().contains("budget"));
    }
}
