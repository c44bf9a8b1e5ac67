//! First-order optimality certificates for smooth convex programs of the form
//! `minimize f(x)  s.t.  g_i(x) <= 0`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Sparse gradient: `(index, partial derivative)` pairs.
pub type SparseGrad = Vec<(usize, f64)>;

/// Max-norm residuals of the KKT system, in the problem's natural units.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KktReport {
    pub stationarity: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub complementarity: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_infeasibility)
            .max(self.dual_infeasibility)
            .max(self.complementarity)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max() <= tol
    }

    pub(crate) fn worst(self, other: KktReport) -> KktReport {
        KktReport {
            stationarity: self.stationarity.max(other.stationarity),
            primal_infeasibility: self.primal_infeasibility.max(other.primal_infeasibility),
            dual_infeasibility: self.dual_infeasibility.max(other.dual_infeasibility),
            complementarity: self.complementarity.max(other.complementarity),
        }
    }
}

/// Value-and-gradient handles of a smooth problem. The objective is minimized.
pub trait SmoothProblem {
    fn dim(&self) -> usize;
    fn num_constraints(&self) -> usize;
    fn objective(&self, x: &[f64]) -> f64;
    fn objective_grad(&self, x: &[f64]) -> SparseGrad;
    /// `g_i(x)`, feasible when `<= 0`.
    fn constraint(&self, i: usize, x: &[f64]) -> f64;
    fn constraint_grad(&self, i: usize, x: &[f64]) -> SparseGrad;
    /// Human-readable constraint label, used in reports.
    fn constraint_name(&self, _i: usize) -> String {
        String::new()
    }
}

fn dense(grad: &SparseGrad, n: usize) -> DVector<f64> {
    let mut v = DVector::zeros(n);
    for &(i, g) in grad {
        v[i] += g;
    }
    v
}

/// Residuals of the KKT system at a given primal-dual pair.
pub fn kkt_residual(p: &dyn SmoothProblem, x: &[f64], duals: &[f64]) -> Result<KktReport> {
    let n = p.dim();
    let m = p.num_constraints();
    if x.len() != n || duals.len() != m {
        return Err(Error::Dimension(format!(
            "primal {} (expected {n}), dual {} (expected {m})",
            x.len(),
            duals.len()
        )));
    }
    let mut grad = dense(&p.objective_grad(x), n);
    let mut report = KktReport::default();
    for (i, &lam) in duals.iter().enumerate() {
        let g = p.constraint(i, x);
        report.primal_infeasibility = report.primal_infeasibility.max(g);
        report.dual_infeasibility = report.dual_infeasibility.max(-lam);
        report.complementarity = report.complementarity.max((lam * g).abs());
        if lam != 0.0 {
            for (j, d) in p.constraint_grad(i, x) {
                grad[j] += lam * d;
            }
        }
    }
    report.stationarity = grad.amax();
    Ok(report)
}

/// Nonnegative multipliers for the constraints active within `active_tol`
/// that best satisfy stationarity (Lawson-Hanson NNLS). Inactive
/// constraints get zero.
pub fn estimate_duals(p: &dyn SmoothProblem, x: &[f64], active_tol: f64) -> Vec<f64> {
    let n = p.dim();
    let m = p.num_constraints();
    let active: Vec<usize> = (0..m).filter(|&i| p.constraint(i, x) >= -active_tol).collect();
    let mut duals = vec![0.0; m];
    if active.is_empty() {
        return duals;
    }
    let mut a = DMatrix::zeros(n, active.len());
    for (col, &i) in active.iter().enumerate() {
        for (j, d) in p.constraint_grad(i, x) {
            a[(j, col)] += d;
        }
    }
    let b = -dense(&p.objective_grad(x), n);
    let lam = nnls(&a, &b);
    for (col, &i) in active.iter().enumerate() {
        duals[i] = lam[col];
    }
    duals
}

/// Estimate multipliers and return the resulting KKT residuals.
pub fn certify(p: &dyn SmoothProblem, x: &[f64], active_tol: f64) -> Result<KktReport> {
    let duals = estimate_duals(p, x, active_tol);
    kkt_residual(p, x, &duals)
}

/// Lawson-Hanson: `argmin |A x - b|` subject to `x >= 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let p = a.ncols();
    let mut x = DVector::zeros(p);
    let mut passive = vec![false; p];
    let scale = a.amax().max(1e-300) * b.amax().max(1e-300);
    let tol = 1e-13 * scale * (p.max(1) as f64);
    for _outer in 0..(3 * p + 10) {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..p)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else { break };
        passive[j] = true;
        for _inner in 0..(3 * p + 10) {
            let idx: Vec<usize> = (0..p).filter(|&j| passive[j]).collect();
            let sub = a.select_columns(idx.iter());
            let z = least_squares(&sub, b);
            if z.iter().all(|&v| v > 0.0) {
                for (k, &j) in idx.iter().enumerate() {
                    x[j] = z[k];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (k, &j) in idx.iter().enumerate() {
                if z[k] <= 0.0 {
                    let denom = x[j] - z[k];
                    if denom > 0.0 {
                        alpha = alpha.min(x[j] / denom);
                    }
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            for (k, &j) in idx.iter().enumerate() {
                x[j] += alpha * (z[k] - x[j]);
                if x[j] <= 1e-300 {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
        }
    }
    x
}

fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    let cutoff = svd.singular_values.max() * 1e-13 * (a.nrows().max(a.ncols()) as f64);
    svd.solve(b, cutoff).unwrap_or_else(|_| DVector::zeros(a.ncols()))
}

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub max_rel_error: f64,
    /// `None` for the objective, otherwise the constraint index.
    pub worst: Option<usize>,
}

/// Compare every gradient handle against central finite differences with a
/// step of `rel_step * max(|x_j|, 1)`. Differences below the rounding noise
/// of the difference quotient, `1e3 * eps * |f| / h`, are not counted.
pub fn check_gradients(p: &dyn SmoothProblem, x: &[f64], rel_step: f64) -> GradientCheck {
    let n = p.dim();
    let mut result = GradientCheck {
        max_rel_error: 0.0,
        worst: None,
    };
    let mut probe = x.to_vec();
    let mut compare = |analytic: DVector<f64>, eval: &dyn Fn(&[f64]) -> f64, which: Option<usize>| {
        let mut fd = DVector::zeros(n);
        let mut noise = DVector::zeros(n);
        for j in 0..n {
            let h = rel_step * x[j].abs().max(1.0);
            probe[j] = x[j] + h;
            let up = eval(&probe);
            probe[j] = x[j] - h;
            let down = eval(&probe);
            probe[j] = x[j];
            fd[j] = (up - down) / (2.0 * h);
            noise[j] = 1e3 * f64::EPSILON * up.abs().max(down.abs()) / h;
        }
        let floor = analytic.amax().max(fd.amax()).max(1e-300) * 1e-6;
        for j in 0..n {
            let diff = (analytic[j] - fd[j]).abs();
            if diff <= noise[j] {
                continue;
            }
            let err = diff / analytic[j].abs().max(fd[j].abs()).max(floor);
            if err > result.max_rel_error {
                result.max_rel_error = err;
                result.worst = which;
            }
        }
    };
    compare(dense(&p.objective_grad(x), n), &|z| p.objective(z), None);
    for i in 0..p.num_constraints() {
        compare(dense(&p.constraint_grad(i, x), n), &|z| p.constraint(i, z), Some(i));
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    /// minimize (x - 1)^2 + (y - 2)^2, no constraints.
    struct Quadratic;

    impl SmoothProblem for Quadratic {
        fn dim(&self) -> usize {
            2
        }
        fn num_constraints(&self) -> usize {
            0
        }
        fn objective(&self, x: &[f64]) -> f64 {
            (x[0] - 1.0).powi(2) + (x[1] - 2.0).powi(2)
        }
        fn objective_grad(&self, x: &[f64]) -> SparseGrad {
            vec![(0, 2.0 * (x[0] - 1.0)), (1, 2.0 * (x[1] - 2.0))]
        }
        fn constraint(&self, _: usize, _: &[f64]) -> f64 {
            unreachable!()
        }
        fn constraint_grad(&self, _: usize, _: &[f64]) -> SparseGrad {
            unreachable!()
        }
    }

    /// minimize -x - y  s.t.  x + 2y <= 4,  3x + y <= 6,  x >= 0,  y >= 0.
    /// Optimum at the vertex (8/5, 6/5) with multipliers (2/5, 1/5, 0, 0).
    struct Lp;

    impl SmoothProblem for Lp {
        fn dim(&self) -> usize {
            2
        }
        fn num_constraints(&self) -> usize {
            4
        }
        fn objective(&self, x: &[f64]) -> f64 {
            -x[0] - x[1]
        }
        fn objective_grad(&self, _: &[f64]) -> SparseGrad {
            vec![(0, -1.0), (1, -1.0)]
        }
        fn constraint(&self, i: usize, x: &[f64]) -> f64 {
            match i {
                0 => x[0] + 2.0 * x[1] - 4.0,
                1 => 3.0 * x[0] + x[1] - 6.0,
                2 => -x[0],
                _ => -x[1],
            }
        }
        fn constraint_grad(&self, i: usize, _: &[f64]) -> SparseGrad {
            match i {
                0 => vec![(0, 1.0), (1, 2.0)],
                1 => vec![(0, 3.0), (1, 1.0)],
                2 => vec![(0, -1.0)],
                _ => vec![(1, -1.0)],
            }
        }
    }

    #[test]
    fn unconstrained_minimizer_is_certified() {
        let r = certify(&Quadratic, &[1.0, 2.0], 1e-9).unwrap();
        assert!(r.max() <= 1e-10);
    }

    #[test]
    fn lp_vertex_with_known_duals() {
        let x = [1.6, 1.2];
        let r = kkt_residual(&Lp, &x, &[0.4, 0.2, 0.0, 0.0]).unwrap();
        assert!(r.max() <= 1e-8, "{r:?}");
        let est = estimate_duals(&Lp, &x, 1e-9);
        assert!((est[0] - 0.4).abs() < 1e-10 && (est[1] - 0.2).abs() < 1e-10);
    }

    #[test]
    fn stationarity_grows_linearly_with_perturbation() {
        let r1 = kkt_residual(&Quadratic, &[1.0 + 1e-3, 2.0], &[]).unwrap().stationarity;
        let r2 = kkt_residual(&Quadratic, &[1.0 + 2e-3, 2.0], &[]).unwrap().stationarity;
        assert!((r2 / r1 - 2.0).abs() < 1e-6);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        assert!(matches!(kkt_residual(&Lp, &[0.0], &[0.0; 4]), Err(Error::Dimension(_))));
    }

    #[test]
    fn gradients_of_test_problems_match_finite_differences() {
        assert!(check_gradients(&Lp, &[0.3, 0.7], 1e-6).max_rel_error < 1e-6);
        assert!(check_gradients(&Quadratic, &[-0.3, 0.7], 1e-6).max_rel_error < 1e-6);
    }

    #[test]
    fn nnls_respects_sign() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, -1.0]);
        let x = nnls(&a, &b);
        assert!((x[0] - 1.0).abs() < 1e-12 && x[1] == 0.0);
    }
}
