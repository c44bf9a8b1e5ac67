//! Numerical primitives shared by the three convex subproblems: Hermitian
//! eigen-decomposition with deterministic ordering, projections, scalar
//! bisection, KKT certificates and a small conic-program builder.

pub mod conic;
pub mod kkt;

use nalgebra::{Complex, DMatrix, DVector, SVector};

use crate::error::{Error, Result};

pub use conic::{Affine, ConicModel, ConicSolution};
pub use kkt::{check_gradients, estimate_duals, kkt_residual, GradientCheck, KktReport, SmoothProblem};

pub type C64 = Complex<f64>;
pub type CVector = DVector<C64>;
pub type CMatrix = DMatrix<C64>;

/// Relative threshold below which an eigenvalue counts as zero.
pub const RANK_TOL: f64 = 1e-9;
/// Maximum constraint violation accepted by the feasibility audit.
pub const FEAS_TOL: f64 = 1e-6;
/// KKT residual accepted from an inner convex solve.
pub const KKT_TOL: f64 = 1e-5;

/// Eigenpairs of a Hermitian matrix sorted by descending eigenvalue.
///
/// Each eigenvector is rotated so that its largest-magnitude entry is real
/// and positive, which makes the decomposition reproducible.
pub fn hermitian_eigen(a: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = a.nrows();
    if n == 0 {
        return (Vec::new(), CMatrix::zeros(0, 0));
    }
    let sym = (a + a.adjoint()) * C64::new(0.5, 0.0);
    let eig = nalgebra::SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        fix_phase(&mut v);
        vectors.set_column(col, &v);
    }
    (values, vectors)
}

/// Rotate `v` so its largest-magnitude entry is real positive.
pub fn fix_phase(v: &mut CVector) {
    let mut best = 0;
    let mut best_mag = -1.0;
    for (i, z) in v.iter().enumerate() {
        // ties keep the first index; the 1e-12 guard avoids flip-flopping on round-off
        let m = z.norm();
        if m > best_mag * (1.0 + 1e-12) {
            best = i;
            best_mag = m;
        }
    }
    if best_mag > 0.0 {
        let phase = v[best] / best_mag;
        let rot = phase.conj();
        v.iter_mut().for_each(|z| *z *= rot);
        v[best] = C64::new(v[best].re, 0.0);
    }
}

/// Orthonormal basis of the column space of `a` (singular values above
/// `1e-12` of the largest), and its dimension.
pub fn orthonormal_basis(a: &CMatrix) -> (CMatrix, usize) {
    if a.ncols() == 0 || a.nrows() == 0 {
        return (CMatrix::zeros(a.nrows(), 0), 0);
    }
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.max();
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let rank = order.iter().filter(|&&i| svd.singular_values[i] > 1e-12 * smax && smax > 0.0).count();
    let cols: Vec<CVector> = order[..rank].iter().map(|&i| u.column(i).into_owned()).collect();
    if cols.is_empty() {
        return (CMatrix::zeros(a.nrows(), 0), 0);
    }
    (CMatrix::from_columns(&cols), rank)
}

/// Nearest positive-semidefinite matrix in Frobenius norm.
pub fn psd_project(a: &CMatrix) -> CMatrix {
    let (values, vectors) = hermitian_eigen(a);
    let n = a.nrows();
    let mut out = CMatrix::zeros(n, n);
    for (i, &lam) in values.iter().enumerate() {
        if lam > 0.0 {
            let v = vectors.column(i);
            out += (&v * v.adjoint()) * C64::new(lam, 0.0);
        }
    }
    (&out + out.adjoint()) * C64::new(0.5, 0.0)
}

/// Euclidean projection onto the closed ball `|x - center| <= radius`.
pub fn project_ball<const D: usize>(
    x: &SVector<f64, D>,
    center: &SVector<f64, D>,
    radius: f64,
) -> SVector<f64, D> {
    let offset = x - center;
    let dist = offset.norm();
    if dist <= radius {
        *x
    } else {
        center + offset * (radius / dist)
    }
}

/// Final bracketing interval of a bisection run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
}

impl Bracket {
    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Bisection on a monotone `f` until the bracket is narrower than `tol`.
pub fn bisect_bracket(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> Result<Bracket> {
    let (mut lo, mut hi) = (lo.min(hi), lo.max(hi));
    let f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Ok(Bracket { lo, hi: lo });
    }
    if f_hi == 0.0 {
        return Ok(Bracket { lo: hi, hi });
    }
    if f_lo.signum() == f_hi.signum() || f_lo.is_nan() || f_hi.is_nan() {
        return Err(Error::NoBracket { f_lo, f_hi });
    }
    let rising = f_hi > 0.0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = f(mid);
        if v == 0.0 {
            return Ok(Bracket { lo: mid, hi: mid });
        }
        if (v > 0.0) == rising {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Bracket { lo, hi })
}

/// Root of a monotone scalar function on `[lo, hi]`.
pub fn bisect_scalar(f: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    bisect_bracket(f, lo, hi, tol).map(|b| b.mid())
}

/// `h^H A h` for Hermitian `A`, returned as a real number.
pub fn quad_form(a: &CMatrix, h: &CVector) -> f64 {
    (h.adjoint() * a * h)[(0, 0)].re
}

pub fn trace_re(a: &CMatrix) -> f64 {
    a.diagonal().iter().map(|z| z.re).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;
    use proptest::prelude::*;

    fn real(rows: usize, cols: usize, data: &[f64]) -> CMatrix {
        CMatrix::from_row_iterator(rows, cols, data.iter().map(|&v| C64::new(v, 0.0)))
    }

    #[test]
    fn psd_projection_examples() {
        let a = real(2, 2, &[2.0, 1.0, 1.0, 1.0]);
        assert!((psd_project(&a) - &a).norm() < 1e-12);
        let b = real(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!((psd_project(&b) - real(2, 2, &[1.0, 0.0, 0.0, 0.0])).norm() < 1e-12);
        let c = real(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!((psd_project(&c) - real(2, 2, &[0.5, 0.5, 0.5, 0.5])).norm() < 1e-12);
    }

    #[test]
    fn ball_projection_examples() {
        let o = Vector2::new(0.0, 0.0);
        let inside = Vector2::new(0.3, -0.2);
        assert_eq!(project_ball(&inside, &o, 1.0), inside);
        assert_eq!(project_ball(&Vector2::new(2.0, 0.0), &o, 1.0), Vector2::new(1.0, 0.0));
        assert_eq!(project_ball(&Vector2::new(3.0, 4.0), &o, 5.0), Vector2::new(3.0, 4.0));
    }

    #[test]
    fn bisection_examples() {
        let r = bisect_scalar(|x| x - 1.0, 0.0, 2.0, 1e-12).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        // water level of gains [4, 1] with budget 1.75
        let level = |mu: f64| (mu - 0.25).max(0.0) + (mu - 1.0).max(0.0) - 1.75;
        let mu = bisect_scalar(level, 0.0, 10.0, 1e-13).unwrap();
        assert!((mu - 1.5).abs() < 1e-12);
        let f = |x: f64| x - 0.3;
        let wide = bisect_bracket(f, 0.0, 1.0, 1e-3).unwrap().width();
        let narrow = bisect_bracket(f, 0.0, 1.0, 0.5e-3).unwrap().width();
        assert!((wide / narrow - 2.0).abs() < 1e-9);
        assert!(matches!(bisect_scalar(|x| x + 5.0, 0.0, 1.0, 1e-6), Err(Error::NoBracket { .. })));
    }

    #[test]
    fn eigen_ordering_and_phase() {
        let a = real(3, 3, &[1.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 2.0]);
        let (vals, vecs) = hermitian_eigen(&a);
        assert_eq!(vals, vec![3.0, 2.0, 1.0]);
        for j in 0..3 {
            let col = vecs.column(j);
            let (i, _) = col.iter().enumerate().max_by(|a, b| a.1.norm().total_cmp(&b.1.norm())).unwrap();
            assert!(col[i].re > 0.0 && col[i].im == 0.0);
        }
    }

    fn arb_herm(n: usize) -> impl Strategy<Value = CMatrix> {
        prop::collection::vec(-2.0..2.0f64, 2 * n * n).prop_map(move |v| {
            let m = CMatrix::from_fn(n, n, |i, j| C64::new(v[i * n + j], v[n * n + i * n + j]));
            (&m + m.adjoint()) * C64::new(0.5, 0.0)
        })
    }

    proptest! {
        #[test]
        fn psd_projection_is_idempotent_and_nonexpansive(a in arb_herm(4), b in arb_herm(4)) {
            let pa = psd_project(&a);
            let pb = psd_project(&b);
            prop_assert!((psd_project(&pa) - &pa).norm() < 1e-9);
            prop_assert!((&pa - &pb).norm() <= (&a - &b).norm() + 1e-9);
            let (vals, _) = hermitian_eigen(&pa);
            prop_assert!(vals.iter().all(|&l| l > -1e-10));
        }

        #[test]
        fn ball_projection_is_idempotent_and_nonexpansive(
            x in prop::array::uniform2(-10.0..10.0f64),
            y in prop::array::uniform2(-10.0..10.0f64),
            r in 0.0..5.0f64,
        ) {
            let c = Vector2::new(1.0, -1.0);
            let (x, y) = (Vector2::from(x), Vector2::from(y));
            let px = project_ball(&x, &c, r);
            let py = project_ball(&y, &c, r);
            prop_assert!((project_ball(&px, &c, r) - px).norm() < 1e-12);
            prop_assert!((px - py).norm() <= (x - y).norm() + 1e-12);
        }
    }
}
