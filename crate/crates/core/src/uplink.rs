//! Uplink beamforming: zero-forcing receive beams at the UAV and SVD
//! transmit/receive beams on the UAV-BS relay link.

use crate::channel::{ChannelSet, SlotChannels};
use crate::error::{Error, Result};
use crate::solver_core::{hermitian_eigen, orthonormal_basis, CMatrix, CVector, C64, RANK_TOL};

/// `t log2(1 + x / t)`, continuously extended by 0 at `t = 0`.
pub fn perspective_log2(t: f64, x: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        t * (x / t).ln_1p() / std::f64::consts::LN_2
    }
}

/// Eigen-structure of one relay channel.
#[derive(Debug, Clone, PartialEq)]
pub struct RelayBeams {
    /// `M x M`; the first `tau` columns are `Hbar u_i / sqrt(lambda_i)`.
    pub u_bs: CMatrix,
    /// `L x L`, eigenvectors of `Hbar^H Hbar`.
    pub u_uav: CMatrix,
    /// Nonzero eigenvalues of `Hbar^H Hbar`, descending.
    pub lambda: Vec<f64>,
    pub tau: usize,
}

/// Beams for the whole mission.
#[derive(Debug, Clone, PartialEq)]
pub struct UplinkBeams {
    /// `v[n][k]`, unit-norm receive beam for GE `k` in slot `n`.
    pub v: Vec<Vec<CVector>>,
    pub relay: Vec<RelayBeams>,
}

fn project_out(q: &CMatrix, h: &CVector) -> CVector {
    let mut v = h.clone();
    for _ in 0..2 {
        let coeff = q.adjoint() * &v;
        v -= q * coeff;
    }
    v
}

/// Unit vector in the orthogonal complement of the other GEs' channels that
/// best matches `hbar[k]`.
pub fn zf_receive_beam(hbar: &[CVector], k: usize) -> Result<CVector> {
    let deficient = |detail: String| Error::RankDeficient { slot: 0, ge: k, detail };
    let h = &hbar[k];
    let others: Vec<CVector> = hbar.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, v)| v.clone()).collect();
    let v = if others.is_empty() {
        h.clone()
    } else {
        let (q, rank) = orthonormal_basis(&CMatrix::from_columns(&others));
        if rank < others.len() {
            return Err(deficient(format!("other channels have rank {rank} < {}", others.len())));
        }
        project_out(&q, h)
    };
    let norm = v.norm();
    if !(norm > 1e-12 * h.norm()) {
        return Err(deficient("channel lies in the span of the other channels".into()));
    }
    Ok(v / C64::from(norm))
}

/// Eigen-decompositions of `Hbar^H Hbar` and `Hbar Hbar^H`, descending.
pub fn svd_beams(hbar_ub: &CMatrix) -> RelayBeams {
    let (m, l) = hbar_ub.shape();
    let (values, u_uav) = hermitian_eigen(&(hbar_ub.adjoint() * hbar_ub));
    let top = values.first().copied().unwrap_or(0.0);
    let tau = if top > 0.0 {
        values.iter().take(m.min(l)).filter(|&&v| v > RANK_TOL * top).count()
    } else {
        0
    };
    let lambda: Vec<f64> = values[..tau].to_vec();
    let mut cols: Vec<CVector> = (0..tau)
        .map(|i| hbar_ub * u_uav.column(i) / C64::from(lambda[i].sqrt()))
        .collect();
    let (_, bs_vectors) = hermitian_eigen(&(hbar_ub * hbar_ub.adjoint()));
    for i in tau..m {
        cols.push(bs_vectors.column(i).into_owned());
    }
    // modified Gram-Schmidt, twice, to make the mixed basis exactly unitary
    for _ in 0..2 {
        for i in 0..cols.len() {
            for j in 0..i {
                let c = cols[j].dotc(&cols[i]);
                let cj = cols[j].clone();
                cols[i] -= cj * c;
            }
            let n = cols[i].norm();
            cols[i] /= C64::from(n);
        }
    }
    let u_bs = if m == 0 { CMatrix::zeros(0, 0) } else { CMatrix::from_columns(&cols) };
    RelayBeams { u_bs, u_uav, lambda, tau }
}

/// Beams for one slot.
pub fn slot_beams(slot: usize, ch: &SlotChannels) -> Result<(Vec<CVector>, RelayBeams)> {
    let v = (0..ch.hbar_ku.len())
        .map(|k| {
            zf_receive_beam(&ch.hbar_ku, k).map_err(|e| match e {
                Error::RankDeficient { ge, detail, .. } => Error::RankDeficient { slot, ge, detail },
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((v, svd_beams(&ch.hbar_ub)))
}

/// ZF and SVD beams for every slot.
pub fn uplink_beams(channels: &ChannelSet) -> Result<UplinkBeams> {
    let mut v = Vec::with_capacity(channels.num_slots());
    let mut relay = Vec::with_capacity(channels.num_slots());
    for (n, ch) in channels.slots.iter().enumerate() {
        let (vn, rn) = slot_beams(n, ch)?;
        v.push(vn);
        relay.push(rn);
    }
    Ok(UplinkBeams { v, relay })
}

/// SINR of GE `k` at the UAV after receive beam `v`, with energies `e` spent
/// over the offloading time `t_o`.
pub fn uplink_ge_sinr(e: &[f64], t_o: f64, v: &CVector, h: &[CVector], k: usize, sigma2: f64) -> f64 {
    if e[k] == 0.0 {
        return 0.0;
    }
    let gain = |j: usize| v.dotc(&h[j]).norm_sqr();
    let signal = e[k] / t_o * gain(k);
    let interference: f64 = (0..h.len()).filter(|&j| j != k).map(|j| e[j] / t_o * gain(j)).sum();
    signal / (interference + v.norm_squared() * sigma2)
}

/// Effective uplink gain `|v^H h|^2 / sigma^2` of GE `k` under ZF.
pub fn uplink_gain(v: &CVector, h: &CVector, sigma2: f64) -> f64 {
    v.dotc(h).norm_sqr() / sigma2
}

/// Per-sub-channel power gains `lambda_i / (d_ub^2 sigma^2)`.
pub fn relay_gains(relay: &RelayBeams, d_ub: f64, sigma2: f64) -> Vec<f64> {
    relay.lambda.iter().map(|l| l / (d_ub * d_ub * sigma2)).collect()
}

/// Bits delivered to the BS over `t_u` with energies `e[i]` on the parallel
/// sub-channels.
pub fn relay_rate(lambda: &[f64], e: &[f64], t_u: f64, d_ub: f64, sigma2: f64, bandwidth: f64) -> f64 {
    lambda
        .iter()
        .zip(e)
        .map(|(l, ei)| bandwidth * perspective_log2(t_u, l * ei / (d_ub * d_ub * sigma2)))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{synthesize_channels, NlosDraw};
    use crate::scenario::{default_scenario, initial_trajectory};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cvec(v: &[(f64, f64)]) -> CVector {
        CVector::from_iterator(v.len(), v.iter().map(|&(a, b)| C64::new(a, b)))
    }

    fn random_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize) -> CMatrix {
        CMatrix::from_fn(m, n, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    /// `log2 det(I + A)` for Hermitian positive definite `I + A`, via Cholesky.
    fn log2_det_eye_plus(a: &CMatrix) -> f64 {
        let n = a.nrows();
        let m = CMatrix::identity(n, n) + a;
        let chol = m.cholesky().expect("positive definite");
        2.0 * chol.l().diagonal().iter().map(|z| z.re.log2()).sum::<f64>()
    }

    #[test]
    fn zf_examples() {
        let h = cvec(&[(0.3, 0.4), (1.0, -2.0)]);
        let v = zf_receive_beam(std::slice::from_ref(&h), 0).unwrap();
        assert!((&v - &h / C64::from(h.norm())).norm() < 1e-14);

        let e1 = cvec(&[(1.0, 0.0), (0.0, 0.0)]);
        let e2 = cvec(&[(0.0, 0.0), (1.0, 0.0)]);
        let v = zf_receive_beam(&[e1.clone(), e2], 0).unwrap();
        assert!((&v - &e1).norm() < 1e-14);

        let r = std::f64::consts::FRAC_1_SQRT_2;
        let h1 = cvec(&[(1.0, 0.0), (0.0, 0.0)]);
        let h2 = cvec(&[(r, 0.0), (r, 0.0)]);
        let v = zf_receive_beam(&[h1.clone(), h2.clone()], 0).unwrap();
        let expect = cvec(&[(r, 0.0), (-r, 0.0)]);
        let phase = v[0] / v[0].norm();
        assert!((&v / phase - expect).norm() < 1e-14);
        assert!((v.dotc(&h1).norm() - r).abs() < 1e-14);
        assert!(v.dotc(&h2).norm() < 1e-15);
    }

    #[test]
    fn zf_rejects_collinear_channels() {
        let h1 = cvec(&[(1.0, 0.0), (0.0, 1.0)]);
        let h2 = &h1 * C64::new(0.0, 2.0);
        assert!(matches!(zf_receive_beam(&[h1, h2], 0), Err(Error::RankDeficient { ge: 0, .. })));
    }

    #[test]
    fn zf_nulls_scenario_channels() {
        let s = default_scenario();
        let traj = initial_trajectory(&s).unwrap();
        let ch = synthesize_channels(&s, &traj, &NlosDraw::new(s.rng_seed));
        let beams = uplink_beams(&ch).unwrap();
        for (slot, vs) in ch.slots.iter().zip(&beams.v) {
            for (k, v) in vs.iter().enumerate() {
                assert!((v.norm() - 1.0).abs() < 1e-12);
                for (j, h) in slot.hbar_ku.iter().enumerate() {
                    if j != k {
                        assert!(v.dotc(h).norm() / h.norm() <= 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn svd_examples() {
        let eye = CMatrix::identity(3, 3);
        let b = svd_beams(&eye);
        assert_eq!(b.tau, 3);
        assert!(b.lambda.iter().all(|&l| (l - 1.0).abs() < 1e-12));

        let s = default_scenario();
        let a = crate::channel::ura_steering(0.2, 0.4, 4, 4, s.antenna_spacing, s.wavelength);
        let u = crate::channel::ula_steering(-0.3, 8, s.antenna_spacing, s.wavelength);
        let b = svd_beams(&(&a * u.adjoint()));
        assert_eq!(b.tau, 1);
        assert!((b.lambda[0] - 128.0).abs() < 1e-9);

        let b = svd_beams(&CMatrix::zeros(4, 3));
        assert_eq!(b.tau, 0);
        assert!(b.lambda.is_empty());
    }

    #[test]
    fn svd_beams_are_unitary_and_diagonalize() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (m, l) in [(16, 8), (4, 6), (5, 5)] {
            let h = random_matrix(&mut rng, m, l);
            let b = svd_beams(&h);
            let ebs = (b.u_bs.adjoint() * &b.u_bs - CMatrix::identity(m, m)).camax();
            let euav = (b.u_uav.adjoint() * &b.u_uav - CMatrix::identity(l, l)).camax();
            assert!(ebs <= 1e-10 && euav <= 1e-10);
            assert!(b.lambda.windows(2).all(|w| w[0] >= w[1]));
            let d = b.u_bs.adjoint() * &h * &b.u_uav;
            for i in 0..m {
                for j in 0..l {
                    let expect = if i == j && i < b.tau { b.lambda[i].sqrt() } else { 0.0 };
                    assert!((d[(i, j)] - C64::from(expect)).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn sinr_examples() {
        let h = vec![cvec(&[(1e-4, 0.0), (0.0, 0.0)]), cvec(&[(0.0, 0.0), (1.0, 0.0)])];
        let v = cvec(&[(1.0, 0.0), (0.0, 0.0)]);
        assert_eq!(uplink_ge_sinr(&[0.0, 1.0], 0.1, &v, &h, 0, 1e-9), 0.0);
        let r = uplink_ge_sinr(&[0.1, 1.0], 0.1, &v, &h, 0, 1e-9);
        assert!((r - 10.0).abs() < 1e-9);
        let h = vec![cvec(&[(0.3, 0.1), (0.2, 0.0)]), cvec(&[(0.1, 0.0), (1.0, 0.5)])];
        let v = cvec(&[(0.6, 0.0), (0.8, 0.0)]);
        let a = uplink_ge_sinr(&[0.2, 0.3], 0.1, &v, &h, 0, 1e-2);
        let b = uplink_ge_sinr(&[0.4, 0.6], 0.2, &v, &h, 0, 1e-2);
        assert!((a - b).abs() <= 1e-12 * a);
    }

    #[test]
    fn relay_rate_examples() {
        let bits = relay_rate(&[1.0], &[0.1 * 25.0 * 1e-9], 0.1, 5.0, 1e-9, 1e7);
        assert!((bits - 1e6).abs() < 1e-6);
        assert_eq!(relay_rate(&[3.0, 1.0], &[0.0, 0.0], 0.1, 5.0, 1e-9, 1e7), 0.0);
        assert_eq!(relay_rate(&[3.0], &[1.0], 0.0, 5.0, 1e-9, 1e7), 0.0);
    }

    #[test]
    fn relay_rate_matches_log_det() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let h = random_matrix(&mut rng, 4, 4);
            let b = svd_beams(&h);
            let e: Vec<f64> = (0..b.tau).map(|_| rng.gen_range(0.0..2.0)).collect();
            let (t_u, d, sigma2, bw) = (0.3, 2.0, 0.5, 10.0);
            let bits = relay_rate(&b.lambda, &e, t_u, d, sigma2, bw);
            // covariance U diag(E / t_u) U^H through H = Hbar / d
            let p = CMatrix::from_diagonal(&CVector::from_iterator(
                4,
                (0..4).map(|i| C64::from(e.get(i).copied().unwrap_or(0.0) / t_u)),
            ));
            let hh = &h / C64::from(d);
            let theta = &hh * &b.u_uav * p * b.u_uav.adjoint() * hh.adjoint() / C64::from(sigma2);
            let oracle = bw * t_u * log2_det_eye_plus(&theta);
            assert!((bits - oracle).abs() <= 1e-9 * oracle.abs().max(1.0));
        }
    }

    #[test]
    fn spectrum_equivalence_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let h = random_matrix(&mut rng, 16, 8);
            let snr: f64 = rng.gen_range(0.01..10.0);
            let b = svd_beams(&h);
            let lhs: f64 = b.lambda.iter().map(|l| (1.0 + l * snr).log2()).sum();
            let rhs = log2_det_eye_plus(&(h.adjoint() * &h * C64::from(snr)));
            assert!((lhs - rhs).abs() <= 1e-8 * rhs.abs().max(1.0));
        }
    }
}
