//! Rician block-fading channels: GE to UAV (ULA at the UAV) and UAV to BS
//! (URA at the BS).

use std::f64::consts::PI;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scenario::{Point, Scenario, Trajectory};
use crate::solver_core::{CMatrix, CVector, C64};

/// Slant distance between a UAV at horizontal position `q` (altitude `h`) and
/// a ground node at `s`.
pub fn link_distance(q: &Point, s: &Point, h: f64) -> f64 {
    ((q - s).norm_squared() + h * h).sqrt()
}

/// Uniform linear array response; element `l` is `exp(-j 2 pi spacing l cosine / wavelength)`.
pub fn ula_steering(cosine: f64, l: usize, spacing: f64, wavelength: f64) -> CVector {
    let step = -2.0 * PI / wavelength * spacing * cosine;
    CVector::from_fn(l, |i, _| {
        if i == 0 {
            C64::new(1.0, 0.0)
        } else {
            C64::from_polar(1.0, step * i as f64)
        }
    })
}

/// Uniform rectangular array response: `kron(a_x(phi_x), a_y(phi_y))`.
pub fn ura_steering(phi_x: f64, phi_y: f64, mx: usize, my: usize, spacing: f64, wavelength: f64) -> CVector {
    let ax = ula_steering(phi_x, mx, spacing, wavelength);
    let ay = ula_steering(phi_y, my, spacing, wavelength);
    ax.kronecker(&ay)
}

/// Seeded source of the scattered (NLoS) channel components.
///
/// Every (slot, link) pair owns an independent ChaCha stream, so a draw does
/// not depend on the order in which links are synthesized. Link ids
/// `0..K` are the GE links and `K` is the UAV-BS link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NlosDraw {
    pub seed: u64,
}

impl NlosDraw {
    pub fn new(seed: u64) -> Self {
        NlosDraw { seed }
    }

    fn rng(&self, slot: usize, link: usize) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&(slot as u64).to_le_bytes());
        key[16..24].copy_from_slice(&(link as u64).to_le_bytes());
        key[24..].copy_from_slice(b"nlos-cn\0");
        ChaCha8Rng::from_seed(key)
    }

    /// `len` i.i.d. CN(0, 1) entries for one link in one slot.
    pub fn entries(&self, slot: usize, link: usize, len: usize) -> Vec<C64> {
        let mut rng = self.rng(slot, link);
        let scale = std::f64::consts::FRAC_1_SQRT_2;
        (0..len)
            .map(|_| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                C64::new(re * scale, im * scale)
            })
            .collect()
    }

    pub fn vector(&self, slot: usize, link: usize, len: usize) -> CVector {
        CVector::from_vec(self.entries(slot, link, len))
    }

    /// Column-major `rows x cols` matrix.
    pub fn matrix(&self, slot: usize, link: usize, rows: usize, cols: usize) -> CMatrix {
        CMatrix::from_vec(rows, cols, self.entries(slot, link, rows * cols))
    }
}

/// Channels of one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotChannels {
    /// `h_ku[k]`, length `L`.
    pub h_ku: Vec<CVector>,
    /// `h_ku[k] * d_ku[k]`.
    pub hbar_ku: Vec<CVector>,
    pub d_ku: Vec<f64>,
    /// `H_ub`, `M x L`.
    pub h_ub: CMatrix,
    /// `H_ub * d_ub`.
    pub hbar_ub: CMatrix,
    pub d_ub: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub slots: Vec<SlotChannels>,
}

/// `(sqrt(K/(1+K)), sqrt(1/(1+K)))`; an infinite factor is pure LoS.
fn rician_weights(factor: f64) -> (f64, f64) {
    if factor.is_infinite() {
        (1.0, 0.0)
    } else {
        ((factor / (1.0 + factor)).sqrt(), (1.0 / (1.0 + factor)).sqrt())
    }
}

/// Line-of-sight GE-UAV response: ULA at the cosine `(x_u - x_k) / d_ku`.
pub fn ge_los(s: &Scenario, q: &Point, ge: &Point) -> CVector {
    let d = link_distance(q, ge, s.altitude);
    ula_steering((q.x - ge.x) / d, s.uav_antennas, s.antenna_spacing, s.wavelength)
}

/// Line-of-sight UAV-BS response `phi_br phi_ub^H`.
pub fn relay_los(s: &Scenario, q: &Point) -> CMatrix {
    let d = link_distance(q, &s.bs_position, s.altitude);
    let phi_ub = ula_steering((s.bs_position.x - q.x) / d, s.uav_antennas, s.antenna_spacing, s.wavelength);
    let horiz = s.bs_position - q;
    let rho = horiz.norm();
    let sin_elev = s.altitude / d;
    let (sin_az, cos_az) = if rho > 0.0 { (horiz.x / rho, horiz.y / rho) } else { (0.0, 1.0) };
    let phi_br = ura_steering(
        sin_elev * sin_az,
        sin_elev * cos_az,
        s.bs_antennas_x,
        s.bs_antennas_y,
        s.antenna_spacing,
        s.wavelength,
    );
    &phi_br * phi_ub.adjoint()
}

/// Channels along `traj` for one fixed NLoS realization.
pub fn synthesize_channels(s: &Scenario, traj: &Trajectory, nlos: &NlosDraw) -> ChannelSet {
    let (w_los, w_nlos) = rician_weights(s.rician_factor);
    let amp = s.beta0.sqrt();
    let l = s.uav_antennas;
    let m = s.bs_antennas();
    let k_count = s.num_ges();
    let slots = traj
        .points
        .iter()
        .enumerate()
        .map(|(n, q)| {
            let mut h_ku = Vec::with_capacity(k_count);
            let mut hbar_ku = Vec::with_capacity(k_count);
            let mut d_ku = Vec::with_capacity(k_count);
            for (k, ge) in s.ges.iter().enumerate() {
                let d = link_distance(q, &ge.position, s.altitude);
                let mut hbar = ge_los(s, q, &ge.position) * C64::from(amp * w_los);
                if w_nlos > 0.0 {
                    hbar += nlos.vector(n, k, l) * C64::from(amp * w_nlos);
                }
                h_ku.push(&hbar / C64::from(d));
                hbar_ku.push(hbar);
                d_ku.push(d);
            }
            let d_ub = link_distance(q, &s.bs_position, s.altitude);
            let mut hbar_ub = relay_los(s, q) * C64::from(amp * w_los);
            if w_nlos > 0.0 {
                hbar_ub += nlos.matrix(n, k_count, m, l) * C64::from(amp * w_nlos);
            }
            SlotChannels {
                h_ku,
                hbar_ku,
                d_ku,
                h_ub: &hbar_ub / C64::from(d_ub),
                hbar_ub,
                d_ub,
            }
        })
        .collect();
    ChannelSet { slots }
}

impl ChannelSet {
    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    /// Same normalized channels, with path loss recomputed for a new
    /// trajectory. This is the channel model the trajectory subproblem
    /// optimizes against.
    pub fn rescaled(&self, s: &Scenario, traj: &Trajectory) -> Result<ChannelSet> {
        if traj.len() != self.slots.len() {
            return Err(Error::Dimension(format!(
                "trajectory has {} points, channels have {} slots",
                traj.len(),
                self.slots.len()
            )));
        }
        let slots = self
            .slots
            .iter()
            .zip(&traj.points)
            .map(|(c, q)| {
                let d_ku: Vec<f64> = s.ges.iter().map(|g| link_distance(q, &g.position, s.altitude)).collect();
                let d_ub = link_distance(q, &s.bs_position, s.altitude);
                SlotChannels {
                    h_ku: c.hbar_ku.iter().zip(&d_ku).map(|(h, &d)| h / C64::from(d)).collect(),
                    hbar_ku: c.hbar_ku.clone(),
                    d_ku,
                    h_ub: &c.hbar_ub / C64::from(d_ub),
                    hbar_ub: c.hbar_ub.clone(),
                    d_ub,
                }
            })
            .collect();
        Ok(ChannelSet { slots })
    }

    /// CSV dump with columns `slot,link,row,col,re,im`. GE links are
    /// `0..K` (column 0); the UAV-BS link is `K`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        w.write_record(["slot", "link", "row", "col", "re", "im"])?;
        let mut put = |n: usize, link: usize, r: usize, c: usize, z: C64| {
            w.write_record([
                n.to_string(),
                link.to_string(),
                r.to_string(),
                c.to_string(),
                format!("{:.16e}", z.re),
                format!("{:.16e}", z.im),
            ])
        };
        for (n, slot) in self.slots.iter().enumerate() {
            for (k, h) in slot.h_ku.iter().enumerate() {
                for (r, z) in h.iter().enumerate() {
                    put(n, k, r, 0, *z)?;
                }
            }
            let link = slot.h_ku.len();
            for c in 0..slot.h_ub.ncols() {
                for r in 0..slot.h_ub.nrows() {
                    put(n, link, r, c, slot.h_ub[(r, c)])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(path.as_ref(), e))
    }
}
