//! Mission scenario: geometry, radio and compute parameters, plus the
//! straight-line initial trajectory.
//!
//! Scenario files are JSON documents whose keys follow the symbol names used
//! throughout the crate (`K`, `L`, `Mx`, `B`, `beta0`, `s_k`, ...). Every key
//! except `s_k` is optional and falls back to the reference parameter set.
//! Quantities usually quoted in dB may instead be given through a `_db` /
//! `_dbm` variant (`beta0_db`, `sigma2_dbm`, ...); they are converted to
//! linear units on load and never stored in dB.

use std::fmt;
use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Horizontal position in metres.
pub type Point = Vector2<f64>;

/// Per-GE radio and compute parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundEquipment {
    /// `s_k`, horizontal position (m).
    pub position: Point,
    /// `sigma_k2`, antenna noise power (W).
    pub noise_power: f64,
    /// `delta_k2`, information-decoder processing noise (W).
    pub decoder_noise_power: f64,
    /// `zeta_k`, RF-to-DC conversion efficiency in (0, 1].
    pub conversion_efficiency: f64,
    /// `varsigma_k`, effective switched capacitance.
    pub capacitance: f64,
    /// `C_k`, CPU cycles per task bit.
    pub cycles_per_bit: f64,
    /// `F_k_max`, maximum CPU frequency (Hz).
    pub max_cpu_hz: f64,
    /// `P_k_max`, maximum transmit power (W).
    pub max_tx_power: f64,
}

impl GroundEquipment {
    /// Largest number of bits computable locally in one slot, `delta F / C`.
    pub fn local_capacity(&self, slot_len: f64) -> f64 {
        slot_len * self.max_cpu_hz / self.cycles_per_bit
    }

    /// `C^3 varsigma / delta^2`: local computing energy per cubic bit.
    pub fn compute_energy_coeff(&self, slot_len: f64) -> f64 {
        self.cycles_per_bit.powi(3) * self.capacitance / (slot_len * slot_len)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub ges: Vec<GroundEquipment>,
    /// `L`, UAV antennas (uniform linear array).
    pub uav_antennas: usize,
    /// `Mx`, BS array elements along x.
    pub bs_antennas_x: usize,
    /// `My`, BS array elements along y.
    pub bs_antennas_y: usize,
    /// `B` (Hz).
    pub bandwidth: f64,
    /// `beta0`, channel power gain at 1 m (linear).
    pub beta0: f64,
    /// Rician K-factor (linear).
    pub rician_factor: f64,
    pub wavelength: f64,
    pub antenna_spacing: f64,
    /// `H`, fixed UAV altitude (m).
    pub altitude: f64,
    /// `Vmax` (m/s).
    pub max_speed: f64,
    /// `T`, mission duration (s).
    pub mission_time: f64,
    /// `delta`, slot length (s).
    pub slot_len: f64,
    /// `t_d`, downlink period inside each slot (s).
    pub downlink_time: f64,
    /// `sigma2`, receiver noise at the UAV and the BS (W).
    pub noise_power: f64,
    /// `Gamma`, task bits per slot per GE.
    pub task_bits: f64,
    /// `theta`, result-to-task size ratio.
    pub result_ratio: f64,
    /// `P_uav_max` (W).
    pub uav_max_power: f64,
    pub start: Point,
    pub end: Point,
    pub bs_position: Point,
    pub rng_seed: u64,
}

impl Scenario {
    /// `K`
    pub fn num_ges(&self) -> usize {
        self.ges.len()
    }

    /// `N = round(T / delta)`.
    pub fn num_slots(&self) -> usize {
        if self.slot_len > 0.0 && self.mission_time.is_finite() {
            (self.mission_time / self.slot_len).round().max(0.0) as usize
        } else {
            0
        }
    }

    /// `M = Mx * My`.
    pub fn bs_antennas(&self) -> usize {
        self.bs_antennas_x * self.bs_antennas_y
    }

    /// Time left for uplink offloading and relaying, `delta - t_d`.
    pub fn uplink_window(&self) -> f64 {
        self.slot_len - self.downlink_time
    }

    /// Largest horizontal displacement between consecutive slots.
    pub fn max_step(&self) -> f64 {
        self.slot_len * self.max_speed
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Scenario> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Scenario::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Scenario> {
        let file: ScenarioFile = serde_json::from_str(text)?;
        let scenario = file.into_scenario()?;
        let report = scenario.validate();
        if report.is_empty() {
            Ok(scenario)
        } else {
            Err(Error::InvalidScenario(report))
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ScenarioFile::from(self)).expect("scenario serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Check every scenario invariant. Violations are returned, not raised.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let k = self.num_ges();
        if k == 0 {
            report.push("K", "at least one GE is required");
        }
        if self.uav_antennas < k.max(1) {
            report.push(
                "L",
                format!("ZF requires L ≥ K (L = {}, K = {k})", self.uav_antennas),
            );
        }
        if self.bs_antennas_x == 0 || self.bs_antennas_y == 0 {
            report.push("Mx", "BS array dimensions must be at least 1");
        }
        let positive = [
            ("B", self.bandwidth),
            ("beta0", self.beta0),
            ("rician_zeta", self.rician_factor),
            ("wavelength", self.wavelength),
            ("antenna_spacing", self.antenna_spacing),
            ("H", self.altitude),
            ("Vmax", self.max_speed),
            ("T", self.mission_time),
            ("delta", self.slot_len),
            ("sigma2", self.noise_power),
            ("Gamma", self.task_bits),
            ("theta", self.result_ratio),
            ("P_uav_max", self.uav_max_power),
        ];
        for (name, value) in positive {
            // the Rician factor may be +inf (pure line of sight)
            if !(value > 0.0) || (value.is_infinite() && name != "rician_zeta") {
                report.push(name, format!("{name} must be positive and finite, got {value}"));
            }
        }
        for (name, p) in [("q_I", self.start), ("q_F", self.end), ("s_b", self.bs_position)] {
            if !p.iter().all(|v| v.is_finite()) {
                report.push(name, format!("{name} must be finite"));
            }
        }

        let n = self.num_slots();
        if self.slot_len > 0.0 && self.mission_time > 0.0 {
            if n == 0 {
                report.push("delta", "slot length exceeds mission time");
            } else if (n as f64 * self.slot_len - self.mission_time).abs()
                > 1e-9 * self.mission_time
            {
                report.push("delta", "slot length must divide the mission time (delta = T/N)");
            }
        }
        if self.downlink_time < 0.0 || !self.downlink_time.is_finite() {
            report.push("t_d", "t_d must be nonnegative");
        } else if self.downlink_time > self.slot_len {
            report.push(
                "t_d",
                format!(
                    "t_d exceeds slot length ({} s > {} s)",
                    self.downlink_time, self.slot_len
                ),
            );
        }

        for (i, ge) in self.ges.iter().enumerate() {
            if !(ge.conversion_efficiency > 0.0 && ge.conversion_efficiency <= 1.0) {
                report.push(
                    "zeta_k",
                    format!(
                        "GE {i}: conversion efficiency out of range (0, 1]: {}",
                        ge.conversion_efficiency
                    ),
                );
            }
            let fields = [
                ("sigma_k2", ge.noise_power),
                ("delta_k2", ge.decoder_noise_power),
                ("varsigma_k", ge.capacitance),
                ("C_k", ge.cycles_per_bit),
                ("F_k_max", ge.max_cpu_hz),
                ("P_k_max", ge.max_tx_power),
            ];
            for (name, value) in fields {
                if !(value > 0.0) || !value.is_finite() {
                    report.push(name, format!("GE {i}: {name} must be positive, got {value}"));
                }
            }
            if !ge.position.iter().all(|v| v.is_finite()) {
                report.push("s_k", format!("GE {i}: position must be finite"));
            }
        }

        if n >= 1 && self.max_speed > 0.0 {
            let gap = (self.end - self.start).norm();
            let reach = (n as f64 - 1.0) * self.slot_len * self.max_speed;
            if gap > reach * (1.0 + 1e-12) {
                report.push(
                    "Vmax",
                    format!("endpoints unreachable: |q_F - q_I| = {gap:.4} m > {reach:.4} m"),
                );
            }
        }
        report
    }
}

/// The reference parameter set: four GEs, 10 s mission in 0.5 s slots,
/// L = 8 UAV antennas, a 4x4 BS array, H = 5 m and P_uav_max = 50 W.
pub fn default_scenario() -> Scenario {
    let positions = [(-10.0, -12.0), (-5.0, -9.0), (5.0, -14.0), (13.0, -12.0)];
    let ges = positions
        .iter()
        .map(|&(x, y)| GroundEquipment {
            position: Point::new(x, y),
            noise_power: 1e-9,
            decoder_noise_power: 1e-8,
            conversion_efficiency: 0.8,
            capacitance: 1e-28,
            cycles_per_bit: 1000.0,
            max_cpu_hz: 2e9,
            max_tx_power: 1.0,
        })
        .collect();
    let wavelength = 0.1;
    Scenario {
        ges,
        uav_antennas: 8,
        bs_antennas_x: 4,
        bs_antennas_y: 4,
        bandwidth: 1e7,
        beta0: 1e-2,
        rician_factor: 10.0,
        wavelength,
        antenna_spacing: wavelength / 2.0,
        altitude: 5.0,
        max_speed: 5.0,
        mission_time: 10.0,
        slot_len: 0.5,
        downlink_time: 0.25,
        noise_power: 1e-9,
        task_bits: 1e6,
        result_ratio: 1e-5,
        uav_max_power: 50.0,
        start: Point::new(-10.0, -14.0),
        end: Point::new(15.0, -7.0),
        bs_position: Point::new(3.0, -5.0),
        rng_seed: 0,
    }
}

/// Load and validate a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    Scenario::load(path)
}

/// A single invariant violation.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    fn push(&mut self, field: &'static str, message: impl Into<String>) {
        self.violations.push(Violation {
            field,
            message: message.into(),
        });
    }

    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.message.contains(needle))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{}: {}", v.field, v.message)?;
        }
        Ok(())
    }
}

/// Horizontal UAV positions, one per slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub points: Vec<Point>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Largest distance flown between consecutive slots.
    pub fn max_step(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1] - w[0]).norm())
            .fold(0.0, f64::max)
    }

    /// Mobility and endpoint violations for `s`, as human-readable strings.
    pub fn violations(&self, s: &Scenario) -> Vec<String> {
        let mut out = Vec::new();
        let n = s.num_slots();
        if self.points.len() != n {
            out.push(format!("expected {n} points, got {}", self.points.len()));
            return out;
        }
        if n == 0 {
            return out;
        }
        if self.points[0] != s.start {
            out.push("q[1] != q_I".into());
        }
        if self.points[n - 1] != s.end {
            out.push("q[N] != q_F".into());
        }
        let limit = s.max_step();
        for (i, w) in self.points.windows(2).enumerate() {
            let step = (w[1] - w[0]).norm();
            if step > limit {
                out.push(format!("step {i}: {step} m exceeds {limit} m"));
            }
        }
        out
    }
}

/// Straight-line path from `q_I` to `q_F` with `N` equally spaced points.
pub fn initial_trajectory(s: &Scenario) -> Result<Trajectory> {
    let report = s.validate();
    if !report.is_empty() {
        return Err(Error::InvalidScenario(report));
    }
    let n = s.num_slots();
    let points = (0..n)
        .map(|i| {
            if i == 0 {
                s.start
            } else if i == n - 1 {
                s.end
            } else {
                let frac = i as f64 / (n - 1) as f64;
                s.start + (s.end - s.start) * frac
            }
        })
        .collect();
    Ok(Trajectory { points })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum PerGe {
    Uniform(f64),
    Each(Vec<f64>),
}

impl PerGe {
    fn expand(&self, k: usize, field: &'static str) -> Result<Vec<f64>> {
        match self {
            PerGe::Uniform(v) => Ok(vec![*v; k]),
            PerGe::Each(v) if v.len() == k => Ok(v.clone()),
            PerGe::Each(v) => Err(Error::InvalidScenario(ValidationReport {
                violations: vec![Violation {
                    field,
                    message: format!("{field} has {} entries, expected K = {k}", v.len()),
                }],
            })),
        }
    }
}

fn db(v: f64) -> f64 {
    10f64.powf(v / 10.0)
}

fn dbm(v: f64) -> f64 {
    10f64.powf((v - 30.0) / 10.0)
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    K: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    L: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    Mx: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    My: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    B: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    beta0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    beta0_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rician_zeta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rician_zeta_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    wavelength: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    antenna_spacing: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    H: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    Vmax: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    T: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    t_d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma2_dbm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    s_k: Option<Vec<[f64; 2]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma_k2: Option<PerGe>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma_k2_dbm: Option<PerGe>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta_k2: Option<PerGe>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta_k2_dbm: Option<PerGe>,
    #[serde(skip_serializing_if = "Option::is_none")]
    zeta_k: Option<PerGe>,
    #[serde(skip_serializing_if = "Option::is_none")]
    varsigma_k: Option<PerGe>,
    #[serde(skip_serializing_if = "Option::is_none")]
    C_k: Option<PerGe>,
    #[serde(skip_serializing_if = "Option::is_none")]
    F_k_max: Option<PerGe>,
    #[serde(skip_serializing_if = "Option::is_none")]
    P_k_max: Option<PerGe>,
    #[serde(skip_serializing_if = "Option::is_none")]
    Gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    P_uav_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    q_I: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    q_F: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    s_b: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rng_seed: Option<u64>,
}

fn pick_per_ge(
    linear: &Option<PerGe>,
    log: &Option<PerGe>,
    conv: fn(f64) -> f64,
    default: f64,
    k: usize,
    field: &'static str,
) -> Result<Vec<f64>> {
    match (linear, log) {
        (Some(v), _) => v.expand(k, field),
        (None, Some(v)) => Ok(v.expand(k, field)?.into_iter().map(conv).collect()),
        (None, None) => Ok(vec![default; k]),
    }
}

impl ScenarioFile {
    fn into_scenario(self) -> Result<Scenario> {
        let d = default_scenario();
        let d_ge = &d.ges[0];
        let positions = self.s_k.ok_or(Error::MissingField("s_k"))?;
        let k = positions.len();
        if let Some(declared) = self.K {
            if declared != k {
                return Err(Error::InvalidScenario(ValidationReport {
                    violations: vec![Violation {
                        field: "K",
                        message: format!("K = {declared} but s_k lists {k} positions"),
                    }],
                }));
            }
        }
        let id = |v: f64| v;
        let sigma_k2 = pick_per_ge(&self.sigma_k2, &self.sigma_k2_dbm, dbm, d_ge.noise_power, k, "sigma_k2")?;
        let delta_k2 = pick_per_ge(
            &self.delta_k2,
            &self.delta_k2_dbm,
            dbm,
            d_ge.decoder_noise_power,
            k,
            "delta_k2",
        )?;
        let zeta = pick_per_ge(&self.zeta_k, &None, id, d_ge.conversion_efficiency, k, "zeta_k")?;
        let varsigma = pick_per_ge(&self.varsigma_k, &None, id, d_ge.capacitance, k, "varsigma_k")?;
        let cycles = pick_per_ge(&self.C_k, &None, id, d_ge.cycles_per_bit, k, "C_k")?;
        let fmax = pick_per_ge(&self.F_k_max, &None, id, d_ge.max_cpu_hz, k, "F_k_max")?;
        let pmax = pick_per_ge(&self.P_k_max, &None, id, d_ge.max_tx_power, k, "P_k_max")?;
        let ges = (0..k)
            .map(|i| GroundEquipment {
                position: Point::new(positions[i][0], positions[i][1]),
                noise_power: sigma_k2[i],
                decoder_noise_power: delta_k2[i],
                conversion_efficiency: zeta[i],
                capacitance: varsigma[i],
                cycles_per_bit: cycles[i],
                max_cpu_hz: fmax[i],
                max_tx_power: pmax[i],
            })
            .collect();
        let wavelength = self.wavelength.unwrap_or(d.wavelength);
        let slot_len = self.delta.unwrap_or(d.slot_len);
        let pt = |p: Option<[f64; 2]>, fallback: Point| p.map(|a| Point::new(a[0], a[1])).unwrap_or(fallback);
        Ok(Scenario {
            ges,
            uav_antennas: self.L.unwrap_or(d.uav_antennas),
            bs_antennas_x: self.Mx.unwrap_or(d.bs_antennas_x),
            bs_antennas_y: self.My.unwrap_or(d.bs_antennas_y),
            bandwidth: self.B.unwrap_or(d.bandwidth),
            beta0: self.beta0.or(self.beta0_db.map(db)).unwrap_or(d.beta0),
            rician_factor: self
                .rician_zeta
                .or(self.rician_zeta_db.map(db))
                .unwrap_or(d.rician_factor),
            wavelength,
            antenna_spacing: self.antenna_spacing.unwrap_or(wavelength / 2.0),
            altitude: self.H.unwrap_or(d.altitude),
            max_speed: self.Vmax.unwrap_or(d.max_speed),
            mission_time: self.T.unwrap_or(d.mission_time),
            slot_len,
            downlink_time: self.t_d.unwrap_or(0.5 * slot_len),
            noise_power: self.sigma2.or(self.sigma2_dbm.map(dbm)).unwrap_or(d.noise_power),
            task_bits: self.Gamma.unwrap_or(d.task_bits),
            result_ratio: self.theta.unwrap_or(d.result_ratio),
            uav_max_power: self.P_uav_max.unwrap_or(d.uav_max_power),
            start: pt(self.q_I, d.start),
            end: pt(self.q_F, d.end),
            bs_position: pt(self.s_b, d.bs_position),
            rng_seed: self.rng_seed.unwrap_or(d.rng_seed),
        })
    }
}

impl From<&Scenario> for ScenarioFile {
    fn from(s: &Scenario) -> Self {
        let each = |f: fn(&GroundEquipment) -> f64| Some(PerGe::Each(s.ges.iter().map(f).collect()));
        let arr = |p: Point| Some([p.x, p.y]);
        ScenarioFile {
            K: Some(s.num_ges()),
            L: Some(s.uav_antennas),
            Mx: Some(s.bs_antennas_x),
            My: Some(s.bs_antennas_y),
            B: Some(s.bandwidth),
            beta0: Some(s.beta0),
            rician_zeta: Some(s.rician_factor),
            wavelength: Some(s.wavelength),
            antenna_spacing: Some(s.antenna_spacing),
            H: Some(s.altitude),
            Vmax: Some(s.max_speed),
            T: Some(s.mission_time),
            delta: Some(s.slot_len),
            t_d: Some(s.downlink_time),
            sigma2: Some(s.noise_power),
            s_k: Some(s.ges.iter().map(|g| [g.position.x, g.position.y]).collect()),
            sigma_k2: each(|g| g.noise_power),
            delta_k2: each(|g| g.decoder_noise_power),
            zeta_k: each(|g| g.conversion_efficiency),
            varsigma_k: each(|g| g.capacitance),
            C_k: each(|g| g.cycles_per_bit),
            F_k_max: each(|g| g.max_cpu_hz),
            P_k_max: each(|g| g.max_tx_power),
            Gamma: Some(s.task_bits),
            theta: Some(s.result_ratio),
            P_uav_max: Some(s.uav_max_power),
            q_I: arr(s.start),
            q_F: arr(s.end),
            s_b: arr(s.bs_position),
            rng_seed: Some(s.rng_seed),
            ..Default::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const REFERENCE_JSON: &str = r#"{
        "K": 4,
        "s_k": [[-10, -12], [-5, -9], [5, -14], [13, -12]],
        "C_k": 1000, "beta0_db": -20, "sigma_k2_dbm": -60, "sigma2_dbm": -60,
        "delta_k2_dbm": -50, "B": 1e7, "rician_zeta_db": 10, "varsigma_k": 1e-28,
        "theta": 1e-5, "F_k_max": 2e9, "P_k_max": 1, "Mx": 4, "My": 4,
        "delta": 0.5, "T": 10, "t_d": 0.25, "zeta_k": 0.8,
        "q_I": [-10, -14], "q_F": [15, -7], "s_b": [3, -5], "Vmax": 5
    }"#;

    #[test]
    fn reference_file_loads() {
        let s = Scenario::from_json(REFERENCE_JSON).unwrap();
        assert_eq!(s.num_ges(), 4);
        assert_eq!(s.bandwidth, 1e7);
        assert_eq!(s.mission_time, 10.0);
        assert_eq!(s.num_slots(), 20);
        assert!((s.beta0 - 1e-2).abs() < 1e-15);
        assert!((s.noise_power - 1e-9).abs() < 1e-21);
        assert!((s.ges[0].decoder_noise_power - 1e-8).abs() < 1e-20);
        assert!((s.rician_factor - 10.0).abs() < 1e-12);
    }

    #[test]
    fn default_matches_reference_values() {
        let s = default_scenario();
        assert_eq!(s.ges[0].conversion_efficiency, 0.8);
        assert_eq!(s.downlink_time, 0.25);
        assert_eq!(s.num_slots(), 20);
        assert!(s.validate().is_empty());
    }

    #[test]
    fn downlink_longer_than_slot_is_rejected() {
        let text = r#"{"s_k": [[0, 0]], "t_d": 0.6, "delta": 0.5}"#;
        match Scenario::from_json(text) {
            Err(Error::InvalidScenario(r)) => assert!(r.contains("t_d exceeds slot length")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn too_few_antennas_is_rejected() {
        let text = r#"{"s_k": [[0, 0], [1, 0], [2, 0], [3, 0]], "L": 2}"#;
        match Scenario::from_json(text) {
            Err(Error::InvalidScenario(r)) => assert!(r.contains("ZF requires L ≥ K")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_and_missing_keys() {
        assert!(matches!(
            Scenario::from_json(r#"{"s_k": [[0, 0]], "bogus": 1}"#),
            Err(Error::Parse(_))
        ));
        assert!(matches!(Scenario::from_json(r#"{"L": 4}"#), Err(Error::MissingField("s_k"))));
    }

    #[test]
    fn validate_reports_without_mutating() {
        let mut s = default_scenario();
        s.max_speed = 0.1;
        let before = s.clone();
        assert!(s.validate().contains("endpoints unreachable"));
        assert_eq!(s, before);

        let mut s = default_scenario();
        s.ges[2].conversion_efficiency = 1.5;
        assert!(s.validate().contains("conversion efficiency out of range"));
    }

    #[test]
    fn initial_trajectory_cases() {
        let mut s = default_scenario();
        s.mission_time = 1.0;
        s.end = s.start + Point::new(1.0, 0.0);
        let t = initial_trajectory(&s).unwrap();
        assert_eq!(t.points, vec![s.start, s.end]);

        let mut s = default_scenario();
        s.mission_time = 1.5;
        s.start = Point::new(0.0, 0.0);
        s.end = Point::new(2.0, 0.0);
        let t = initial_trajectory(&s).unwrap();
        assert_eq!(t.points[1], Point::new(1.0, 0.0));

        let s = default_scenario();
        let t = initial_trajectory(&s).unwrap();
        assert!((t.max_step() - 25.96150997149434 / 19.0).abs() < 1e-9);
        assert!(t.violations(&s).is_empty());
    }

    #[test]
    fn unreachable_endpoints_refuse_initial_path() {
        let mut s = default_scenario();
        s.max_speed = 0.1;
        assert!(initial_trajectory(&s).is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut s = default_scenario();
        s.ges[1].noise_power = 1.234567890123e-9;
        s.rng_seed = u64::MAX - 3;
        let back = Scenario::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
    }
}
