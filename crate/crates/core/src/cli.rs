//! Batch front end: single runs and parameter sweeps, with CSV outputs.
//!
//! Exit codes: 0 for a feasible run, 2 when a block reports an infeasible
//! subproblem or the final audit fails, 1 for input and other errors.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::{alternate, feasibility_audit, AoOptions, Baseline, SolutionTrace};
use crate::output::{real, write_trajectory};
use crate::scenario::{default_scenario, Scenario};

#[derive(Debug, Parser)]
#[command(name = "uavmec", version, about = "Maximize the worst-case remaining energy of GEs served by a SWIPT relay UAV")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize one scenario.
    Run(RunArgs),
    /// Optimize a scenario over a grid of values of one parameter.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Maximum number of alternating iterations.
    #[arg(long, default_value_t = 30)]
    pub max_iters: usize,
    /// Relative change of eta that stops the iterations.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
}

impl SolverArgs {
    fn options(&self, baseline: Baseline) -> AoOptions {
        AoOptions { max_iters: self.max_iters, tol: self.tol, ..AoOptions::for_baseline(baseline) }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Scenario JSON; the built-in default scenario when omitted.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    /// Overrides the scenario's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// full, no-trajectory, no-time or no-rho.
    #[arg(long, default_value = "full")]
    pub baseline: Baseline,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Base scenario JSON; the built-in default scenario when omitted.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Sweep JSON.
    #[arg(long)]
    pub sweep: PathBuf,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    /// Worker threads; all available cores when omitted.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

/// Parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    #[serde(rename = "uav_antennas", alias = "L")]
    UavAntennas,
    #[serde(rename = "uav_power", alias = "P_uav_max")]
    UavPower,
    #[serde(rename = "altitude", alias = "H")]
    Altitude,
}

impl Axis {
    /// Column name in the output files.
    pub fn key(self) -> &'static str {
        match self {
            Axis::UavAntennas => "L",
            Axis::UavPower => "P_uav_max",
            Axis::Altitude => "H",
        }
    }

    pub fn apply(self, s: &Scenario, value: f64) -> Scenario {
        let mut s = s.clone();
        match self {
            Axis::UavAntennas => s.uav_antennas = value as usize,
            Axis::UavPower => s.uav_max_power = value,
            Axis::Altitude => s.altitude = value,
        }
        s
    }
}

fn all_baselines() -> Vec<Baseline> {
    Baseline::ALL.to_vec()
}

fn first_seed() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: Axis,
    pub values: Vec<f64>,
    #[serde(default = "all_baselines")]
    pub baselines: Vec<Baseline>,
    #[serde(default = "first_seed")]
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<SweepSpec> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SweepSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSweep(m));
        if self.values.is_empty() {
            return bad("values is empty".into());
        }
        if let Some(v) = self.values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return bad(format!("value {v} is not positive"));
        }
        if self.axis == Axis::UavAntennas {
            if let Some(v) = self.values.iter().find(|v| v.fract() != 0.0) {
                return bad(format!("antenna count {v} is not an integer"));
            }
        }
        if self.baselines.is_empty() {
            return bad("baselines is empty".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds is empty".into());
        }
        Ok(())
    }

    /// Every (value, baseline, seed) point, value-major.
    pub fn points(&self) -> Vec<(f64, Baseline, u64)> {
        let mut out = Vec::with_capacity(self.values.len() * self.baselines.len() * self.seeds.len());
        for &v in &self.values {
            for &b in &self.baselines {
                for &seed in &self.seeds {
                    out.push((v, b, seed));
                }
            }
        }
        out
    }
}

/// Outcome of one sweep point.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: f64,
    pub baseline: Baseline,
    pub seed: u64,
    pub outcome: PointOutcome,
}

#[derive(Debug, Clone)]
pub enum PointOutcome {
    Done { trace: Box<SolutionTrace>, seconds: f64 },
    Failed(String, i32),
    Skipped,
}

impl SweepRow {
    pub fn trace(&self) -> Option<&SolutionTrace> {
        match &self.outcome {
            PointOutcome::Done { trace, .. } => Some(trace),
            _ => None,
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_infeasible() {
        2
    } else {
        1
    }
}

fn load_base(path: &Option<PathBuf>) -> Result<Scenario> {
    match path {
        Some(p) => Scenario::load(p),
        None => Ok(default_scenario()),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// File name of the trajectory dump for altitude `h`.
pub fn trajectory_file(h: f64) -> String {
    format!("trajectory_{}.csv", real(h))
}

/// Per-GE energy summary with columns `ge,harvested,compute,transmit,remaining`.
pub fn write_summary(trace: &SolutionTrace, path: &Path) -> Result<()> {
    let l = &trace.solution.ledger;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["ge", "harvested", "compute", "transmit", "remaining"])?;
    for k in 0..l.remaining.len() {
        w.write_record([k.to_string(), real(l.harvested[k]), real(l.compute[k]), real(l.transmit[k]), real(l.remaining[k])])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn cmd_run(args: &RunArgs) -> i32 {
    match run(args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn run(args: &RunArgs) -> Result<i32> {
    let mut s = load_base(&args.scenario)?;
    if let Some(seed) = args.seed {
        s.rng_seed = seed;
    }
    create_dir(&args.out_dir)?;
    let trace = alternate(&s, &args.solver.options(args.baseline))?;
    trace.write_runlog(args.out_dir.join("runlog.csv"))?;
    write_trajectory(&trace.solution.trajectory, args.out_dir.join(trajectory_file(s.altitude)))?;
    write_summary(&trace, &args.out_dir.join("summary.csv"))?;
    let audit = feasibility_audit(&s, &trace.solution);
    println!(
        "eta = {} J after {} iterations (best at {}, converged: {}), max violation {:.3e}",
        real(trace.eta()),
        trace.iterations.len(),
        trace.best_iteration,
        trace.converged,
        audit.max_violation()
    );
    for (k, r) in trace.solution.ledger.remaining.iter().enumerate() {
        println!("GE {k}: remaining {} J", real(*r));
    }
    if !audit.passes() {
        for (name, v) in audit.failures() {
            eprintln!("error: final solution violates {name} by {v:.3e}");
        }
        return Ok(2);
    }
    if !trace.converged {
        eprintln!("warning: no convergence within {} iterations", args.solver.max_iters);
    }
    Ok(0)
}

pub fn cmd_sweep(args: &SweepArgs) -> i32 {
    match sweep(args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn sweep(args: &SweepArgs) -> Result<i32> {
    let base = load_base(&args.scenario)?;
    let spec = SweepSpec::load(&args.sweep)?;
    for &v in &spec.values {
        let report = spec.axis.apply(&base, v).validate();
        if !report.is_empty() {
            return Err(Error::InvalidScenario(report));
        }
    }
    create_dir(&args.out_dir)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = args.jobs {
        pool = pool.num_threads(jobs);
    }
    let pool = pool.build().map_err(|e| Error::InvalidSweep(format!("worker pool: {e}")))?;
    let rows = pool.install(|| run_sweep(&base, &spec, &args.solver));
    write_sweep(&spec, &rows, &args.out_dir)?;
    let failed = rows.iter().find_map(|r| match &r.outcome {
        PointOutcome::Failed(msg, code) => Some((r, msg, *code)),
        _ => None,
    });
    if let Some((r, msg, code)) = failed {
        eprintln!("error: {}={} {} seed {}: {msg}", spec.axis.key(), real(r.value), r.baseline, r.seed);
        return Ok(code);
    }
    println!("{} points written to {}", rows.len(), args.out_dir.display());
    Ok(0)
}

/// Run every point of `spec` in the current rayon pool. After the first
/// failure, points not yet started are skipped.
pub fn run_sweep(base: &Scenario, spec: &SweepSpec, solver: &SolverArgs) -> Vec<SweepRow> {
    let abort = AtomicBool::new(false);
    spec.points()
        .into_par_iter()
        .map(|(value, baseline, seed)| {
            let outcome = if abort.load(Ordering::SeqCst) {
                PointOutcome::Skipped
            } else {
                let mut s = spec.axis.apply(base, value);
                s.rng_seed = seed;
                let started = std::time::Instant::now();
                match alternate(&s, &solver.options(baseline)) {
                    Ok(trace) => {
                        let audit = feasibility_audit(&s, &trace.solution);
                        if audit.passes() {
                            PointOutcome::Done { trace: Box::new(trace), seconds: started.elapsed().as_secs_f64() }
                        } else {
                            abort.store(true, Ordering::SeqCst);
                            PointOutcome::Failed(format!("final audit failed: {:?}", audit.failures()), 2)
                        }
                    }
                    Err(e) => {
                        abort.store(true, Ordering::SeqCst);
                        PointOutcome::Failed(e.to_string(), exit_code(&e))
                    }
                }
            };
            SweepRow { value, baseline, seed, outcome }
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Writes `results.csv`, `series_<axis>.csv` with the median `eta` per
/// baseline, and for altitude sweeps one trajectory file per altitude plus
/// `trajectory_overlay.csv`.
pub fn write_sweep(spec: &SweepSpec, rows: &[SweepRow], dir: &Path) -> Result<()> {
    let key = spec.axis.key();
    let path = dir.join("results.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([key, "baseline", "seed", "eta", "iterations", "seconds", "status"])?;
    for r in rows {
        let (eta, iters, secs, status) = match &r.outcome {
            PointOutcome::Done { trace, seconds } => {
                (real(trace.eta()), trace.iterations.len().to_string(), real(*seconds), "ok".to_string())
            }
            PointOutcome::Failed(msg, _) => (String::new(), String::new(), String::new(), format!("failed: {msg}")),
            PointOutcome::Skipped => (String::new(), String::new(), String::new(), "skipped".into()),
        };
        w.write_record([real(r.value), r.baseline.to_string(), r.seed.to_string(), eta, iters, secs, status])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join(format!("series_{key}.csv"));
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec![key.to_string()];
    header.extend(spec.baselines.iter().map(|b| b.to_string()));
    w.write_record(&header)?;
    for &v in &spec.values {
        let mut record = vec![real(v)];
        for &b in &spec.baselines {
            let etas: Vec<f64> = rows
                .iter()
                .filter(|r| r.value == v && r.baseline == b)
                .filter_map(|r| r.trace().map(|t| t.eta()))
                .collect();
            record.push(if etas.is_empty() { String::new() } else { real(median(etas)) });
        }
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    if spec.axis == Axis::Altitude {
        let shown = if spec.baselines.contains(&Baseline::Full) { Baseline::Full } else { spec.baselines[0] };
        let seed = spec.seeds[0];
        let mut paths = BTreeMap::new();
        for r in rows.iter().filter(|r| r.baseline == shown && r.seed == seed) {
            if let Some(t) = r.trace() {
                write_trajectory(&t.solution.trajectory, dir.join(trajectory_file(r.value)))?;
                paths.insert(r.value.to_bits(), (r.value, t.solution.trajectory.clone()));
            }
        }
        let path = dir.join("trajectory_overlay.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record([key, "n", "x", "y"])?;
        for &v in &spec.values {
            if let Some((h, traj)) = paths.get(&v.to_bits()) {
                for (n, q) in traj.points.iter().enumerate() {
                    w.write_record([real(*h), n.to_string(), real(q.x), real(q.y)])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Parse arguments and dispatch; returns the process exit code.
pub fn main_with(cli: Cli) -> i32 {
    match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Sweep(args) => cmd_sweep(&args),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(json: &str) -> Result<SweepSpec> {
        let spec: SweepSpec = serde_json::from_str(json)?;
        spec.validate()?;
        Ok(spec)
    }

    #[test]
    fn sweep_spec_parsing() {
        let s = spec(r#"{"axis": "uav_antennas", "values": [4, 8, 16], "seeds": [0, 1]}"#).unwrap();
        assert_eq!(s.baselines, Baseline::ALL.to_vec());
        assert_eq!(s.points().len(), 3 * 4 * 2);
        let s = spec(r#"{"axis": "H", "values": [5, 20], "baselines": ["full", "no-rho"]}"#).unwrap();
        assert_eq!(s.axis, Axis::Altitude);
        assert_eq!(s.seeds, vec![0]);
        assert!(matches!(spec(r#"{"axis": "altitude", "values": []}"#), Err(Error::InvalidSweep(_))));
        assert!(spec(r#"{"axis": "altitude", "values": [-5]}"#).is_err());
        assert!(spec(r#"{"axis": "uav_antennas", "values": [4.5]}"#).is_err());
        assert!(spec(r#"{"axis": "speed", "values": [1]}"#).is_err());
        assert!(spec(r#"{"axis": "H", "values": [5], "baselines": ["fast"]}"#).is_err());
    }

    #[test]
    fn axis_application() {
        let s = default_scenario();
        assert_eq!(Axis::UavAntennas.apply(&s, 16.0).uav_antennas, 16);
        assert_eq!(Axis::UavPower.apply(&s, 20.0).uav_max_power, 20.0);
        assert_eq!(Axis::Altitude.apply(&s, 20.0).altitude, 20.0);
        assert_eq!(trajectory_file(5.0), "trajectory_5.csv");
        assert_eq!(trajectory_file(2.5), "trajectory_2.5.csv");
    }

    #[test]
    fn medians() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(vec![]).is_nan());
    }

    #[test]
    fn arguments_parse() {
        let cli = Cli::try_parse_from(["uavmec", "run", "--seed", "3", "--baseline", "no-rho", "--tol", "1e-3"]).unwrap();
        let Command::Run(args) = cli.command else { panic!("expected run") };
        assert_eq!(args.seed, Some(3));
        assert_eq!(args.baseline, Baseline::NoRho);
        assert_eq!(args.solver.tol, 1e-3);
        assert_eq!(args.solver.max_iters, 30);
        assert!(Cli::try_parse_from(["uavmec", "sweep"]).is_err());
        assert!(Cli::try_parse_from(["uavmec", "run", "--baseline", "fast"]).is_err());
    }
}
