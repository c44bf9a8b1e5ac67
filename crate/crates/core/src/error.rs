use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

use crate::scenario::ValidationReport;

pub type Result<T> = std::result::Result<T, Error>;

/// Which alternating-optimization block produced a failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Channels,
    Uplink,
    Resource,
    Downlink,
    Trajectory,
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Block::Channels => "channels",
            Block::Uplink => "uplink beamforming",
            Block::Resource => "resource allocation",
            Block::Downlink => "downlink beamforming",
            Block::Trajectory => "trajectory",
        };
        f.write_str(name)
    }
}

/// A subproblem with an empty feasible set, naming the binding constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct Infeasibility {
    pub constraint: String,
    pub slot: Option<usize>,
    pub ge: Option<usize>,
    pub detail: String,
}

impl fmt::Display for Infeasibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} infeasible", self.constraint)?;
        if let Some(n) = self.slot {
            write!(f, " (slot {n}")?;
            if let Some(k) = self.ge {
                write!(f, ", GE {k}")?;
            }
            f.write_str(")")?;
        }
        if !self.detail.is_empty() {
            write!(f, ": {}", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("missing required field `{0}`")]
    MissingField(&'static str),
    #[error("invalid scenario: {0}")]
    InvalidScenario(ValidationReport),
    #[error("unknown baseline {0:?} (expected full, no-trajectory, no-time or no-rho)")]
    UnknownBaseline(String),
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error("rank-deficient channels in slot {slot} for GE {ge}: {detail}")]
    RankDeficient {
        slot: usize,
        ge: usize,
        detail: String,
    },
    #[error("{0}")]
    Infeasible(Infeasibility),
    #[error("{block} failed at iteration {iteration}: {source}")]
    Block {
        block: Block,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("bisection interval does not bracket a root: f(lo)={f_lo}, f(hi)={f_hi}")]
    NoBracket { f_lo: f64, f_hi: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("conic solver: {0}")]
    Solver(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_block(self, block: Block, iteration: usize) -> Self {
        Error::Block {
            block,
            iteration,
            source: Box::new(self),
        }
    }

    /// True if this error (or the one it wraps) is an infeasibility report.
    pub fn is_infeasible(&self) -> bool {
        match self {
            Error::Infeasible(_) => true,
            Error::Block { source, .. } => source.is_infeasible(),
            _ => false,
        }
    }
}
