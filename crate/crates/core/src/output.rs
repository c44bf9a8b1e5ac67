//! CSV writers shared by the examples and the command line.

use std::path::Path;

use crate::error::Result;
use crate::scenario::Trajectory;

/// A real with 12 significant digits, in exponent form outside
/// `[1e-4, 1e15)`.
pub fn real(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let rounded: f64 = format!("{x:.11e}").parse().unwrap_or(x);
    let mag = rounded.abs();
    if (1e-4..1e15).contains(&mag) {
        format!("{rounded}")
    } else {
        format!("{rounded:e}")
    }
}

/// Trajectory dump with columns `n,x,y`.
pub fn write_trajectory(traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["n", "x", "y"])?;
    for (n, q) in traj.points.iter().enumerate() {
        w.write_record([n.to_string(), real(q.x), real(q.y)])?;
    }
    w.flush().map_err(|e| crate::Error::io(path.as_ref(), e))
}
