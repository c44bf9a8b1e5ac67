//! Energy-efficient design of a UAV relay that serves ground equipment (GE)
//! with edge computing and simultaneous wireless information and power
//! transfer.
//!
//! The worst-GE net energy over the mission is maximized by alternating
//! between four blocks:
//!
//! - [`uplink`]: zero-forcing receive beams at the UAV and SVD relay
//!   sub-channels towards the base station.
//! - [`resource`]: offloading split, GE transmit energies and the uplink
//!   time split, as one conic program.
//! - [`downlink`]: transmit covariances and power-splitting ratios by
//!   semidefinite relaxation and successive convex approximation, followed
//!   by rank-one recovery.
//! - [`trajectory`]: the UAV path by fractional programming.
//!
//! [`optimizer::alternate`] runs the loop and [`optimizer::feasibility_audit`]
//! checks the result against every constraint.
//!
//! ```no_run
//! use uavmec::optimizer::{alternate, AoOptions};
//! use uavmec::scenario::default_scenario;
//!
//! let trace = alternate(&default_scenario(), &AoOptions::default())?;
//! println!("worst-GE energy {:.6} J", trace.eta());
//! # Ok::<(), uavmec::Error>(())
//! ```

pub mod channel;
pub mod cli;
pub mod downlink;
pub mod error;
pub mod optimizer;
pub mod output;
pub mod resource;
pub mod scenario;
pub mod solver_core;
pub mod trajectory;
pub mod uplink;

pub use error::{Error, Result};
