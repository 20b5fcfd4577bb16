//! Simulator and analyzer for a gigahertz-clocked, fibre-based B92 quantum
//! key distribution link.
//!
//! - [`model`]: physical parameters and the link-budget chain
//! - [`protocol`]: B92 encoding, click probabilities, sifting
//! - [`timing`]: jitter response, window capture, ISI, TCSPC histograms
//! - [`analysis`]: QBER budget, secrecy efficiency, sweeps, calibration
//! - [`montecarlo`]: event-level simulation cross-checked against `analysis`

pub mod analysis;
pub mod error;
pub mod model;
pub mod montecarlo;
pub mod protocol;
pub mod rng;
pub mod timing;

pub use error::{Error, Result};
pub use model::{Preset, SystemConfig};
