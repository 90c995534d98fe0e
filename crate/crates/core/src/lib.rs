//! Conformal prediction and conformal risk control under label noise, with
//! corruption models, coverage/risk bounds and a Monte Carlo harness.

pub mod adversarial;
pub mod bounds;
pub mod calibrate;
pub mod error;
pub mod exec;
pub mod fnr;
pub mod harness;
pub mod losses;
pub mod noise;
pub mod online;
pub mod rng;
pub mod scores;
pub mod synth;

pub use error::{Error, Result};
pub use exec::Execution;
