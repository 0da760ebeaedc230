//! Mechanics of flagellated robots moving through granular media.
//!
//! Two models share the same drag laws:
//!
//! * [`beam`]: a reduced Euler-Bernoulli model of one clamped flagellum,
//!   coupled to head force/torque balance.
//! * [`der`]: a fully implicit discrete-elastic-rod simulation of the whole
//!   robot (rigid head, plate, `n` elastic flagella).
//!
//! [`calib`] builds parameter fitting, sweeps and the file formats used by
//! the command-line tool on top of both.

pub mod beam;
pub mod calib;
pub mod der;
pub mod energy;
pub mod error;
pub mod media;
pub mod rod;
pub mod sparse;

pub use error::{Error, Result};
pub(crate) use error::invalid;

/// Revolutions per minute to radians per second.
pub fn rpm_to_rad_s(rpm: f64) -> f64 {
    rpm * std::f64::consts::TAU / 60.0
}

/// Radians per second to revolutions per minute.
pub fn rad_s_to_rpm(omega: f64) -> f64 {
    omega * 60.0 / std::f64::consts::TAU
}
