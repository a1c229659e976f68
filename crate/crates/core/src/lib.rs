//! Robust stabilization of uncertain linear time-delay systems by a
//! super-twisting Lyapunov redesign.
//!
//! The crate is organized bottom-up:
//!
//! - [`model`]: plant, nominal law, delay lattice, uncertainty registry
//! - [`history`]: solution history with delayed-state lookups
//! - [`control`]: nominal, unit, boundary-layer and super-twisting laws
//! - [`dde`]: fixed-step integrator of the closed loop
//! - [`lyapunov`]: Lyapunov-Krasovskii functional and the reaching-time certificate
//! - [`reduced_oracle`]: reduced `(w, z)` dynamics and the comparison solution
//! - [`analysis`]: reaching time, residual radius, chattering metric
//! - [`scenario`]: scenario files and the built-in benchmark

// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod control;
pub mod dde;
pub mod history;
pub mod lyapunov;
pub mod model;
pub mod reduced_oracle;
pub mod scenario;

/// Formats a float with 17 significant digits; parsing the text gives the
/// same value back.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}
