//! Closed-loop simulation and controller synthesis for thermally constrained
//! lithium-ion battery discharge.
//!
//! The crate is organised bottom-up:
//!
//! - [`battery`]: electrothermal equivalent-circuit model, integration,
//!   linearization and state-of-energy bookkeeping.
//! - [`estimation`]: extended Kalman filter on the measured `[Ts, V]` output.
//! - [`polytope`]: H-representation set algebra and minimal robust positively
//!   invariant set computation.
//! - [`controllers`]: CC-CV, CC-CT, dynamic programming and tube MPC behind a
//!   single [`controllers::Controller`] trait.
//! - [`simulation`]: closed-loop harness, disturbance identification and the
//!   benchmark across controllers.
//! - [`config`] and [`cli`]: the TOML configuration schema and the command
//!   line front end.
//!
//! Sign convention: discharge current is positive. The terminal voltage sags
//! under discharge, `V = ocv(SoC) - V1 - R0 * I`.

pub mod battery;
pub mod cli;
pub mod config;
pub mod controllers;
pub mod error;
pub mod estimation;
pub mod parallel;
pub mod polytope;
pub mod simulation;

pub use error::{Error, Result};
