//! H-polytope algebra and robust invariant sets.

mod lp;
mod rpi;
mod set;

pub use lp::{LpOutcome, SupportOutcome, is_empty, maximize, solve_standard};
pub use rpi::{DEFAULT_MAX_STEPS, RpiResult, compute_mrpi, compute_mrpi_capped, spectral_radius, verify_rpi};
pub use set::Polytope;
