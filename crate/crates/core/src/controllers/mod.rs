//! Discharge policies behind one stepping interface.

mod dp;
mod dual_qp;
mod lqr;
mod mpc;
mod pi;
mod qp;

pub use dp::{
    BatteryDp, DpConfig, DpController, DpProblem, DpSchedule, Grid, ValueTable, dp_solve, dp_value_iteration,
};
pub use lqr::{lqr_gain, solve_dare};
pub use mpc::{
    MpcConfig, MpcController, MpcMemory, MpcSettings, STATE_UNITS, admissible_set, design_feedback_gain, mpc_step,
    synthesize_mpc,
};
pub use pi::{CcCtController, CcCvController, Phase, PiConfig, PiState, cc_ct_step, cc_cv_step};
pub use qp::{QpProblem, QpSettings, QpSolution, QpStatus, WarmStart, qp_solve, qp_solve_with};

use crate::battery::BatteryState;
use crate::error::Result;

/// What a controller sees at a control instant: estimator output and the
/// latest measurements, never the true plant state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub t: f64,
    pub dt: f64,
    pub x_hat: BatteryState,
    /// Terminal voltage measured under `u_prev`.
    pub v_measured: f64,
    pub soe: f64,
    pub u_prev: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub phase: &'static str,
    /// Nominal tube-centre input, `NaN` when not applicable.
    pub nominal_current: f64,
    pub qp_iterations: usize,
    /// `Some(false)` when the estimate left the tube around the nominal state.
    pub tube_contained: Option<bool>,
    pub fallback: bool,
}

impl Diagnostics {
    pub fn phase(phase: &'static str) -> Self {
        Self { phase, nominal_current: f64::NAN, qp_iterations: 0, tube_contained: None, fallback: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerCommand {
    pub current: f64,
    pub diagnostics: Diagnostics,
}

impl ControllerCommand {
    /// Clamps `current` into `[0, u_max]`; a `NaN` request becomes zero.
    pub fn saturated(current: f64, u_max: f64, diagnostics: Diagnostics) -> Self {
        let current = if current.is_nan() { 0.0 } else { current.clamp(0.0, u_max) };
        Self { current, diagnostics }
    }
}

pub trait Controller: Send {
    fn step(&mut self, obs: &Observation) -> Result<ControllerCommand>;
}

/// Holds a constant current.
#[derive(Debug, Clone)]
pub struct ConstantCurrent {
    pub current: f64,
    pub u_max: f64,
}

impl Controller for ConstantCurrent {
    fn step(&mut self, _obs: &Observation) -> Result<ControllerCommand> {
        Ok(ControllerCommand::saturated(self.current, self.u_max, Diagnostics::phase("cc")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturation_bounds() {
        let d = Diagnostics::phase("x");
        assert_eq!(ControllerCommand::saturated(55.0, 40.0, d.clone()).current, 40.0);
        assert_eq!(ControllerCommand::saturated(-1.0, 40.0, d.clone()).current, 0.0);
        assert_eq!(ControllerCommand::saturated(f64::NAN, 40.0, d).current, 0.0);
    }
}
