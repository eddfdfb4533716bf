//! Electrothermal equivalent-circuit cell: one RC pair plus a two-node
//! (core/surface) lumped thermal model.

mod energy;
mod linearize;
mod model;
mod params;
mod perturb;

pub use energy::{soe_step, EnergyAccount};
pub use linearize::{continuous_jacobians, expm, linearize, linearize_with, Discretization, LinearModel, LINEARIZE_SUBSTEP};
pub use model::{integrate_step, propagate, state_derivative, terminal_voltage, BatteryState};
pub use params::{default_ocv, BatteryParams, OcvCurve, DEFAULT_ENERGY_NOMINAL};
pub use perturb::{make_perturbed_plant, Perturbation};

/// Free-function form of [`OcvCurve::eval`].
pub fn ocv_interpolate(soc: f64, curve: &OcvCurve) -> f64 {
    curve.eval(soc)
}
