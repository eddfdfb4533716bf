use nalgebra::Vector4;
use serde::{Deserialize, Serialize};

use super::BatteryParams;
use crate::error::{Error, Result};

/// `[SoC, V1, Ts, Tc]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryState {
    pub soc: f64,
    /// RC-pair voltage (V).
    pub v1: f64,
    /// Surface temperature (°C).
    pub t_s: f64,
    /// Core temperature (°C).
    pub t_c: f64,
}

impl BatteryState {
    pub const DIM: usize = 4;

    pub fn new(soc: f64, v1: f64, t_s: f64, t_c: f64) -> Self {
        Self { soc, v1, t_s, t_c }
    }

    /// Fully charged cell at rest at `t_ambient`.
    pub fn full(t_ambient: f64) -> Self {
        Self::new(1.0, 0.0, t_ambient, t_ambient)
    }

    pub fn to_vector(self) -> Vector4<f64> {
        Vector4::new(self.soc, self.v1, self.t_s, self.t_c)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn is_finite(&self) -> bool {
        self.soc.is_finite() && self.v1.is_finite() && self.t_s.is_finite() && self.t_c.is_finite()
    }

    fn check(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("non-finite state {self:?}")))
        }
    }
}

fn check_current(current: f64) -> Result<()> {
    if current.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("non-finite current {current}")))
    }
}

/// Right-hand side of the electrothermal model with discharge current
/// positive. The core heat source is `I * (V1 + R0 * I)`.
#[inline]
fn rhs(x: &Vector4<f64>, current: f64, p: &BatteryParams) -> Vector4<f64> {
    let (v1, ts, tc) = (x[1], x[2], x[3]);
    Vector4::new(
        -current / (3600.0 * p.capacity_nominal),
        -v1 / (p.r1 * p.c1) + current / p.c1,
        (p.t_ambient - ts) / (p.r_u * p.c_s) - (ts - tc) / (p.r_c * p.c_s),
        (ts - tc) / (p.r_c * p.c_c) + current * (v1 + p.r0 * current) / p.c_c,
    )
}

pub fn state_derivative(state: &BatteryState, current: f64, params: &BatteryParams) -> Result<Vector4<f64>> {
    state.check()?;
    check_current(current)?;
    Ok(rhs(&state.to_vector(), current, params))
}

/// `V = ocv(SoC) - V1 - R0 * I`.
pub fn terminal_voltage(state: &BatteryState, current: f64, params: &BatteryParams) -> Result<f64> {
    state.check()?;
    check_current(current)?;
    Ok(params.ocv(state.soc) - state.v1 - params.r0 * current)
}

/// One classical RK4 step with the current held, SoC clamped to `[0, 1]`.
pub fn integrate_step(state: &BatteryState, current: f64, dt: f64, params: &BatteryParams) -> Result<BatteryState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt must be > 0 (got {dt})")));
    }
    state.check()?;
    check_current(current)?;
    let x = state.to_vector();
    let k1 = rhs(&x, current, params);
    let k2 = rhs(&(x + k1 * (0.5 * dt)), current, params);
    let k3 = rhs(&(x + k2 * (0.5 * dt)), current, params);
    let k4 = rhs(&(x + k3 * dt), current, params);
    let mut next = BatteryState::from_vector(&(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)));
    if !next.is_finite() {
        return Err(Error::NumericalBlowup { state: next });
    }
    next.soc = next.soc.clamp(0.0, 1.0);
    Ok(next)
}

/// Integrate over `duration` with RK4 sub-steps no longer than `max_step`.
pub fn propagate(
    state: &BatteryState,
    current: f64,
    duration: f64,
    max_step: f64,
    params: &BatteryParams,
) -> Result<BatteryState> {
    if !(max_step > 0.0) {
        return Err(Error::InvalidArgument(format!("max_step must be > 0 (got {max_step})")));
    }
    let n = (duration / max_step - 1e-9).ceil().max(1.0) as usize;
    let h = duration / n as f64;
    let mut x = *state;
    for _ in 0..n {
        x = integrate_step(&x, current, h, params)?;
    }
    Ok(x)
}
