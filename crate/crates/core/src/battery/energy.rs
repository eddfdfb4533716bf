use serde::{Deserialize, Serialize};

use super::BatteryParams;
use crate::error::{Error, Result};

/// Running energy bookkeeping. `extracted` is the efficiency-weighted
/// terminal energy, so `soe == 1 - extracted / energy_nominal` holds exactly
/// up to rounding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyAccount {
    /// Cumulative extracted energy (J).
    pub extracted: f64,
    pub soe: f64,
}

impl Default for EnergyAccount {
    fn default() -> Self {
        Self::full()
    }
}

impl EnergyAccount {
    pub fn full() -> Self {
        Self { extracted: 0.0, soe: 1.0 }
    }
}

/// Rectangle-rule update `SoE(k) = SoE(k-1) - eta V(k-1) I(k-1) dt / En`.
pub fn soe_step(account: &EnergyAccount, v_prev: f64, i_prev: f64, dt: f64, params: &BatteryParams) -> Result<EnergyAccount> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be > 0 (got {dt})")));
    }
    let de = params.eta * v_prev * i_prev * dt;
    let extracted = account.extracted + de;
    Ok(EnergyAccount { extracted, soe: 1.0 - extracted / params.energy_nominal })
}
