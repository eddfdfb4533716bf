use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::battery::{BatteryParams, BatteryState, linearize, propagate, terminal_voltage};
use crate::controllers::STATE_UNITS;
use crate::error::{Error, Result};
use crate::parallel::{Execution, map_range};
use crate::polytope::Polytope;

/// Seeded library of piecewise-constant random-walk current profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileLibrary {
    pub seed: u64,
    pub n_profiles: usize,
    /// Steps per profile.
    pub length: usize,
    pub u_max: f64,
    /// Standard deviation of a random-walk increment (A).
    pub step_std: f64,
    /// Probability per step of jumping to a fresh uniform level.
    pub jump_probability: f64,
}

impl Default for ProfileLibrary {
    fn default() -> Self {
        Self { seed: 7, n_profiles: 24, length: 720, u_max: 40.0, step_std: 2.0, jump_probability: 0.02 }
    }
}

impl ProfileLibrary {
    pub fn profile(&self, index: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64));
        let mut u = rng.random_range(0.0..=self.u_max);
        (0..self.length)
            .map(|_| {
                if rng.random_bool(self.jump_probability.clamp(0.0, 1.0)) {
                    u = rng.random_range(0.0..=self.u_max);
                } else {
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    u = (u + self.step_std * z).clamp(0.0, self.u_max);
                }
                u
            })
            .collect()
    }
}

/// Per-coordinate `max |w|` (scaled units) of the one-step residuals
/// `w = x_plant(k+1) − x̂(k+1)`, where `x̂(k+1)` is the model linearized at
/// `(x(k), u(k−1))` and driven by `u(k)`.
pub fn residual_extent(
    plant: &BatteryParams,
    model: &BatteryParams,
    library: &ProfileLibrary,
    dt: f64,
    exec: Execution,
) -> Result<[f64; 4]> {
    if library.n_profiles == 0 || library.length == 0 {
        return Err(Error::InvalidArgument("profile library is empty".into()));
    }
    let per_profile: Vec<Result<[f64; 4]>> = map_range(exec, library.n_profiles, |i| {
        let profile = library.profile(i);
        let mut x = BatteryState::full(plant.t_ambient);
        // The opening level counts as already flowing, so the first residual
        // is not a rest-to-load jump the closed loop never makes.
        let mut u_prev = profile[0];
        let mut worst = [0.0f64; 4];
        for &u in &profile {
            if x.soc <= 0.02 || terminal_voltage(&x, u, plant)? < model.ocv_curve.voltages()[0] {
                break;
            }
            let lin = linearize(&x, u_prev, dt, model)?;
            let predicted = lin.predict(&x.to_vector(), u);
            let next = propagate(&x, u, dt, 0.1, plant)?;
            let w = next.to_vector() - predicted;
            for j in 0..4 {
                worst[j] = worst[j].max((w[j] / STATE_UNITS[j]).abs());
            }
            x = next;
            u_prev = u;
        }
        Ok(worst)
    });
    let mut extent = [0.0f64; 4];
    for r in per_profile {
        let w = r?;
        for j in 0..4 {
            extent[j] = extent[j].max(w[j]);
        }
    }
    Ok(extent)
}

pub const RESIDUAL_FLOOR: f64 = 1e-6;

/// Symmetric box `±inflation · max|w|` in scaled coordinates, each
/// half-width at least [`RESIDUAL_FLOOR`].
pub fn identify_disturbance_set(
    plant: &BatteryParams,
    model: &BatteryParams,
    library: &ProfileLibrary,
    dt: f64,
    inflation: f64,
    exec: Execution,
) -> Result<Polytope> {
    if !(inflation >= 1.0) {
        return Err(Error::Config(format!("disturbance inflation must be >= 1 (got {inflation})")));
    }
    let extent = residual_extent(plant, model, library, dt, exec)?;
    let half: Vec<f64> = extent.iter().map(|e| (e * inflation).max(RESIDUAL_FLOOR)).collect();
    Polytope::symmetric_box(&half)
}

/// Terminal energy (J) of a slow constant-current discharge at `c_rate`
/// down to `v_cutoff`, followed by a constant-voltage hold until the
/// current decays to `cutoff_c_rate`; rectangle rule at `dt`.
pub fn reference_energy(params: &BatteryParams, c_rate: f64, v_cutoff: f64, cutoff_c_rate: f64, dt: f64) -> Result<f64> {
    if !(c_rate > 0.0 && cutoff_c_rate > 0.0 && cutoff_c_rate < c_rate && dt > 0.0) {
        return Err(Error::InvalidArgument("reference discharge needs 0 < cutoff < c_rate and dt > 0".into()));
    }
    let i_cc = c_rate * params.capacity_nominal;
    let i_end = cutoff_c_rate * params.capacity_nominal;
    let mut x = BatteryState::full(params.t_ambient);
    let mut energy = 0.0;
    let mut cv = false;
    let limit = (100.0 * 3600.0 / (c_rate * dt)) as usize;
    for _ in 0..limit {
        let mut i = i_cc;
        if !cv && terminal_voltage(&x, i, params)? <= v_cutoff {
            cv = true;
        }
        if cv {
            i = ((params.ocv(x.soc) - x.v1 - v_cutoff) / params.r0).clamp(0.0, i_cc);
            if i <= i_end {
                return Ok(energy);
            }
        }
        energy += terminal_voltage(&x, i, params)? * i * dt;
        x = propagate(&x, i, dt, dt.min(1.0), params)?;
    }
    Err(Error::Convergence("reference discharge did not terminate".into()))
}
