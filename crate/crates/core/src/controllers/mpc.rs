//! Tube-based robust MPC: LQR ancillary gain, minimal RPI tube, tightened
//! constraints, and a condensed QP over the nominal initial state and the
//! nominal input sequence.
//!
//! All set computations happen in scaled coordinates `x / STATE_UNITS`.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use super::lqr::lqr_gain;
use super::qp::{QpProblem, QpSettings, QpStatus, WarmStart, qp_solve_with};
use super::{Controller, ControllerCommand, Diagnostics, Observation};
use crate::battery::{BatteryParams, BatteryState, Discretization, LinearModel, linearize_with};
use crate::error::{Error, Result};
use crate::polytope::{Polytope, RpiResult, compute_mrpi_capped, spectral_radius};

/// Units of one scaled coordinate: SoC, 0.1 V, 10 °C, 10 °C.
pub const STATE_UNITS: [f64; 4] = [1.0, 0.1, 10.0, 10.0];

const NOMINAL_PULL: f64 = 1e9;
const TUBE_TOL: f64 = 1e-6;

fn scale_matrix() -> Matrix4<f64> {
    Matrix4::from_diagonal(&Vector4::from_iterator(STATE_UNITS.iter().map(|u| 1.0 / u)))
}

fn to_scaled(x: &Vector4<f64>) -> DVector<f64> {
    DVector::from_iterator(4, x.iter().zip(STATE_UNITS).map(|(v, u)| v / u))
}

fn scaled_model(model: &LinearModel) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let s = scale_matrix();
    let s_inv = Matrix4::from_diagonal(&Vector4::from(STATE_UNITS));
    let a = s * model.a_matrix * s_inv;
    let b = s * model.b_matrix;
    let c = s * model.offset();
    (
        DMatrix::from_column_slice(4, 4, a.as_slice()),
        DVector::from_column_slice(b.as_slice()),
        DVector::from_column_slice(c.as_slice()),
    )
}

/// Synthesis knobs; everything not derived from the sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcSettings {
    pub horizon: usize,
    pub dt: f64,
    /// Output weight on `[SoE, Tc]`.
    pub q_weight: [f64; 2],
    pub r_weight: f64,
    /// Optional penalty on nominal input increments.
    pub du_weight: f64,
    pub rate_limit: f64,
    pub y_target: [f64; 2],
    pub t_max: f64,
    pub u_max: f64,
    /// LQR weights on scaled states and the input.
    pub lqr_state_weight: [f64; 4],
    pub lqr_input_weight: f64,
    /// Closed-loop eigenvalues of the ancillary loop are kept inside this
    /// radius (`1.0` gives the plain LQR).
    pub lqr_decay: f64,
    pub epsilon: f64,
    pub max_rpi_steps: usize,
    /// Linearization point used for the gain and the tube.
    pub synthesis_soc: f64,
    pub synthesis_t_c: f64,
    pub synthesis_current: f64,
    pub discretization: Discretization,
}

impl Default for MpcSettings {
    fn default() -> Self {
        Self {
            horizon: 10,
            dt: 20.0,
            q_weight: [1e4, 1e4],
            r_weight: 1.0,
            du_weight: 0.0,
            rate_limit: 1.0,
            y_target: [0.0, 40.0],
            t_max: 40.0,
            u_max: 40.0,
            lqr_state_weight: [1.0, 1.0, 1.0, 100.0],
            lqr_input_weight: 1.0,
            lqr_decay: 0.97,
            epsilon: 1e-3,
            max_rpi_steps: crate::polytope::DEFAULT_MAX_STEPS,
            synthesis_soc: 0.5,
            synthesis_t_c: 35.0,
            synthesis_current: 30.0,
            discretization: Discretization::MatrixExponential,
        }
    }
}

impl MpcSettings {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("mpc horizon must be >= 1".into()));
        }
        let nonneg = [
            ("q_weight[0]", self.q_weight[0]),
            ("q_weight[1]", self.q_weight[1]),
            ("r_weight", self.r_weight),
            ("du_weight", self.du_weight),
            ("rate_limit", self.rate_limit),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("mpc {name} must be finite and >= 0")));
            }
        }
        if !(self.dt > 0.0 && self.u_max > 0.0 && self.epsilon > 0.0 && self.lqr_input_weight > 0.0) {
            return Err(Error::Config("mpc dt, u_max, epsilon and lqr_input_weight must be positive".into()));
        }
        if !(self.lqr_decay > 0.0 && self.lqr_decay <= 1.0) {
            return Err(Error::Config("mpc lqr_decay must lie in (0, 1]".into()));
        }
        if self.lqr_state_weight.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("mpc lqr_state_weight entries must be >= 0".into()));
        }
        Ok(())
    }

    /// Operating point of the synthesis model with steady polarization and
    /// a surface temperature at the conduction divider.
    pub fn synthesis_state(&self, params: &BatteryParams) -> BatteryState {
        let t_s = (params.r_c * params.t_ambient + params.r_u * self.synthesis_t_c) / (params.r_u + params.r_c);
        BatteryState::new(self.synthesis_soc, params.r1 * self.synthesis_current, t_s, self.synthesis_t_c)
    }

    pub fn synthesis_model(&self, params: &BatteryParams) -> Result<LinearModel> {
        linearize_with(&self.synthesis_state(params), self.synthesis_current, self.dt, params, self.discretization)
    }
}

/// `ℒ` in scaled `(x, u)`: `0 <= SoC <= 1`, `Tc <= t_max`, `0 <= u <= u_max`.
pub fn admissible_set(t_max: f64, u_max: f64) -> Result<Polytope> {
    let mut a = DMatrix::zeros(5, 5);
    a[(0, 0)] = 1.0;
    a[(1, 0)] = -1.0;
    a[(2, 3)] = 1.0;
    a[(3, 4)] = 1.0;
    a[(4, 4)] = -1.0;
    let b = DVector::from_vec(vec![1.0, 0.0, t_max / STATE_UNITS[3], u_max, 0.0]);
    Polytope::new(a, b)
}

/// LQR row in physical units (`u = K x`) from weights on scaled states.
/// The design runs on `(A/λ, B/λ)`, which places every closed-loop
/// eigenvalue of `A + BK` inside radius `λ = decay`.
pub fn design_feedback_gain(model: &LinearModel, state_weight: &[f64; 4], input_weight: f64, decay: f64) -> Result<Vector4<f64>> {
    let (a, b, _) = scaled_model(model);
    let q = DMatrix::from_diagonal(&DVector::from_column_slice(state_weight));
    let k_scaled = lqr_gain(&(a.clone() / decay), &(b.clone() / decay), &q, input_weight)?;
    let rho = spectral_radius(&(&a + &b * k_scaled.transpose()));
    if !(rho < 1.0) {
        return Err(Error::NotSchurStable(rho));
    }
    Ok(Vector4::from_iterator(k_scaled.iter().zip(STATE_UNITS).map(|(k, u)| k / u)))
}

#[derive(Debug, Clone)]
pub struct MpcConfig {
    pub horizon: usize,
    pub q_weight: [f64; 2],
    pub r_weight: f64,
    pub du_weight: f64,
    /// Ancillary gain in physical units.
    pub k_gain: Vector4<f64>,
    /// The same gain acting on scaled states.
    pub k_scaled: DVector<f64>,
    /// Closed-loop matrix `A + B K` in scaled coordinates.
    pub a_closed: DMatrix<f64>,
    pub rpi: RpiResult,
    /// Interval `Kℛ` of input corrections.
    pub k_rpi: (f64, f64),
    pub tightened: Polytope,
    pub rate_limit: f64,
    pub y_target: [f64; 2],
    pub dt: f64,
    pub u_max: f64,
    pub discretization: Discretization,
}

pub fn synthesize_mpc(model: &LinearModel, constraints: &Polytope, w_set: &Polytope, settings: &MpcSettings) -> Result<MpcConfig> {
    settings.validate()?;
    if constraints.dim() != 5 || w_set.dim() != 4 {
        return Err(Error::DimensionMismatch { expected: 5, got: constraints.dim() });
    }
    let k_gain = design_feedback_gain(model, &settings.lqr_state_weight, settings.lqr_input_weight, settings.lqr_decay)?;
    let k_scaled = DVector::from_iterator(4, k_gain.iter().zip(STATE_UNITS).map(|(k, u)| k * u));
    let (a, b, _) = scaled_model(model);
    let a_k = &a + &b * k_scaled.transpose();
    let rpi = compute_mrpi_capped(&a_k, w_set, settings.epsilon, settings.max_rpi_steps)?;
    let k_row = DMatrix::from_row_slice(1, 4, k_scaled.as_slice());
    let k_set = rpi.set.linear_map(&k_row)?;
    let hi = k_set.support(&DVector::from_element(1, 1.0))?;
    let lo = -k_set.support(&DVector::from_element(1, -1.0))?;
    let tube = rpi.set.cartesian_product(&k_set)?;
    let tightened = constraints.pontryagin_diff(&tube)?;
    Ok(MpcConfig {
        horizon: settings.horizon,
        q_weight: settings.q_weight,
        r_weight: settings.r_weight,
        du_weight: settings.du_weight,
        k_gain,
        k_scaled,
        a_closed: a_k,
        rpi,
        k_rpi: (lo, hi),
        tightened,
        rate_limit: settings.rate_limit,
        y_target: settings.y_target,
        dt: settings.dt,
        u_max: settings.u_max,
        discretization: settings.discretization,
    })
}

/// Previous nominal plan carried between steps.
#[derive(Debug, Clone, Default)]
pub struct MpcMemory {
    /// Nominal input sequence of the last accepted plan.
    pub u_plan: Vec<f64>,
    /// Predicted nominal state one step ahead (scaled).
    pub x_next: Option<DVector<f64>>,
    /// Previously applied nominal input `ū(0)`.
    pub u_nominal_prev: Option<f64>,
    pub tube_violations: usize,
    pub fallbacks: usize,
}

/// Condensed prediction: `x̄(i) = Φ_i z + φ_i` with `z = [x̄(0); ū]`.
fn predictions(a: &DMatrix<f64>, b: &DVector<f64>, c: &DVector<f64>, n: usize) -> Vec<(DMatrix<f64>, DVector<f64>)> {
    let nz = 4 + n;
    let mut phi = DMatrix::zeros(4, nz);
    phi.view_mut((0, 0), (4, 4)).fill_with_identity();
    let mut out = vec![(phi, DVector::zeros(4))];
    for i in 0..n {
        let (p, f) = &out[i];
        let mut p_next = a * p;
        for r in 0..4 {
            p_next[(r, 4 + i)] += b[r];
        }
        let f_next = a * f + c;
        out.push((p_next, f_next));
    }
    out
}

/// One receding-horizon decision from the estimate `x_est`.
pub fn mpc_step(
    x_est: &BatteryState,
    soe: f64,
    v_measured: f64,
    cfg: &MpcConfig,
    model: &LinearModel,
    params: &BatteryParams,
    memory: &mut MpcMemory,
) -> Result<ControllerCommand> {
    if !x_est.is_finite() || !soe.is_finite() || !v_measured.is_finite() {
        return Err(Error::ControllerFault("non-finite controller input".into()));
    }
    let n = cfg.horizon;
    let nz = 4 + n;
    let (a, b, c) = scaled_model(model);
    let pred = predictions(&a, &b, &c, n);
    let x_hat = to_scaled(&x_est.to_vector());
    let u_prev_nom = memory.u_nominal_prev.unwrap_or(cfg.u_max - cfg.k_rpi.1);

    let mut h = DMatrix::zeros(nz, nz);
    let mut g = DVector::zeros(nz);
    let mut add_square = |m: &DVector<f64>, c0: f64, w: f64| {
        h += m * m.transpose() * (2.0 * w);
        g += m * (2.0 * w * c0);
    };
    let gain = params.eta * v_measured * cfg.dt / params.energy_nominal;
    for i in 1..=n {
        let mut m = DVector::zeros(nz);
        for j in 0..i {
            m[4 + j] = gain;
        }
        add_square(&m, cfg.y_target[0] - soe, cfg.q_weight[0]);
        let (p, f) = &pred[i];
        // Output cost in °C, the same units as the target.
        let m = -p.row(3).transpose() * STATE_UNITS[3];
        add_square(&m, cfg.y_target[1] - f[3] * STATE_UNITS[3], cfg.q_weight[1]);
    }
    for j in 0..n {
        let mut m = DVector::zeros(nz);
        m[4 + j] = 1.0;
        add_square(&m, 0.0, cfg.r_weight);
        if cfg.du_weight > 0.0 {
            let mut d = DVector::zeros(nz);
            d[4 + j] = 1.0;
            let c0 = if j == 0 { -u_prev_nom } else { 0.0 };
            if j > 0 {
                d[3 + j] = -1.0;
            }
            add_square(&d, c0, cfg.du_weight);
        }
    }
    for r in 0..4 {
        let mut m = DVector::zeros(nz);
        m[r] = 1.0;
        add_square(&m, -x_hat[r], NOMINAL_PULL);
    }

    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    let r_set = &cfg.rpi.set;
    for k in 0..r_set.n_constraints() {
        let f = r_set.row(k);
        let mut row = DVector::zeros(nz);
        row.rows_mut(0, 4).copy_from(&(-&f));
        rows.push((row, r_set.b_vector()[k] - f.dot(&x_hat)));
    }
    let lt = &cfg.tightened;
    for k in 0..lt.n_constraints() {
        let full = lt.row(k);
        let ax = full.rows(0, 4).into_owned();
        let au = full[4];
        let bk = lt.b_vector()[k];
        let last = if au == 0.0 { n } else { n - 1 };
        for (i, (p, f)) in pred.iter().enumerate().take(last + 1) {
            let mut row = p.transpose() * &ax;
            if i < n {
                row[4 + i] += au;
            }
            rows.push((row, bk - ax.dot(f)));
        }
    }
    for j in 0..n {
        let mut up = DVector::zeros(nz);
        up[4 + j] = 1.0;
        let mut bound = cfg.rate_limit;
        if j == 0 {
            bound += u_prev_nom;
        } else {
            up[3 + j] = -1.0;
        }
        let down_bound = if j == 0 { cfg.rate_limit - u_prev_nom } else { cfg.rate_limit };
        rows.push((-&up, down_bound));
        rows.push((up, bound));
    }
    let mut ga = DMatrix::zeros(rows.len(), nz);
    let mut gb = DVector::zeros(rows.len());
    for (i, (r, bi)) in rows.iter().enumerate() {
        ga.set_row(i, &r.transpose());
        gb[i] = *bi;
    }
    let qp = QpProblem::new((&h + h.transpose()) * 0.5, g).with_inequalities(ga, gb);

    let mut warm = DVector::zeros(nz);
    warm.rows_mut(0, 4).copy_from(memory.x_next.as_ref().unwrap_or(&x_hat));
    for j in 0..n {
        let shifted = memory.u_plan.get(j + 1).or(memory.u_plan.last()).copied().unwrap_or(u_prev_nom);
        warm[4 + j] = shifted;
    }
    let sol = qp_solve_with(&qp, &QpSettings::default(), &WarmStart { x: Some(warm), y: None })?;

    let (x_bar0, u_bar0, iterations, fallback) = match sol.status {
        QpStatus::Solved => {
            let x_bar0 = sol.x.rows(0, 4).into_owned();
            let (p1, f1) = &pred[1];
            memory.x_next = Some(p1 * &sol.x + f1);
            memory.u_plan = sol.x.rows(4, n).iter().copied().collect();
            // The splitting solver meets the rate rows only to its tolerance.
            let u_bar0 = sol.x[4].clamp(u_prev_nom - cfg.rate_limit, u_prev_nom + cfg.rate_limit);
            (x_bar0, u_bar0, sol.iterations, false)
        }
        QpStatus::PrimalInfeasible | QpStatus::DualInfeasible => {
            memory.fallbacks += 1;
            let x_bar0 = memory.x_next.clone().unwrap_or_else(|| x_hat.clone());
            let u_bar0 = memory.u_plan.get(1).or(memory.u_plan.last()).copied().unwrap_or(u_prev_nom);
            memory.x_next = Some(&a * &x_bar0 + &b * u_bar0 + &c);
            if !memory.u_plan.is_empty() {
                memory.u_plan.remove(0);
            }
            (x_bar0, u_bar0, sol.iterations, true)
        }
        QpStatus::MaxIterations => {
            return Err(Error::ControllerFault(format!(
                "QP iteration cap reached after {} iterations (objective {:.6e}, max violation {:.3e})",
                sol.iterations,
                sol.objective,
                qp.max_violation(&sol.x)
            )));
        }
    };
    memory.u_nominal_prev = Some(u_bar0);
    let error = &x_hat - &x_bar0;
    let contained = r_set.contains(&error, TUBE_TOL)?;
    if !contained {
        memory.tube_violations += 1;
    }
    let u = u_bar0 + cfg.k_scaled.dot(&error);
    let diagnostics = Diagnostics {
        phase: if fallback { "fallback" } else { "mpc" },
        nominal_current: u_bar0,
        qp_iterations: iterations,
        tube_contained: Some(contained),
        fallback,
    };
    Ok(ControllerCommand::saturated(u, cfg.u_max, diagnostics))
}

/// Relinearizes at `(x̂, u_prev)` and runs [`mpc_step`].
#[derive(Debug, Clone)]
pub struct MpcController {
    pub cfg: MpcConfig,
    pub params: BatteryParams,
    pub memory: MpcMemory,
}

impl MpcController {
    pub fn new(cfg: MpcConfig, params: BatteryParams) -> Self {
        Self { cfg, params, memory: MpcMemory::default() }
    }
}

impl Controller for MpcController {
    fn step(&mut self, obs: &Observation) -> Result<ControllerCommand> {
        let model = linearize_with(&obs.x_hat, obs.u_prev, self.cfg.dt, &self.params, self.cfg.discretization)?;
        mpc_step(&obs.x_hat, obs.soe, obs.v_measured, &self.cfg, &model, &self.params, &mut self.memory)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn admissible_set_shape() {
        let l = admissible_set(40.0, 40.0).unwrap();
        assert_eq!(l.n_constraints(), 5);
        assert_eq!(l.dim(), 5);
    }

    #[test]
    fn default_gain_is_stabilizing() {
        let params = BatteryParams::default();
        let s = MpcSettings::default();
        let model = s.synthesis_model(&params).unwrap();
        let k = design_feedback_gain(&model, &s.lqr_state_weight, s.lqr_input_weight, s.lqr_decay).unwrap();
        let closed = model.a_matrix + model.b_matrix * k.transpose();
        let rho = spectral_radius(&DMatrix::from_column_slice(4, 4, closed.as_slice()));
        assert!(rho <= s.lqr_decay + 1e-9);
    }

    #[test]
    fn zero_disturbance_leaves_constraints_untouched() {
        let params = BatteryParams::default();
        let s = MpcSettings::default();
        let model = s.synthesis_model(&params).unwrap();
        let l = admissible_set(40.0, 40.0).unwrap();
        let cfg = synthesize_mpc(&model, &l, &Polytope::point(&[0.0; 4]).unwrap(), &s).unwrap();
        assert_eq!(cfg.tightened, l);
        assert_eq!(cfg.k_rpi, (0.0, 0.0));
    }
}
