//! Extended Kalman filter over `x = [SoC, V1, Ts, Tc]` from the measured
//! output `z = [Ts, V]`, relinearized at every predict step.

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Matrix4x2, SymmetricEigen, Vector2};
use serde::{Deserialize, Serialize};

use crate::battery::{self, linearize, soe_step, BatteryParams, BatteryState, EnergyAccount, LinearModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanConfig {
    pub process_cov: Matrix4<f64>,
    pub measurement_cov: Matrix2<f64>,
    pub initial_cov: Matrix4<f64>,
}

/// Diagonal form used by the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KalmanDiag {
    pub process: [f64; 4],
    pub measurement: [f64; 2],
    pub initial: [f64; 4],
}

impl Default for KalmanDiag {
    fn default() -> Self {
        Self {
            process: [1e-8, 1e-6, 1e-4, 1e-4],
            measurement: [0.05 * 0.05, 0.01 * 0.01],
            initial: [0.04, 1e-4, 1.0, 1.0],
        }
    }
}

impl TryFrom<&KalmanDiag> for KalmanConfig {
    type Error = Error;
    fn try_from(d: &KalmanDiag) -> Result<Self> {
        KalmanConfig::new(
            Matrix4::from_diagonal(&d.process.into()),
            Matrix2::from_diagonal(&d.measurement.into()),
            Matrix4::from_diagonal(&d.initial.into()),
        )
    }
}

impl Default for KalmanConfig {
    fn default() -> Self {
        KalmanConfig::try_from(&KalmanDiag::default()).expect("default covariances are valid")
    }
}

fn min_eig<const N: usize>(m: &nalgebra::SMatrix<f64, N, N>) -> f64 {
    let d = nalgebra::DMatrix::from_column_slice(N, N, m.as_slice());
    SymmetricEigen::new(d).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

fn is_symmetric<const N: usize>(m: &nalgebra::SMatrix<f64, N, N>, tol: f64) -> bool {
    (m - m.transpose()).abs().max() <= tol * m.abs().max().max(1.0)
}

impl KalmanConfig {
    pub fn new(process_cov: Matrix4<f64>, measurement_cov: Matrix2<f64>, initial_cov: Matrix4<f64>) -> Result<Self> {
        if !is_symmetric(&process_cov, 1e-12) || min_eig(&process_cov) < 0.0 {
            return Err(Error::Config("process covariance must be symmetric PSD".into()));
        }
        if !is_symmetric(&measurement_cov, 1e-12) || min_eig(&measurement_cov) <= 0.0 {
            return Err(Error::Config("measurement covariance must be symmetric PD".into()));
        }
        if !is_symmetric(&initial_cov, 1e-12) || min_eig(&initial_cov) <= 0.0 {
            return Err(Error::Config("initial covariance must be symmetric PD".into()));
        }
        Ok(Self { process_cov, measurement_cov, initial_cov })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub x_hat: BatteryState,
    pub p_cov: Matrix4<f64>,
    /// Model at the current estimate and the last applied input.
    pub model: LinearModel,
}

impl EstimatorState {
    pub fn new(x0: BatteryState, cfg: &KalmanConfig, u0: f64, dt: f64, params: &BatteryParams) -> Result<Self> {
        let model = linearize(&x0, u0, dt, params)?;
        Ok(Self { x_hat: x0, p_cov: cfg.initial_cov, model })
    }

    /// Symmetry within 1e-9 and eigenvalues >= -1e-9.
    pub fn covariance_is_valid(&self) -> bool {
        let p = &self.p_cov;
        (p - p.transpose()).abs().max() <= 1e-9 && min_eig(p) >= -1e-9
    }
}

/// Substep for propagating the estimate through the nonlinear model.
pub const PREDICT_SUBSTEP: f64 = 0.1;

pub fn kf_predict(est: &EstimatorState, u: f64, params: &BatteryParams, dt: f64, cfg: &KalmanConfig) -> Result<EstimatorState> {
    let lm = linearize(&est.x_hat, u, dt, params)?;
    let x_hat = battery::propagate(&est.x_hat, u, dt, PREDICT_SUBSTEP, params)?;
    let a = lm.a_matrix;
    let mut p_cov = a * est.p_cov * a.transpose() + cfg.process_cov;
    p_cov = 0.5 * (p_cov + p_cov.transpose());
    let model = linearize(&x_hat, u, dt, params)?;
    Ok(EstimatorState { x_hat, p_cov, model })
}

/// Predicted measurement `[Ts, V]` and its Jacobian.
pub fn measurement_model(x: &BatteryState, u: f64, params: &BatteryParams) -> (Vector2<f64>, Matrix2x4<f64>) {
    let v = params.ocv(x.soc) - x.v1 - params.r0 * u;
    let h = Matrix2x4::new(0.0, 0.0, 1.0, 0.0, params.ocv_curve.slope(x.soc), -1.0, 0.0, 0.0);
    (Vector2::new(x.t_s, v), h)
}

/// Measurement update with a Joseph-form covariance update.
pub fn kf_update(est: &EstimatorState, z_meas: [f64; 2], u: f64, params: &BatteryParams, cfg: &KalmanConfig) -> Result<EstimatorState> {
    if !z_meas.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite measurement {z_meas:?}")));
    }
    let (z_pred, h) = measurement_model(&est.x_hat, u, params);
    let innovation = Vector2::from(z_meas) - z_pred;
    let s = h * est.p_cov * h.transpose() + cfg.measurement_cov;
    let s_inv = s
        .cholesky()
        .ok_or_else(|| Error::EstimatorDegenerate(format!("innovation covariance not PD: {s:?}")))?
        .inverse();
    let gain: Matrix4x2<f64> = est.p_cov * h.transpose() * s_inv;
    let x = est.x_hat.to_vector() + gain * innovation;
    let ikh = Matrix4::identity() - gain * h;
    let mut p_cov = ikh * est.p_cov * ikh.transpose() + gain * cfg.measurement_cov * gain.transpose();
    p_cov = 0.5 * (p_cov + p_cov.transpose());
    let mut x_hat = BatteryState::from_vector(&x);
    x_hat.soc = x_hat.soc.clamp(-0.01, 1.01);
    Ok(EstimatorState { x_hat, p_cov, model: est.model.clone() })
}

/// SoE tracking from the measured terminal voltage and the applied current.
pub fn soe_tracker_step(account: &EnergyAccount, v_meas: f64, i_applied: f64, dt: f64, params: &BatteryParams) -> Result<EnergyAccount> {
    soe_step(account, v_meas, i_applied, dt, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (BatteryParams, KalmanConfig) {
        (BatteryParams::default(), KalmanConfig::default())
    }

    #[test]
    fn invalid_covariances_rejected() {
        let bad = Matrix2::new(1.0, 0.5, 0.0, 1.0);
        assert!(KalmanConfig::new(Matrix4::identity(), bad, Matrix4::identity()).is_err());
        assert!(KalmanConfig::new(-Matrix4::identity(), Matrix2::identity(), Matrix4::identity()).is_err());
    }

    #[test]
    fn predict_at_rest_keeps_estimate() {
        let (p, cfg) = setup();
        let x0 = BatteryState::new(0.6, 0.0, 20.0, 20.0);
        let est = EstimatorState::new(x0, &cfg, 0.0, 20.0, &p).unwrap();
        let next = kf_predict(&est, 0.0, &p, 20.0, &cfg).unwrap();
        assert_eq!(next.x_hat, x0);
    }

    #[test]
    fn zero_process_noise_contracts_trace() {
        let (p, mut cfg) = setup();
        cfg.process_cov = Matrix4::zeros();
        let x0 = BatteryState::new(0.6, 0.0, 20.0, 20.0);
        let est = EstimatorState::new(x0, &cfg, 0.0, 20.0, &p).unwrap();
        let next = kf_predict(&est, 0.0, &p, 20.0, &cfg).unwrap();
        assert!(next.p_cov.trace() <= est.p_cov.trace() + 1e-15);
    }

    #[test]
    fn zero_innovation_only_shrinks_covariance() {
        let (p, cfg) = setup();
        let x0 = BatteryState::new(0.55, 0.02, 25.0, 27.0);
        let est = EstimatorState::new(x0, &cfg, 10.0, 1.0, &p).unwrap();
        let (z, _) = measurement_model(&x0, 10.0, &p);
        let up = kf_update(&est, [z[0], z[1]], 10.0, &p, &cfg).unwrap();
        assert!((up.x_hat.to_vector() - x0.to_vector()).norm() < 1e-14);
        assert!(up.p_cov.trace() < est.p_cov.trace());
        assert!(up.covariance_is_valid());
    }

    #[test]
    fn huge_measurement_noise_is_a_no_op() {
        let (p, mut cfg) = setup();
        cfg.measurement_cov *= 1e12;
        let x0 = BatteryState::new(0.55, 0.02, 25.0, 27.0);
        let est = EstimatorState::new(x0, &cfg, 10.0, 1.0, &p).unwrap();
        let up = kf_update(&est, [26.0, 3.6], 10.0, &p, &cfg).unwrap();
        assert!((up.x_hat.to_vector() - x0.to_vector()).norm() < 1e-6);
        assert!((up.p_cov - est.p_cov).abs().max() < 1e-6);
    }

    #[test]
    fn non_finite_measurement_rejected() {
        let (p, cfg) = setup();
        let est = EstimatorState::new(BatteryState::full(20.0), &cfg, 0.0, 1.0, &p).unwrap();
        assert!(kf_update(&est, [f64::NAN, 3.6], 0.0, &p, &cfg).is_err());
    }

    #[test]
    fn singular_innovation_is_degenerate() {
        let (p, mut cfg) = setup();
        cfg.measurement_cov = Matrix2::zeros();
        let mut est = EstimatorState::new(BatteryState::full(20.0), &cfg, 0.0, 1.0, &p).unwrap();
        est.p_cov = Matrix4::zeros();
        assert!(matches!(kf_update(&est, [20.0, 4.2], 0.0, &p, &cfg), Err(Error::EstimatorDegenerate(_))));
    }
}
