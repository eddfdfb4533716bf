use nalgebra::{DMatrix, Matrix4, SMatrix, Vector4};
use serde::{Deserialize, Serialize};

use super::{model, BatteryParams, BatteryState};
use crate::error::{Error, Result};

/// How the continuous Jacobian is turned into a discrete `(A, B)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Discretization {
    #[default]
    MatrixExponential,
    Euler,
}

/// Affine discrete model around an operating point:
/// `x(k+1) ≈ x_next + A (x - x_op) + B (u - u_op)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a_matrix: Matrix4<f64>,
    pub b_matrix: Vector4<f64>,
    pub x_op: BatteryState,
    pub u_op: f64,
    pub dt: f64,
    /// Nonlinear successor of the operating point over `dt`.
    pub x_next: Vector4<f64>,
}

impl LinearModel {
    pub fn predict(&self, x: &Vector4<f64>, u: f64) -> Vector4<f64> {
        self.x_next + self.a_matrix * (x - self.x_op.to_vector()) + self.b_matrix * (u - self.u_op)
    }

    /// Constant term `c` of the equivalent form `x+ = A x + B u + c`.
    pub fn offset(&self) -> Vector4<f64> {
        self.x_next - self.a_matrix * self.x_op.to_vector() - self.b_matrix * self.u_op
    }
}

/// Analytic continuous Jacobians `(∂f/∂x, ∂f/∂u)`.
pub fn continuous_jacobians(state: &BatteryState, current: f64, p: &BatteryParams) -> (Matrix4<f64>, Vector4<f64>) {
    let mut a = Matrix4::zeros();
    a[(1, 1)] = -1.0 / (p.r1 * p.c1);
    a[(2, 2)] = -1.0 / (p.r_u * p.c_s) - 1.0 / (p.r_c * p.c_s);
    a[(2, 3)] = 1.0 / (p.r_c * p.c_s);
    a[(3, 1)] = current / p.c_c;
    a[(3, 2)] = 1.0 / (p.r_c * p.c_c);
    a[(3, 3)] = -1.0 / (p.r_c * p.c_c);
    let b = Vector4::new(
        -1.0 / (3600.0 * p.capacity_nominal),
        1.0 / p.c1,
        0.0,
        (state.v1 + 2.0 * p.r0 * current) / p.c_c,
    );
    (a, b)
}

/// Sub-step used when integrating the operating point forward.
pub const LINEARIZE_SUBSTEP: f64 = 0.1;

pub fn linearize(state: &BatteryState, current: f64, dt: f64, params: &BatteryParams) -> Result<LinearModel> {
    linearize_with(state, current, dt, params, Discretization::MatrixExponential)
}

pub fn linearize_with(
    state: &BatteryState,
    current: f64,
    dt: f64,
    params: &BatteryParams,
    method: Discretization,
) -> Result<LinearModel> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt must be > 0 (got {dt})")));
    }
    if !state.is_finite() || !current.is_finite() {
        return Err(Error::InvalidArgument("non-finite operating point".into()));
    }
    let (jx, ju) = continuous_jacobians(state, current, params);
    let (a, b) = match method {
        Discretization::Euler => (Matrix4::identity() + jx * dt, ju * dt),
        Discretization::MatrixExponential => {
            // exp([[Jx, Ju], [0, 0]] dt) = [[A, B], [0, 1]]
            let mut aug = SMatrix::<f64, 5, 5>::zeros();
            aug.fixed_view_mut::<4, 4>(0, 0).copy_from(&jx);
            aug.fixed_view_mut::<4, 1>(0, 4).copy_from(&ju);
            let e = expm(&DMatrix::from_column_slice(5, 5, (aug * dt).as_slice()));
            let mut a = Matrix4::zeros();
            let mut b = Vector4::zeros();
            for i in 0..4 {
                for j in 0..4 {
                    a[(i, j)] = e[(i, j)];
                }
                b[i] = e[(i, 4)];
            }
            (a, b)
        }
    };
    let x_next = model::propagate(state, current, dt, LINEARIZE_SUBSTEP, params)?.to_vector();
    Ok(LinearModel { a_matrix: a, b_matrix: b, x_op: *state, u_op: current, dt, x_next })
}

/// Matrix exponential by scaling and squaring with a degree-13 Padé
/// approximant (Higham 2005 coefficients).
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    const THETA_13: f64 = 5.371920351148152;
    let n = m.nrows();
    let norm1 = (0..n).map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let s = if norm1 > THETA_13 { (norm1 / THETA_13).log2().ceil() as i32 } else { 0 };
    let a = m / 2f64.powi(s);
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * B[13] + &a4 * B[11] + &a2 * B[9]) + &a6 * B[7] + &a4 * B[5] + &a2 * B[3] + &id * B[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * B[12] + &a4 * B[10] + &a2 * B[8]) + &a6 * B[6] + &a4 * B[4] + &a2 * B[2] + &id * B[0];
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.lu().solve(&p).expect("Padé denominator is nonsingular after scaling");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}
