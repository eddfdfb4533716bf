use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::polytope::spectral_radius;

const MAX_DOUBLINGS: usize = 80;
const REL_TOL: f64 = 1e-10;

/// Stabilizing solution `P` of `P = AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA + Q`,
/// found with the structure-preserving doubling iteration.
pub fn solve_dare(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Synthesis("input weight is singular".into()))?;
    let mut ak = a.clone();
    let mut gk = b * r_inv * b.transpose();
    let mut hk = q.clone();
    let eye = DMatrix::<f64>::identity(n, n);
    for _ in 0..MAX_DOUBLINGS {
        let w = &eye + &gk * &hk;
        let w_inv = w
            .try_inverse()
            .ok_or_else(|| Error::Synthesis("Riccati doubling hit a singular step".into()))?;
        let a_w = &ak * &w_inv;
        let a_next = &a_w * &ak;
        let g_next = &gk + &a_w * &gk * ak.transpose();
        let h_next = &hk + ak.transpose() * &hk * &w_inv * &ak;
        let change = (&h_next - &hk).amax();
        let scale = h_next.amax().max(1e-300);
        ak = a_next;
        gk = (&g_next + g_next.transpose()) * 0.5;
        hk = (&h_next + h_next.transpose()) * 0.5;
        if !hk.iter().all(|v| v.is_finite()) {
            return Err(Error::Synthesis("Riccati iteration diverged".into()));
        }
        if change <= REL_TOL * scale {
            return Ok(hk);
        }
    }
    Err(Error::Synthesis("Riccati iteration did not converge".into()))
}

/// Discrete LQR row `K` for `u = K x`, so that `A + B K` is Schur.
pub fn lqr_gain(a: &DMatrix<f64>, b: &DVector<f64>, q: &DMatrix<f64>, r: f64) -> Result<DVector<f64>> {
    let bm = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    let p = solve_dare(a, &bm, q, &DMatrix::from_element(1, 1, r))?;
    let denom = r + (bm.transpose() * &p * &bm)[(0, 0)];
    let k: DVector<f64> = -(a.transpose() * &p * b) / denom;
    let closed = a + b * k.transpose();
    let rho = spectral_radius(&closed);
    if !(rho < 1.0) {
        return Err(Error::NotSchurStable(rho));
    }
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_closed_form() {
        let (a, b, q, r) = (1.2f64, 1.0f64, 1.0f64, 1.0f64);
        // b²p² + (r(1 − a²) − q b²) p − q r = 0
        let c1 = r * (1.0 - a * a) - q * b * b;
        let p = (-c1 + (c1 * c1 + 4.0 * b * b * q * r).sqrt()) / (2.0 * b * b);
        let k_exact = -a * b * p / (r + b * b * p);
        let k = lqr_gain(
            &DMatrix::from_element(1, 1, a),
            &DVector::from_element(1, b),
            &DMatrix::from_element(1, 1, q),
            r,
        )
        .unwrap();
        assert!((k[0] - k_exact).abs() < 1e-9);
    }

    #[test]
    fn zero_input_on_schur_plant() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.3]);
        let k = lqr_gain(&a, &DVector::zeros(2), &DMatrix::identity(2, 2), 1.0).unwrap();
        assert!(k.amax() == 0.0);
    }

    #[test]
    fn unstabilizable_rejected() {
        let a = DMatrix::from_element(1, 1, 1.5);
        assert!(lqr_gain(&a, &DVector::zeros(1), &DMatrix::identity(1, 1), 1.0).is_err());
    }
}
