//! Dense operator-splitting (ADMM) solver for convex quadratic programs
//!
//! `min ½ xᵀ H x + gᵀ x  s.t.  G x <= h,  E x = f`
//!
//! with Ruiz equilibration, adaptive penalty, active-set polishing and
//! certificate-based infeasibility detection.

use nalgebra::{DMatrix, DVector};

use super::dual_qp::dual_active_set;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub a_ineq: DMatrix<f64>,
    pub b_ineq: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem in `n` variables; add rows with the builders.
    pub fn new(hessian: DMatrix<f64>, gradient: DVector<f64>) -> Self {
        let n = gradient.len();
        Self {
            hessian,
            gradient,
            a_ineq: DMatrix::zeros(0, n),
            b_ineq: DVector::zeros(0),
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
        }
    }

    pub fn with_inequalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_ineq = a;
        self.b_ineq = b;
        self
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn n_vars(&self) -> usize {
        self.gradient.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.gradient.dot(x)
    }

    /// Largest violation over all constraints at `x`.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let ineq = (&self.a_ineq * x - &self.b_ineq).iter().copied().fold(0.0, f64::max);
        let eq = (&self.a_eq * x - &self.b_eq).amax();
        ineq.max(eq)
    }

    fn validate(&self) -> Result<()> {
        let n = self.n_vars();
        let dims_ok = self.hessian.shape() == (n, n)
            && self.a_ineq.ncols() == n
            && self.a_eq.ncols() == n
            && self.a_ineq.nrows() == self.b_ineq.len()
            && self.a_eq.nrows() == self.b_eq.len();
        if !dims_ok {
            return Err(Error::InvalidArgument("inconsistent QP dimensions".into()));
        }
        let finite = self
            .hessian
            .iter()
            .chain(self.gradient.iter())
            .chain(self.a_ineq.iter())
            .chain(self.a_eq.iter())
            .chain(self.b_eq.iter())
            .all(|v| v.is_finite())
            && self.b_ineq.iter().all(|v| !v.is_nan() && *v != f64::NEG_INFINITY);
        if !finite {
            return Err(Error::InvalidArgument("QP data must be finite".into()));
        }
        let asym = (&self.hessian - self.hessian.transpose()).amax();
        let scale = self.hessian.amax().max(1.0);
        if asym > 1e-9 * scale {
            return Err(Error::Synthesis(format!("QP hessian is not symmetric (asymmetry {asym:.3e})")));
        }
        if n > 0 {
            let min_eig = self.hessian.clone().symmetric_eigenvalues().min();
            if min_eig < -1e-9 * scale {
                return Err(Error::Synthesis(format!("QP hessian is not PSD (min eigenvalue {min_eig:.3e})")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    PrimalInfeasible,
    DualInfeasible,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers, inequality rows first, then equality rows.
    pub y: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub objective: f64,
    pub polished: bool,
}

#[derive(Debug, Clone)]
pub struct QpSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub eps_infeasible: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub adaptive_interval: usize,
    pub scaling_iters: usize,
    pub polish: bool,
    /// Fall back to an exact dual active-set solve when the iteration cap is hit.
    pub recover: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            eps_infeasible: 1e-7,
            max_iter: 20_000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            adaptive_interval: 25,
            scaling_iters: 10,
            polish: true,
            recover: true,
        }
    }
}

/// Optional starting point for `x` and the stacked multipliers `y`.
#[derive(Debug, Clone, Default)]
pub struct WarmStart {
    pub x: Option<DVector<f64>>,
    pub y: Option<DVector<f64>>,
}

pub fn qp_solve(qp: &QpProblem) -> Result<QpSolution> {
    qp_solve_with(qp, &QpSettings::default(), &WarmStart::default())
}

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_FACTOR: f64 = 1e3;
const INF_BOUND: f64 = 1e20;

/// Problem in `l <= A x <= u` form after Ruiz scaling:
/// `x = D x̂`, constraint rows scaled by `E`, cost by `c`.
struct Scaled {
    p: DMatrix<f64>,
    q: DVector<f64>,
    a: DMatrix<f64>,
    l: DVector<f64>,
    u: DVector<f64>,
    d: DVector<f64>,
    e: DVector<f64>,
    c: f64,
}

fn stack(qp: &QpProblem) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let n = qp.n_vars();
    let (mi, me) = (qp.a_ineq.nrows(), qp.a_eq.nrows());
    let mut a = DMatrix::zeros(mi + me, n);
    a.view_mut((0, 0), (mi, n)).copy_from(&qp.a_ineq);
    a.view_mut((mi, 0), (me, n)).copy_from(&qp.a_eq);
    let mut l = DVector::from_element(mi + me, -INF_BOUND);
    let mut u = DVector::zeros(mi + me);
    for i in 0..mi {
        u[i] = qp.b_ineq[i].min(INF_BOUND);
    }
    for i in 0..me {
        l[mi + i] = qp.b_eq[i];
        u[mi + i] = qp.b_eq[i];
    }
    (a, l, u)
}

fn ruiz(p: &DMatrix<f64>, q: &DVector<f64>, a: &DMatrix<f64>, l: &DVector<f64>, u: &DVector<f64>, iters: usize) -> Scaled {
    let (n, m) = (p.nrows(), a.nrows());
    let mut ps = p.clone();
    let mut qs = q.clone();
    let mut as_ = a.clone();
    let mut d = DVector::from_element(n, 1.0);
    let mut e = DVector::from_element(m, 1.0);
    let mut c = 1.0;
    let guard = |v: f64| if v < 1e-4 { 1.0 } else { v.min(1e4) };
    for _ in 0..iters {
        let mut dd = DVector::zeros(n);
        for j in 0..n {
            let col = ps.column(j).amax().max(as_.column(j).amax());
            dd[j] = 1.0 / guard(col).sqrt();
        }
        let mut ee = DVector::zeros(m);
        for i in 0..m {
            ee[i] = 1.0 / guard(as_.row(i).amax()).sqrt();
        }
        for j in 0..n {
            for i in 0..n {
                ps[(i, j)] *= dd[i] * dd[j];
            }
            for i in 0..m {
                as_[(i, j)] *= ee[i] * dd[j];
            }
            qs[j] *= dd[j];
        }
        d.component_mul_assign(&dd);
        e.component_mul_assign(&ee);
        let mean_col = if n > 0 { (0..n).map(|j| ps.column(j).amax()).sum::<f64>() / n as f64 } else { 1.0 };
        let gamma = 1.0 / guard(mean_col.max(qs.amax()));
        ps *= gamma;
        qs *= gamma;
        c *= gamma;
    }
    let scale_bound = |b: &DVector<f64>| {
        DVector::from_iterator(m, b.iter().zip(e.iter()).map(|(&bi, &ei)| if bi.abs() >= INF_BOUND { bi } else { bi * ei }))
    };
    Scaled { p: ps, q: qs, a: as_, l: scale_bound(l), u: scale_bound(u), d, e, c }
}

fn factor(p: &DMatrix<f64>, a: &DMatrix<f64>, rho: &DVector<f64>, sigma: f64) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let n = p.nrows();
    let mut k = p + DMatrix::identity(n, n) * sigma;
    let ra = DMatrix::from_fn(a.nrows(), n, |i, j| rho[i] * a[(i, j)]);
    k += a.transpose() * ra;
    k.cholesky().ok_or_else(|| Error::Synthesis("QP KKT matrix is not positive definite".into()))
}

fn project(v: &mut DVector<f64>, l: &DVector<f64>, u: &DVector<f64>) {
    for i in 0..v.len() {
        v[i] = v[i].clamp(l[i], u[i]);
    }
}

fn rho_vector(l: &DVector<f64>, u: &DVector<f64>, rho: f64) -> DVector<f64> {
    DVector::from_iterator(
        l.len(),
        l.iter().zip(u.iter()).map(|(&li, &ui)| {
            if li <= -INF_BOUND && ui >= INF_BOUND {
                RHO_MIN
            } else if (ui - li).abs() < 1e-12 {
                RHO_EQ_FACTOR * rho
            } else {
                rho
            }
        }),
    )
}

pub fn qp_solve_with(qp: &QpProblem, settings: &QpSettings, warm: &WarmStart) -> Result<QpSolution> {
    qp.validate()?;
    let n = qp.n_vars();
    let (a_raw, l_raw, u_raw) = stack(qp);
    let m = a_raw.nrows();
    let s = ruiz(&qp.hessian, &qp.gradient, &a_raw, &l_raw, &u_raw, settings.scaling_iters);

    let mut x = match &warm.x {
        Some(x0) if x0.len() == n => x0.component_div(&s.d),
        _ => DVector::zeros(n),
    };
    let mut y = match &warm.y {
        Some(y0) if y0.len() == m => y0.component_div(&s.e) * s.c,
        _ => DVector::zeros(m),
    };
    let mut z = &s.a * &x;
    project(&mut z, &s.l, &s.u);

    let mut rho = settings.rho;
    let mut rho_vec = rho_vector(&s.l, &s.u, rho);
    let mut chol = factor(&s.p, &s.a, &rho_vec, settings.sigma)?;

    let unscale_x = |xs: &DVector<f64>| xs.component_mul(&s.d);
    let unscale_y = |ys: &DVector<f64>| ys.component_mul(&s.e) / s.c;

    let mut status = QpStatus::MaxIterations;
    let mut iterations = settings.max_iter;
    for k in 1..=settings.max_iter {
        let x_prev = x.clone();
        let y_prev = y.clone();
        let z_prev = z.clone();

        let rhs = &x * settings.sigma - &s.q + s.a.transpose() * (rho_vec.component_mul(&z) - &y);
        let x_tilde = chol.solve(&rhs);
        let z_tilde = &s.a * &x_tilde;
        x = &x_tilde * settings.alpha + &x_prev * (1.0 - settings.alpha);
        let z_relaxed = &z_tilde * settings.alpha + &z_prev * (1.0 - settings.alpha);
        z = &z_relaxed + y.component_div(&rho_vec);
        project(&mut z, &s.l, &s.u);
        y += rho_vec.component_mul(&(&z_relaxed - &z));

        // Residuals are measured on the scaled problem.
        let ax = &s.a * &x;
        let px = &s.p * &x;
        let aty = s.a.transpose() * &y;
        let r_prim = (&ax - &z).amax();
        let r_dual = (&px + &s.q + &aty).amax();
        let eps_prim = settings.eps_abs + settings.eps_rel * ax.amax().max(z.amax());
        let eps_dual = settings.eps_abs + settings.eps_rel * px.amax().max(aty.amax()).max(s.q.amax());
        if r_prim <= eps_prim && r_dual <= eps_dual {
            status = QpStatus::Solved;
            iterations = k;
            break;
        }

        let dy = &y - &y_prev;
        if primal_infeasible(&s, &dy, settings.eps_infeasible) {
            status = QpStatus::PrimalInfeasible;
            iterations = k;
            break;
        }
        let dx = &x - &x_prev;
        if dual_infeasible(&s, &dx, settings.eps_infeasible) {
            status = QpStatus::DualInfeasible;
            iterations = k;
            break;
        }

        if settings.adaptive_interval > 0 && k % settings.adaptive_interval == 0 && m > 0 {
            let prim_norm = r_prim / (ax.amax().max(z.amax()) + 1e-10);
            let dual_norm = r_dual / (px.amax().max(aty.amax()).max(s.q.amax()) + 1e-10);
            let new_rho = (rho * (prim_norm / (dual_norm + 1e-30)).sqrt()).clamp(RHO_MIN, RHO_MAX);
            if new_rho > 5.0 * rho || new_rho < 0.2 * rho {
                rho = new_rho;
                rho_vec = rho_vector(&s.l, &s.u, rho);
                chol = factor(&s.p, &s.a, &rho_vec, settings.sigma)?;
            }
        }
    }

    let mut xu = unscale_x(&x);
    let mut yu = unscale_y(&y);
    let mut polished = false;
    if status == QpStatus::Solved && settings.polish {
        if let Some((xp, yp)) = polish(qp, &a_raw, &l_raw, &u_raw, &xu, &yu) {
            xu = xp;
            yu = yp;
            polished = true;
        }
    }
    if status == QpStatus::MaxIterations && settings.recover {
        let n_rows = qp.a_ineq.nrows() + qp.a_eq.nrows();
        if let Some(sol) = dual_active_set(qp, 10 * (qp.n_vars() + n_rows) + 100) {
            if kkt_satisfied(qp, &sol.x, &sol.y, 1e-6) {
                xu = sol.x;
                yu = sol.y;
                status = QpStatus::Solved;
                polished = true;
                iterations += sol.iterations;
            }
        }
    }
    let objective = match status {
        QpStatus::Solved | QpStatus::MaxIterations => qp.objective(&xu),
        QpStatus::PrimalInfeasible => f64::INFINITY,
        QpStatus::DualInfeasible => f64::NEG_INFINITY,
    };
    Ok(QpSolution { x: xu, y: yu, status, iterations, objective, polished })
}

fn primal_infeasible(s: &Scaled, dy: &DVector<f64>, eps: f64) -> bool {
    let norm = dy.amax();
    if norm < 1e-30 {
        return false;
    }
    let aty = s.a.transpose() * dy;
    let mut support = 0.0;
    for i in 0..dy.len() {
        if dy[i] > 0.0 {
            if s.u[i] >= INF_BOUND {
                return false;
            }
            support += s.u[i] * dy[i];
        } else if dy[i] < 0.0 {
            if s.l[i] <= -INF_BOUND {
                return false;
            }
            support += s.l[i] * dy[i];
        }
    }
    aty.amax() <= eps * norm && support < -eps * norm
}

fn dual_infeasible(s: &Scaled, dx: &DVector<f64>, eps: f64) -> bool {
    let norm = dx.amax();
    if norm < 1e-30 {
        return false;
    }
    if (&s.p * dx).amax() > eps * norm || s.q.dot(dx) >= -eps * norm {
        return false;
    }
    let adx = &s.a * dx;
    (0..adx.len()).all(|i| {
        let lo_ok = s.l[i] <= -INF_BOUND || adx[i] >= -eps * norm;
        let hi_ok = s.u[i] >= INF_BOUND || adx[i] <= eps * norm;
        lo_ok && hi_ok
    })
}

/// Solve the equality-constrained problem on the guessed active set and
/// keep it only if it is primal feasible, dual feasible and no worse.
/// First-order optimality at tolerance `tol`, relative to the data scale.
fn kkt_satisfied(qp: &QpProblem, x: &DVector<f64>, y: &DVector<f64>, tol: f64) -> bool {
    let mi = qp.a_ineq.nrows();
    let yi = y.rows(0, mi);
    let ye = y.rows(mi, qp.a_eq.nrows());
    let hx = &qp.hessian * x;
    let aty = qp.a_ineq.transpose() * yi + qp.a_eq.transpose() * ye;
    let stat = (&hx + &qp.gradient + &aty).amax();
    let stat_scale = 1.0 + hx.amax().max(qp.gradient.amax()).max(aty.amax());
    let ax = &qp.a_ineq * x;
    let prim_scale = 1.0 + ax.amax().max(qp.b_ineq.iter().filter(|b| b.is_finite()).fold(0.0, |m, b| m.max(b.abs())));
    let comp = (0..mi).all(|i| {
        let slack = qp.b_ineq[i] - ax[i];
        yi[i] >= -tol && (!slack.is_finite() || yi[i] * slack <= tol * stat_scale * prim_scale)
    });
    stat <= tol * stat_scale && qp.max_violation(x) <= tol * prim_scale && comp
}

fn polish(
    qp: &QpProblem,
    a: &DMatrix<f64>,
    l: &DVector<f64>,
    u: &DVector<f64>,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = qp.n_vars();
    let ax = a * x;
    let tol = 1e-7;
    let active: Vec<(usize, f64)> = (0..a.nrows())
        .filter_map(|i| {
            let at_upper = u[i] < INF_BOUND && (u[i] - ax[i]).abs() < tol * (1.0 + u[i].abs()) && y[i] >= 0.0;
            if (u[i] - l[i]).abs() < 1e-12 || y[i] > tol || at_upper {
                Some((i, u[i]))
            } else if y[i] < -tol && l[i] > -INF_BOUND {
                Some((i, l[i]))
            } else {
                None
            }
        })
        .collect();
    let na = active.len();
    let mut kkt = DMatrix::zeros(n + na, n + na);
    kkt.view_mut((0, 0), (n, n)).copy_from(&qp.hessian);
    let mut rhs = DVector::zeros(n + na);
    rhs.rows_mut(0, n).copy_from(&(-&qp.gradient));
    for (r, &(i, bound)) in active.iter().enumerate() {
        for j in 0..n {
            kkt[(n + r, j)] = a[(i, j)];
            kkt[(j, n + r)] = a[(i, j)];
        }
        rhs[n + r] = bound;
    }
    let sol = kkt.clone().lu().solve(&rhs)?;
    let resid = (&kkt * &sol - &rhs).amax();
    if !sol.iter().all(|v| v.is_finite()) || resid > 1e-9 * (1.0 + rhs.amax()) {
        return None;
    }
    let xp = sol.rows(0, n).into_owned();
    let mut yp = DVector::zeros(a.nrows());
    for (r, &(i, _)) in active.iter().enumerate() {
        yp[i] = sol[n + r];
    }
    let axp = a * &xp;
    let feas_tol = 1e-9 * (1.0 + u.iter().chain(l.iter()).filter(|v| v.abs() < INF_BOUND).fold(0.0f64, |m, v| m.max(v.abs())));
    let feasible = (0..a.nrows()).all(|i| axp[i] <= u[i] + feas_tol && axp[i] >= l[i] - feas_tol);
    let dual_ok = active.iter().enumerate().all(|(r, &(i, bound))| {
        let yi = sol[n + r];
        (u[i] - l[i]).abs() < 1e-12 || (bound == u[i] && yi >= -1e-9) || (bound == l[i] && yi <= 1e-9)
    });
    if feasible && dual_ok {
        Some((xp, yp))
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_matches_linear_solve() {
        let h = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let g = DVector::from_vec(vec![1.0, -2.0]);
        let sol = qp_solve(&QpProblem::new(h.clone(), g.clone())).unwrap();
        let exact = -h.lu().solve(&g).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.x - exact).amax() < 1e-8);
    }

    #[test]
    fn box_1d_clips_to_nearer_bound() {
        let h = DMatrix::from_element(1, 1, 2.0);
        let g = DVector::from_element(1, -10.0);
        let a = DMatrix::from_column_slice(2, 1, &[1.0, -1.0]);
        let b = DVector::from_vec(vec![1.0, 1.0]);
        let sol = qp_solve(&QpProblem::new(h, g).with_inequalities(a, b)).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn equality_constrained() {
        let h = DMatrix::identity(2, 2);
        let g = DVector::zeros(2);
        let e = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let sol = qp_solve(&QpProblem::new(h, g).with_equalities(e, DVector::from_element(1, 2.0))).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-9 && (sol.x[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn detects_primal_infeasibility() {
        let h = DMatrix::identity(1, 1);
        let g = DVector::zeros(1);
        let a = DMatrix::from_column_slice(2, 1, &[1.0, -1.0]);
        let b = DVector::from_vec(vec![-1.0, -1.0]);
        let sol = qp_solve(&QpProblem::new(h, g).with_inequalities(a, b)).unwrap();
        assert_eq!(sol.status, QpStatus::PrimalInfeasible);
    }

    #[test]
    fn detects_unbounded_lp() {
        let h = DMatrix::zeros(1, 1);
        let g = DVector::from_element(1, -1.0);
        let a = DMatrix::from_element(1, 1, -1.0);
        let sol = qp_solve(&QpProblem::new(h, g).with_inequalities(a, DVector::zeros(1))).unwrap();
        assert_eq!(sol.status, QpStatus::DualInfeasible);
    }

    #[test]
    fn rejects_indefinite_hessian() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(qp_solve(&QpProblem::new(h, DVector::zeros(2))), Err(Error::Synthesis(_))));
    }
}
