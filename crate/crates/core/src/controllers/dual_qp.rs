//! Goldfarb–Idnani dual active-set method, used to recover a solution when
//! the splitting iteration stalls on a degenerate vertex.

use nalgebra::{DMatrix, DVector};

use super::qp::QpProblem;

pub(crate) struct DualSolution {
    pub x: DVector<f64>,
    /// Same layout as the splitting solver: inequality rows, then equalities.
    pub y: DVector<f64>,
    pub iterations: usize,
}

/// `None` when the problem is infeasible, the step budget runs out, or the
/// Hessian cannot be made positive definite by a tiny ridge.
pub(crate) fn dual_active_set(qp: &QpProblem, max_steps: usize) -> Option<DualSolution> {
    let n = qp.n_vars();
    let (mi, me) = (qp.a_ineq.nrows(), qp.a_eq.nrows());
    let scale = qp.hessian.amax().max(1.0);
    let mut ridge = 0.0;
    let chol = loop {
        let h = &qp.hessian + DMatrix::identity(n, n) * ridge;
        if let Some(c) = h.cholesky() {
            break c;
        }
        ridge = if ridge == 0.0 { 1e-12 * scale } else { ridge * 100.0 };
        if ridge > 1e-6 * scale {
            return None;
        }
    };
    let h_inv = chol.inverse();

    // Constraint k reads normal(k)·x >= rhs(k).
    let normal = |k: usize| -> DVector<f64> {
        if k < mi { -qp.a_ineq.row(k).transpose() } else { qp.a_eq.row(k - mi).transpose() }
    };
    let rhs = |k: usize| -> f64 { if k < mi { -qp.b_ineq[k] } else { qp.b_eq[k - mi] } };

    let mut x = -(&h_inv * &qp.gradient);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();

    // Primal direction z and dual direction r for adding `np`.
    let directions = |active: &[usize], np: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>)> {
        let hn = &h_inv * np;
        if active.is_empty() {
            return Some((hn, DVector::zeros(0)));
        }
        let mut nm = DMatrix::zeros(n, active.len());
        for (c, &k) in active.iter().enumerate() {
            nm.set_column(c, &normal(k));
        }
        let hinv_n = &h_inv * &nm;
        let m = nm.transpose() * &hinv_n;
        let r = m.cholesky()?.solve(&(nm.transpose() * &hn));
        let z = &hn - hinv_n * &r;
        // A normal in the span of the active ones leaves no primal direction.
        if active.len() >= n || z.norm() <= 1e-14 * hn.norm() {
            return Some((DVector::zeros(n), r));
        }
        Some((z, r))
    };

    let mut steps = 0;
    for k in mi..mi + me {
        let np = normal(k);
        let (z, r) = directions(&active, &np)?;
        let s = np.dot(&x) - rhs(k);
        let curv = z.dot(&np);
        if curv <= 0.0 {
            if s.abs() > 1e-9 * (1.0 + rhs(k).abs()) {
                return None;
            }
            continue;
        }
        let t = -s / curv;
        x += &z * t;
        for (uj, rj) in u.iter_mut().zip(r.iter()) {
            *uj -= t * rj;
        }
        active.push(k);
        u.push(t);
        steps += 1;
    }

    // Rows that are numerically dependent on the active set and violated only
    // at round-off level; the final optimality check has the last word.
    let mut skipped: Vec<usize> = Vec::new();
    loop {
        let mut worst: Option<(usize, f64)> = None;
        for k in 0..mi {
            if active.contains(&k) || skipped.contains(&k) {
                continue;
            }
            let s = normal(k).dot(&x) - rhs(k);
            let tol = 1e-11 * (1.0 + rhs(k).abs() + qp.a_ineq.row(k).amax() * x.amax());
            if s < -tol && worst.is_none_or(|(_, w)| s < w) {
                worst = Some((k, s));
            }
        }
        let Some((p, _)) = worst else { break };
        let np = normal(p);
        let mut u_plus = 0.0;
        loop {
            steps += 1;
            if steps > max_steps {
                return None;
            }
            let (z, r) = directions(&active, &np)?;
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (j, &k) in active.iter().enumerate() {
                if k < mi && r[j] > 0.0 {
                    let ratio = u[j] / r[j];
                    if ratio < t1 {
                        t1 = ratio;
                        drop = Some(j);
                    }
                }
            }
            let curv = z.dot(&np);
            let t2 = if curv > 0.0 {
                -(np.dot(&x) - rhs(p)) / curv
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                let s = np.dot(&x) - rhs(p);
                if s < -1e-6 * (1.0 + rhs(p).abs() + np.amax() * x.amax()) {
                    return None;
                }
                skipped.push(p);
                break;
            }
            if t2.is_finite() {
                x += &z * t;
            }
            for (uj, rj) in u.iter_mut().zip(r.iter()) {
                *uj -= t * rj;
            }
            u_plus += t;
            if t == t2 {
                active.push(p);
                u.push(u_plus);
                break;
            }
            let j = drop.expect("finite partial step has a blocking row");
            active.remove(j);
            u.remove(j);
        }
    }

    let mut y = DVector::zeros(mi + me);
    for (&k, &uk) in active.iter().zip(&u) {
        y[k] = if k < mi { uk.max(0.0) } else { -uk };
    }
    Some(DualSolution { x, y, iterations: steps })
}
