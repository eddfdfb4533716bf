//! Dense two-phase simplex for small standard-form programs
//! `min cᵀy  s.t.  E y = f, y >= 0`, with Bland's anti-cycling rule.
//!
//! The polytope code poses support queries as the dual of
//! `max dᵀx s.t. A x <= b`, which puts the (few) space dimensions in the rows
//! and the (many) facets in the columns.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub enum LpOutcome {
    Optimal {
        value: f64,
        /// Multipliers of the equality rows, `π = B⁻ᵀ c_B`.
        duals: DVector<f64>,
    },
    Infeasible,
    Unbounded,
}

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-11;

struct Tableau {
    /// rows × (cols + rows + 1): structural | artificial | rhs
    t: DMatrix<f64>,
    basis: Vec<usize>,
    active: Vec<bool>,
    n_struct: usize,
    n_rows: usize,
}

impl Tableau {
    fn rhs_col(&self) -> usize {
        self.n_struct + self.n_rows
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let cols = self.t.ncols();
        let p = self.t[(r, c)];
        for j in 0..cols {
            self.t[(r, j)] /= p;
        }
        for i in 0..self.n_rows {
            if i == r || !self.active[i] {
                continue;
            }
            let factor = self.t[(i, c)];
            if factor != 0.0 {
                for j in 0..cols {
                    let v = self.t[(r, j)];
                    self.t[(i, j)] -= factor * v;
                }
            }
        }
        self.basis[r] = c;
    }

    /// Reduced costs for cost vector `cost` over all columns (artificials included).
    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let ncols = self.n_struct + self.n_rows;
        let mut r = cost.to_vec();
        for i in 0..self.n_rows {
            if !self.active[i] {
                continue;
            }
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                for j in 0..ncols {
                    r[j] -= cb * self.t[(i, j)];
                }
            }
        }
        r
    }

    /// Runs simplex iterations. Returns false on unboundedness.
    fn optimize(&mut self, cost: &[f64], allow_artificial: bool, max_iter: usize) -> Result<bool> {
        let rhs = self.rhs_col();
        for _ in 0..max_iter {
            let r = self.reduced_costs(cost);
            let limit = if allow_artificial { self.n_struct + self.n_rows } else { self.n_struct };
            let scale = cost.iter().fold(1.0f64, |m, c| m.max(c.abs()));
            let Some(enter) = (0..limit).find(|&j| r[j] < -COST_TOL * scale) else {
                return Ok(true);
            };
            let mut best: Option<(usize, f64)> = None;
            for i in 0..self.n_rows {
                if !self.active[i] {
                    continue;
                }
                let aij = self.t[(i, enter)];
                if aij > PIVOT_TOL {
                    let ratio = self.t[(i, rhs)] / aij;
                    best = match best {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - 1e-14 || (ratio <= br + 1e-14 && self.basis[i] < self.basis[bi]) {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            match best {
                None => return Ok(false),
                Some((row, _)) => self.pivot(row, enter),
            }
        }
        Err(Error::Convergence("simplex iteration cap reached".into()))
    }
}

pub fn solve_standard(c: &[f64], e: &DMatrix<f64>, f: &DVector<f64>) -> Result<LpOutcome> {
    let (n_rows, n_struct) = e.shape();
    assert_eq!(c.len(), n_struct);
    assert_eq!(f.len(), n_rows);
    let mut t = DMatrix::zeros(n_rows, n_struct + n_rows + 1);
    let mut flipped = vec![false; n_rows];
    for i in 0..n_rows {
        let sgn = if f[i] < 0.0 { -1.0 } else { 1.0 };
        flipped[i] = sgn < 0.0;
        for j in 0..n_struct {
            t[(i, j)] = sgn * e[(i, j)];
        }
        t[(i, n_struct + i)] = 1.0;
        t[(i, n_struct + n_rows)] = sgn * f[i];
    }
    let mut tab = Tableau {
        t,
        basis: (n_struct..n_struct + n_rows).collect(),
        active: vec![true; n_rows],
        n_struct,
        n_rows,
    };
    let max_iter = 50 * (n_struct + n_rows) + 100;

    // Phase I
    let mut cost1 = vec![0.0; n_struct + n_rows];
    for v in cost1.iter_mut().skip(n_struct) {
        *v = 1.0;
    }
    tab.optimize(&cost1, true, max_iter)?;
    let rhs = tab.rhs_col();
    let infeas: f64 = (0..n_rows).filter(|&i| tab.basis[i] >= n_struct).map(|i| tab.t[(i, rhs)]).sum();
    let fscale = f.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if infeas > 1e-9 * fscale {
        return Ok(LpOutcome::Infeasible);
    }
    // Drive artificials out of the basis or drop redundant rows.
    for i in 0..n_rows {
        if tab.basis[i] < n_struct {
            continue;
        }
        match (0..n_struct).find(|&j| tab.t[(i, j)].abs() > 1e-9) {
            Some(j) => tab.pivot(i, j),
            None => tab.active[i] = false,
        }
    }

    // Phase II
    let mut cost2 = c.to_vec();
    cost2.extend(std::iter::repeat_n(0.0, n_rows));
    if !tab.optimize(&cost2, false, max_iter)? {
        return Ok(LpOutcome::Unbounded);
    }
    let mut value = 0.0;
    let mut duals = DVector::<f64>::zeros(n_rows);
    for i in 0..n_rows {
        if !tab.active[i] {
            continue;
        }
        let cb = cost2[tab.basis[i]];
        value += cb * tab.t[(i, rhs)];
        for j in 0..n_rows {
            duals[j] += cb * tab.t[(i, n_struct + j)];
        }
    }
    for j in 0..n_rows {
        if flipped[j] {
            duals[j] = -duals[j];
        }
    }
    Ok(LpOutcome::Optimal { value, duals })
}

/// Result of `max dᵀx s.t. A x <= b`.
#[derive(Debug, Clone)]
pub enum SupportOutcome {
    Finite { value: f64, point: DVector<f64> },
    Unbounded,
    Infeasible,
}

pub fn maximize(a: &DMatrix<f64>, b: &DVector<f64>, d: &DVector<f64>) -> Result<SupportOutcome> {
    if a.nrows() == 0 {
        return Ok(if d.iter().all(|v| *v == 0.0) {
            SupportOutcome::Finite { value: 0.0, point: DVector::zeros(d.len()) }
        } else {
            SupportOutcome::Unbounded
        });
    }
    let e = a.transpose();
    match solve_standard(b.as_slice(), &e, d)? {
        LpOutcome::Optimal { value, duals } => Ok(SupportOutcome::Finite { value, point: duals }),
        // dual infeasible: primal unbounded (or infeasible, resolved by the caller)
        LpOutcome::Infeasible => Ok(SupportOutcome::Unbounded),
        LpOutcome::Unbounded => Ok(SupportOutcome::Infeasible),
    }
}

/// Farkas test: `{x : A x <= b}` is empty iff some `y >= 0, Σy <= 1` has
/// `Aᵀy = 0` and `bᵀy < 0`.
pub fn is_empty(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<bool> {
    let (m, n) = a.shape();
    if m == 0 {
        return Ok(false);
    }
    let mut e = DMatrix::zeros(n + 1, m + 1);
    e.view_mut((0, 0), (n, m)).copy_from(&a.transpose());
    for j in 0..=m {
        e[(n, j)] = 1.0;
    }
    let mut f = DVector::zeros(n + 1);
    f[n] = 1.0;
    let mut c: Vec<f64> = b.iter().copied().collect();
    c.push(0.0);
    match solve_standard(&c, &e, &f)? {
        LpOutcome::Optimal { value, .. } => Ok(value < -1e-9),
        _ => Ok(false),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box(n: usize) -> (DMatrix<f64>, DVector<f64>) {
        let mut a = DMatrix::zeros(2 * n, n);
        for i in 0..n {
            a[(2 * i, i)] = 1.0;
            a[(2 * i + 1, i)] = -1.0;
        }
        (a, DVector::from_element(2 * n, 1.0))
    }

    #[test]
    fn box_support_and_argmax() {
        let (a, b) = unit_box(3);
        let d = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        match maximize(&a, &b, &d).unwrap() {
            SupportOutcome::Finite { value, point } => {
                assert!((value - 3.5).abs() < 1e-12);
                assert!((point - DVector::from_vec(vec![1.0, -1.0, 1.0])).norm() < 1e-12);
            }
            o => panic!("{o:?}"),
        }
    }

    #[test]
    fn unbounded_and_empty() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let b = DVector::from_vec(vec![1.0]);
        let d = DVector::from_vec(vec![0.0, 1.0]);
        assert!(matches!(maximize(&a, &b, &d).unwrap(), SupportOutcome::Unbounded));
        let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let b = DVector::from_vec(vec![-1.0, -1.0]);
        assert!(is_empty(&a, &b).unwrap());
        let b = DVector::from_vec(vec![1.0, -1.0]);
        assert!(!is_empty(&a, &b).unwrap());
    }

    #[test]
    fn degenerate_point_set() {
        // x <= 0, -x <= 0, y <= 0, -y <= 0, x + y <= 0
        let a = DMatrix::from_row_slice(5, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0, 1.0, 1.0]);
        let b = DVector::zeros(5);
        assert!(!is_empty(&a, &b).unwrap());
        let d = DVector::from_vec(vec![0.3, 0.7]);
        match maximize(&a, &b, &d).unwrap() {
            SupportOutcome::Finite { value, .. } => assert!(value.abs() < 1e-12),
            o => panic!("{o:?}"),
        }
    }
}
