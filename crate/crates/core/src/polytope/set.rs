use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use super::lp::{self, SupportOutcome};
use crate::error::{Error, Result};

/// `{x : A x <= b}` with unit-norm, pairwise-distinct rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    a: DMatrix<f64>,
    b: DVector<f64>,
    /// Per-coordinate `(lo, hi)` when the set is an axis-aligned box.
    bounds: Option<Vec<(f64, f64)>>,
}

const NORMAL_DEDUP_COS: f64 = 1.0 - 1e-12;

impl Polytope {
    /// Canonicalizes the rows and certifies non-emptiness.
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::DimensionMismatch { expected: a.nrows(), got: b.len() });
        }
        if a.iter().chain(b.iter()).any(|v| v.is_nan()) {
            return Err(Error::InvalidArgument("polytope data contains NaN".into()));
        }
        let n = a.ncols();
        let mut rows: Vec<(DVector<f64>, f64)> = Vec::with_capacity(a.nrows());
        'rows: for i in 0..a.nrows() {
            let r: DVector<f64> = a.row(i).transpose();
            let norm = r.norm();
            let bi = b[i];
            if bi == f64::INFINITY {
                continue;
            }
            if norm < 1e-12 {
                if bi < -1e-12 {
                    return Err(Error::EmptySet);
                }
                continue;
            }
            let (r, bi) = if (norm - 1.0).abs() <= 4.0 * f64::EPSILON { (r, bi) } else { (r / norm, bi / norm) };
            for (rr, bb) in rows.iter_mut() {
                if rr.dot(&r) >= NORMAL_DEDUP_COS {
                    *bb = bb.min(bi);
                    continue 'rows;
                }
            }
            rows.push((r, bi));
        }
        let mut am = DMatrix::zeros(rows.len(), n);
        let mut bv = DVector::zeros(rows.len());
        for (i, (r, bi)) in rows.iter().enumerate() {
            am.set_row(i, &r.transpose());
            bv[i] = *bi;
        }
        if lp::is_empty(&am, &bv)? {
            return Err(Error::EmptySet);
        }
        let bounds = detect_box(&am, &bv);
        Ok(Self { a: am, b: bv, bounds })
    }

    pub fn from_box(lo: &[f64], hi: &[f64]) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch { expected: lo.len(), got: hi.len() });
        }
        let n = lo.len();
        let mut a = DMatrix::zeros(2 * n, n);
        let mut b = DVector::zeros(2 * n);
        for i in 0..n {
            a[(2 * i, i)] = 1.0;
            b[2 * i] = hi[i];
            a[(2 * i + 1, i)] = -1.0;
            b[2 * i + 1] = -lo[i];
        }
        Self::new(a, b)
    }

    pub fn symmetric_box(half_widths: &[f64]) -> Result<Self> {
        let lo: Vec<f64> = half_widths.iter().map(|h| -h).collect();
        Self::from_box(&lo, half_widths)
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::from_box(&[lo], &[hi])
    }

    pub fn point(c: &[f64]) -> Result<Self> {
        Self::from_box(c, c)
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn n_constraints(&self) -> usize {
        self.a.nrows()
    }

    pub fn a_matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b_vector(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.a.row(i).transpose()
    }

    /// Rebuilding from the canonical rows is the identity.
    pub fn canonicalize(&self) -> Result<Self> {
        Self::new(self.a.clone(), self.b.clone())
    }

    pub fn as_box(&self) -> Option<&[(f64, f64)]> {
        self.bounds.as_deref()
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if n != self.dim() {
            Err(Error::DimensionMismatch { expected: self.dim(), got: n })
        } else {
            Ok(())
        }
    }

    /// `max dᵀx` over the set; `+∞` when unbounded in `d`.
    pub fn support(&self, d: &DVector<f64>) -> Result<f64> {
        self.check_dim(d.len())?;
        if let Some(bx) = &self.bounds {
            return Ok(d.iter().zip(bx).map(|(&di, &(lo, hi))| if di >= 0.0 { di * hi } else { di * lo }).sum());
        }
        match lp::maximize(&self.a, &self.b, d)? {
            SupportOutcome::Finite { value, .. } => Ok(value),
            SupportOutcome::Unbounded => Ok(f64::INFINITY),
            SupportOutcome::Infeasible => Err(Error::EmptySet),
        }
    }

    /// A maximizer of `dᵀx`, or `None` when unbounded.
    pub fn support_point(&self, d: &DVector<f64>) -> Result<Option<DVector<f64>>> {
        self.check_dim(d.len())?;
        if let Some(bx) = &self.bounds {
            return Ok(Some(DVector::from_iterator(
                d.len(),
                d.iter().zip(bx).map(|(&di, &(lo, hi))| if di >= 0.0 { hi } else { lo }),
            )));
        }
        match lp::maximize(&self.a, &self.b, d)? {
            SupportOutcome::Finite { point, .. } => Ok(Some(point)),
            SupportOutcome::Unbounded => Ok(None),
            SupportOutcome::Infeasible => Err(Error::EmptySet),
        }
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> Result<bool> {
        self.check_dim(x.len())?;
        Ok((&self.a * x - &self.b).iter().all(|&r| r <= tol))
    }

    /// Largest constraint violation `max_i (a_iᵀx - b_i)`.
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        (&self.a * x - &self.b).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Axis-aligned bounding box, `(lo, hi)` per coordinate.
    pub fn bounding_box(&self) -> Result<Vec<(f64, f64)>> {
        (0..self.dim())
            .map(|i| {
                let mut e = DVector::zeros(self.dim());
                e[i] = 1.0;
                let hi = self.support(&e)?;
                e[i] = -1.0;
                let lo = -self.support(&e)?;
                Ok((lo, hi))
            })
            .collect()
    }

    /// Drop every row whose maximum over the remaining rows stays within
    /// `offset + 1e-9`, greedily in row order.
    pub fn remove_redundant(&self) -> Result<Self> {
        if self.bounds.is_some() {
            return Ok(self.clone());
        }
        let m = self.n_constraints();
        let mut keep = vec![true; m];
        for i in 0..m {
            let others: Vec<usize> = (0..m).filter(|&j| j != i && keep[j]).collect();
            let a = self.a.select_rows(others.iter());
            let b = self.b.select_rows(others.iter());
            if let SupportOutcome::Finite { value, .. } = lp::maximize(&a, &b, &self.row(i))? {
                if value <= self.b[i] + 1e-9 {
                    keep[i] = false;
                }
            }
        }
        let idx: Vec<usize> = (0..m).filter(|&i| keep[i]).collect();
        Self::new(self.a.select_rows(idx.iter()), self.b.select_rows(idx.iter()))
    }

    /// H-representation of `self ⊕ other` over the union of both normal
    /// sets (exact in one and two dimensions), redundancy removed.
    pub fn minkowski_sum(&self, other: &Polytope) -> Result<Self> {
        other.check_dim(self.dim())?;
        let normals: Vec<DVector<f64>> = (0..self.n_constraints())
            .map(|i| self.row(i))
            .chain((0..other.n_constraints()).map(|i| other.row(i)))
            .collect();
        let mut a = DMatrix::zeros(normals.len(), self.dim());
        let mut b = DVector::zeros(normals.len());
        for (i, nrm) in normals.iter().enumerate() {
            a.set_row(i, &nrm.transpose());
            b[i] = self.support(nrm)? + other.support(nrm)?;
        }
        Self::new(a, b)?.remove_redundant()
    }

    /// `{x : A x <= b - h_q(A_i)}`; an empty result means `q` does not fit.
    pub fn pontryagin_diff(&self, q: &Polytope) -> Result<Self> {
        q.check_dim(self.dim())?;
        let mut b = self.b.clone();
        for i in 0..self.n_constraints() {
            let h = q.support(&self.row(i))?;
            b[i] -= h;
            if !b[i].is_finite() {
                return Err(Error::OverTightened { row: i, offset: self.b[i], margin: h });
            }
        }
        match Self::new(self.a.clone(), b.clone()) {
            Ok(p) => Ok(p),
            Err(Error::EmptySet) => {
                let (row, _) = b
                    .iter()
                    .enumerate()
                    .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
                Err(Error::OverTightened { row, offset: self.b[row], margin: self.b[row] - b[row] })
            }
            Err(e) => Err(e),
        }
    }

    /// Image `{M x : x ∈ self}` for `M` of full row rank. Square maps are
    /// exact; lower-dimensional targets are bounded over a fixed direction
    /// set (exact for one-dimensional images).
    pub fn linear_map(&self, m: &DMatrix<f64>) -> Result<Self> {
        self.check_dim(m.ncols())?;
        let k = m.nrows();
        let rank = m.rank(1e-10);
        if rank < k {
            return Err(Error::RankDeficient(format!("map of rank {rank} with {k} rows")));
        }
        if k == m.ncols() {
            let inv = m.clone().try_inverse().ok_or_else(|| Error::RankDeficient("singular square map".into()))?;
            return Self::new(&self.a * inv, self.b.clone());
        }
        let dirs = canonical_directions(k);
        let mut a = DMatrix::zeros(dirs.len(), k);
        let mut b = DVector::zeros(dirs.len());
        for (i, d) in dirs.iter().enumerate() {
            a.set_row(i, &d.transpose());
            b[i] = self.support(&(m.transpose() * d))?;
        }
        Self::new(a, b)
    }

    pub fn cartesian_product(&self, other: &Polytope) -> Result<Self> {
        let (n, p) = (self.dim(), other.dim());
        let (m1, m2) = (self.n_constraints(), other.n_constraints());
        let mut a = DMatrix::zeros(m1 + m2, n + p);
        a.view_mut((0, 0), (m1, n)).copy_from(&self.a);
        a.view_mut((m1, n), (m2, p)).copy_from(&other.a);
        let mut b = DVector::zeros(m1 + m2);
        b.rows_mut(0, m1).copy_from(&self.b);
        b.rows_mut(m1, m2).copy_from(&other.b);
        Self::new(a, b)
    }

    /// `{k x : x ∈ self}` for `k >= 0`.
    pub fn scale(&self, k: f64) -> Result<Self> {
        if !(k >= 0.0) {
            return Err(Error::InvalidArgument(format!("scale factor {k} must be >= 0")));
        }
        Self::new(self.a.clone(), &self.b * k)
    }

    /// `{x + c : x ∈ self}`.
    pub fn translate(&self, c: &DVector<f64>) -> Result<Self> {
        self.check_dim(c.len())?;
        Self::new(self.a.clone(), &self.b + &self.a * c)
    }

    /// `{-x : x ∈ self}`.
    pub fn negate(&self) -> Result<Self> {
        Self::new(-&self.a, self.b.clone())
    }

    /// One CSV row per constraint: `a_1,...,a_n,b`.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let header: Vec<String> = (0..self.dim()).map(|j| format!("a{j}")).chain(["b".to_string()]).collect();
        s.push_str(&header.join(","));
        s.push('\n');
        for i in 0..self.n_constraints() {
            let mut fields: Vec<String> = self.a.row(i).iter().map(|v| format!("{v:.12e}")).collect();
            fields.push(format!("{:.12e}", self.b[i]));
            let _ = writeln!(s, "{}", fields.join(","));
        }
        s
    }
}

fn detect_box(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<Vec<(f64, f64)>> {
    let n = a.ncols();
    let mut lo = vec![None; n];
    let mut hi = vec![None; n];
    for i in 0..a.nrows() {
        let nz: Vec<usize> = (0..n).filter(|&j| a[(i, j)] != 0.0).collect();
        if nz.len() != 1 {
            return None;
        }
        let j = nz[0];
        if (a[(i, j)].abs() - 1.0).abs() > 1e-15 {
            return None;
        }
        if a[(i, j)] > 0.0 {
            hi[j] = Some(b[i]);
        } else {
            lo[j] = Some(-b[i]);
        }
    }
    lo.into_iter().zip(hi).map(|(l, h)| Some((l?, h?))).collect()
}

/// Fixed outward directions for images in `k` dimensions.
fn canonical_directions(k: usize) -> Vec<DVector<f64>> {
    match k {
        1 => vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)],
        2 => (0..64)
            .map(|i| {
                let t = i as f64 * std::f64::consts::TAU / 64.0;
                DVector::from_vec(vec![t.cos(), t.sin()])
            })
            .collect(),
        _ => {
            let mut v = Vec::new();
            for i in 0..k {
                for s in [1.0, -1.0] {
                    let mut e = DVector::zeros(k);
                    e[i] = s;
                    v.push(e);
                }
                for j in (i + 1)..k {
                    for (si, sj) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                        let mut e = DVector::zeros(k);
                        e[i] = si * std::f64::consts::FRAC_1_SQRT_2;
                        e[j] = sj * std::f64::consts::FRAC_1_SQRT_2;
                        v.push(e);
                    }
                }
            }
            v
        }
    }
}
