use nalgebra::{DMatrix, DVector};

use super::set::Polytope;
use crate::error::{Error, Result};

/// Outer approximation of the minimal robust positively invariant set.
#[derive(Debug, Clone)]
pub struct RpiResult {
    pub set: Polytope,
    pub s_steps: usize,
    pub alpha: f64,
    /// Worst outward offset of `set` over `F_s` along its own facet normals,
    /// per unit 1-norm of the normal.
    pub epsilon: f64,
}

pub const DEFAULT_MAX_STEPS: usize = 200;
const DEFINITION_TOL: f64 = 1e-8;
const TEMPLATE_DEPTH: usize = 40;
const MAX_FIXPOINT_ITERS: usize = 2000;
const FIXPOINT_OVERSHOOT: f64 = 1e-9;
const DUPLICATE_DIRECTION_TOL: f64 = 1e-10;

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Largest slack of `A R ⊕ W ⊆ R` over the facets of `R`; non-positive
/// (up to round-off) when the inclusion holds.
pub fn verify_rpi(a_k: &DMatrix<f64>, r: &Polytope, w: &Polytope) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for j in 0..r.n_constraints() {
        let f = r.row(j);
        let lhs = r.support(&(a_k.transpose() * &f))? + w.support(&f)?;
        worst = worst.max(lhs - r.b_vector()[j]);
    }
    Ok(worst)
}

/// Raković ε-outer approximation with the default step cap.
pub fn compute_mrpi(a_k: &DMatrix<f64>, w_set: &Polytope, epsilon: f64) -> Result<RpiResult> {
    compute_mrpi_capped(a_k, w_set, epsilon, DEFAULT_MAX_STEPS)
}

pub fn compute_mrpi_capped(a_k: &DMatrix<f64>, w_set: &Polytope, epsilon: f64, max_steps: usize) -> Result<RpiResult> {
    let n = w_set.dim();
    if a_k.nrows() != n || a_k.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: a_k.nrows() });
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let rho = spectral_radius(a_k);
    if !(rho < 1.0) {
        return Err(Error::NotSchurStable(rho));
    }
    let extent = w_set.bounding_box()?;
    if extent.iter().all(|&(lo, hi)| lo == 0.0 && hi == 0.0) {
        return Ok(RpiResult { set: Polytope::point(&vec![0.0; n])?, s_steps: 1, alpha: 0.0, epsilon: 0.0 });
    }
    let g = w_set.b_vector();
    if g.iter().any(|&gk| gk <= 0.0) {
        return Err(Error::InvalidArgument("disturbance set must contain the origin in its interior".into()));
    }

    // Support of F_s = ⊕_{i<s} A^i W along ±e_j, accumulated per step.
    let mut coord_support = vec![0.0; 2 * n];
    let mut power = DMatrix::<f64>::identity(n, n);
    let mut s = 0;
    let alpha = loop {
        for j in 0..n {
            for (k, sign) in [1.0, -1.0].into_iter().enumerate() {
                let mut e = DVector::zeros(n);
                e[j] = sign;
                coord_support[2 * j + k] += w_set.support(&(power.transpose() * e))?;
            }
        }
        power = a_k * &power;
        s += 1;
        let mut alpha = 0.0f64;
        for k in 0..w_set.n_constraints() {
            alpha = alpha.max(w_set.support(&(power.transpose() * w_set.row(k)))? / g[k]);
        }
        let m_s = coord_support.iter().copied().fold(0.0, f64::max);
        if alpha <= epsilon / (epsilon + m_s) {
            break alpha;
        }
        if s >= max_steps {
            return Err(Error::Convergence(format!(
                "no admissible alpha within {max_steps} steps (alpha = {alpha:.3e})"
            )));
        }
    };

    let powers: Vec<DMatrix<f64>> = std::iter::successors(Some(DMatrix::identity(n, n)), |p| Some(a_k * p))
        .take(s)
        .collect();
    let scale = 1.0 / (1.0 - alpha);
    let offset = |d: &DVector<f64>| -> Result<f64> {
        let mut acc = 0.0;
        for p in &powers {
            acc += w_set.support(&(p.transpose() * d))?;
        }
        Ok(scale * acc)
    };

    let mut seeds: Vec<DVector<f64>> = (0..w_set.n_constraints()).map(|k| w_set.row(k)).collect();
    for j in 0..n {
        for sign in [1.0, -1.0] {
            let mut e = DVector::zeros(n);
            e[j] = sign;
            seeds.push(e);
        }
    }
    for v in real_left_eigenvectors(a_k) {
        seeds.push(-&v);
        seeds.push(v);
    }

    let mut dirs: Vec<DVector<f64>> = Vec::new();
    let mut sums: Vec<f64> = Vec::new();
    let mut frontier = seeds;
    for depth in 0..=TEMPLATE_DEPTH {
        for d in frontier.iter() {
            if dirs.iter().all(|e| (d - e).amax() > DUPLICATE_DIRECTION_TOL) {
                sums.push(offset(d)?);
                dirs.push(d.clone());
            }
        }
        let candidate = template(&dirs, sums.iter().copied(), n)?;
        if verify_rpi(a_k, &candidate, w_set)? <= DEFINITION_TOL {
            return finish(a_k, w_set, candidate, &dirs, &sums, s, alpha);
        }
        if depth == TEMPLATE_DEPTH {
            break;
        }
        frontier = frontier
            .iter()
            .filter_map(|d| {
                let next = a_k.transpose() * d;
                let norm = next.norm();
                (norm > 1e-14).then(|| next / norm)
            })
            .collect();
        if frontier.is_empty() {
            break;
        }
    }

    // The deepest level is not closed under A_K. Raise offsets to the
    // support they must dominate until the template is invariant; the
    // eigenvector rows close on themselves, so the iteration contracts.
    let mut b: Vec<f64> = sums.clone();
    for _ in 0..MAX_FIXPOINT_ITERS {
        let candidate = template(&dirs, b.iter().copied(), n)?;
        let mut worst = f64::NEG_INFINITY;
        let mut next = b.clone();
        for (j, d) in dirs.iter().enumerate() {
            let need = candidate.support(&(a_k.transpose() * d))? + w_set.support(d)?;
            worst = worst.max(need - b[j]);
            if need > b[j] {
                next[j] = need + FIXPOINT_OVERSHOOT * need.abs();
            }
        }
        if worst <= 0.5 * DEFINITION_TOL {
            return finish(a_k, w_set, candidate, &dirs, &sums, s, alpha);
        }
        b = next;
    }
    Err(Error::Convergence("robust invariant template did not close".into()))
}

fn template(dirs: &[DVector<f64>], b: impl Iterator<Item = f64>, n: usize) -> Result<Polytope> {
    let mut a = DMatrix::zeros(dirs.len(), n);
    for (i, d) in dirs.iter().enumerate() {
        a.set_row(i, &d.transpose());
    }
    Polytope::new(a, DVector::from_iterator(dirs.len(), b))
}

/// Prunes the certified template and reports how far it sits outside
/// `F_s` along its own facet normals, in the ∞-norm sense.
fn finish(
    a_k: &DMatrix<f64>,
    w_set: &Polytope,
    candidate: Polytope,
    dirs: &[DVector<f64>],
    sums: &[f64],
    s: usize,
    alpha: f64,
) -> Result<RpiResult> {
    let mut epsilon = 0.0f64;
    for (d, &h) in dirs.iter().zip(sums) {
        epsilon = epsilon.max((candidate.support(d)? - h) / d.lp_norm(1));
    }
    let set = candidate.remove_redundant()?;
    let slack = verify_rpi(a_k, &set, w_set)?;
    if slack > DEFINITION_TOL {
        return Err(Error::Convergence(format!("invariance lost after pruning (slack {slack:.3e})")));
    }
    Ok(RpiResult { set, s_steps: s, alpha, epsilon })
}

/// Unit left eigenvectors of `a` for its real eigenvalues.
fn real_left_eigenvectors(a: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let n = a.nrows();
    let at = a.transpose();
    let mut out: Vec<DVector<f64>> = Vec::new();
    for z in a.complex_eigenvalues().iter() {
        if z.im.abs() > 1e-12 * (1.0 + z.re.abs()) {
            continue;
        }
        let shifted = &at - DMatrix::identity(n, n) * z.re;
        let svd = shifted.svd(false, true);
        let Some(vt) = svd.v_t else { continue };
        let k = svd.singular_values.imin();
        let v: DVector<f64> = vt.row(k).transpose();
        if (&at * &v - &v * z.re).amax() > 1e-9 {
            continue;
        }
        let v = v.normalize();
        if out.iter().all(|e| (e - &v).amax() > DUPLICATE_DIRECTION_TOL && (e + &v).amax() > DUPLICATE_DIRECTION_TOL) {
            out.push(v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_geometric_series() {
        let a = DMatrix::from_element(1, 1, 0.5);
        let w = Polytope::interval(-1.0, 1.0).unwrap();
        let r = compute_mrpi(&a, &w, 1e-3).unwrap();
        let (lo, hi) = r.set.as_box().unwrap()[0];
        assert!(hi >= 2.0 - 1e-12 && hi <= 2.0 + r.epsilon + 1e-12);
        assert!(lo <= -2.0 + 1e-12 && lo >= -2.0 - r.epsilon - 1e-12);
    }

    #[test]
    fn nilpotent_gives_w() {
        let a = DMatrix::zeros(2, 2);
        let w = Polytope::symmetric_box(&[1.0, 0.5]).unwrap();
        let r = compute_mrpi(&a, &w, 1e-3).unwrap();
        assert_eq!(r.s_steps, 1);
        assert_eq!(r.alpha, 0.0);
        assert!(verify_rpi(&a, &r.set, &w).unwrap() <= 1e-12);
    }

    #[test]
    fn zero_disturbance_gives_origin() {
        let a = DMatrix::from_element(2, 2, 0.2);
        let w = Polytope::point(&[0.0, 0.0]).unwrap();
        let r = compute_mrpi(&a, &w, 1e-3).unwrap();
        assert_eq!(r.set.bounding_box().unwrap(), vec![(0.0, 0.0); 2]);
    }

    #[test]
    fn unstable_rejected() {
        let a = DMatrix::from_element(1, 1, 1.01);
        let w = Polytope::interval(-1.0, 1.0).unwrap();
        assert!(matches!(compute_mrpi(&a, &w, 1e-3), Err(Error::NotSchurStable(_))));
    }

    #[test]
    fn rotation_contraction_4d() {
        let (c, s) = (0.7 * 0.6f64.cos(), 0.7 * 0.6f64.sin());
        let a = DMatrix::from_row_slice(4, 4, &[
            c, -s, 0.0, 0.0, s, c, 0.0, 0.0, 0.0, 0.0, 0.9, 0.05, 0.0, 0.0, 0.0, 0.5,
        ]);
        let w = Polytope::symmetric_box(&[0.1, 0.2, 0.05, 0.1]).unwrap();
        let r = compute_mrpi(&a, &w, 1e-3).unwrap();
        assert!(verify_rpi(&a, &r.set, &w).unwrap() <= 1e-8);
    }

    #[test]
    fn step_cap_enforced() {
        let a = DMatrix::from_element(1, 1, 0.999);
        let w = Polytope::interval(-1.0, 1.0).unwrap();
        assert!(matches!(compute_mrpi_capped(&a, &w, 1e-6, 5), Err(Error::Convergence(_))));
    }
}
