//! Independent reference implementations shared by the integration tests
//! and the acceptance suite.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safe_discharge::controllers::QpProblem;
use safe_discharge::polytope::Polytope;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random strictly convex QP together with a point that satisfies the
/// equalities and all inequalities strictly.
pub fn random_feasible_qp(rng: &mut ChaCha8Rng, max_n: usize) -> (QpProblem, DVector<f64>) {
    let n = rng.random_range(1..=max_n);
    let mi = rng.random_range(0..=2 * n);
    let me = rng.random_range(0..=n / 3);
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let h = &m * m.transpose() + DMatrix::identity(n, n) * rng.random_range(0.05..1.0);
    let g = DVector::from_fn(n, |_, _| rng.random_range(-10.0..10.0));
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let a = DMatrix::from_fn(mi, n, |_, _| rng.random_range(-1.0..1.0));
    let slack = DVector::from_fn(mi, |_, _| rng.random_range(0.01..1.0));
    let b = &a * &x0 + slack;
    let e = DMatrix::from_fn(me, n, |_, _| rng.random_range(-1.0..1.0));
    let f = &e * &x0;
    (QpProblem::new(h, g).with_inequalities(a, b).with_equalities(e, f), x0)
}

/// Primal active-set method for strictly convex QPs, started from a feasible
/// point. Returns the minimizer.
pub fn primal_active_set(qp: &QpProblem, x_feasible: &DVector<f64>) -> DVector<f64> {
    let n = qp.n_vars();
    let mi = qp.a_ineq.nrows();
    let me = qp.a_eq.nrows();
    let mut x = x_feasible.clone();
    let mut working: Vec<usize> = Vec::new();
    for i in 0..mi {
        let r = qp.b_ineq[i] - qp.a_ineq.row(i).dot(&x.transpose());
        if r.abs() < 1e-12 {
            working.push(i);
        }
    }
    for _ in 0..10_000 {
        let rows: Vec<DVector<f64>> = (0..me)
            .map(|j| qp.a_eq.row(j).transpose())
            .chain(working.iter().map(|&i| qp.a_ineq.row(i).transpose()))
            .collect();
        let q = rows.len();
        // [H Wᵀ; W 0] [p; λ] = [-(Hx + g); 0]
        let mut kkt = DMatrix::zeros(n + q, n + q);
        kkt.view_mut((0, 0), (n, n)).copy_from(&qp.hessian);
        for (c, r) in rows.iter().enumerate() {
            kkt.view_mut((0, n + c), (n, 1)).copy_from(r);
            kkt.view_mut((n + c, 0), (1, n)).copy_from(&r.transpose());
        }
        let mut rhs = DVector::zeros(n + q);
        rhs.rows_mut(0, n).copy_from(&-(&qp.hessian * &x + &qp.gradient));
        let sol = kkt.lu().solve(&rhs).expect("independent working set");
        let p = sol.rows(0, n).into_owned();
        let lambda = sol.rows(n, q).into_owned();
        if p.amax() <= 1e-12 * (1.0 + x.amax()) {
            let mut worst: Option<(usize, f64)> = None;
            for k in 0..working.len() {
                let l = lambda[me + k];
                if l < -1e-12 && worst.is_none_or(|(_, w)| l < w) {
                    worst = Some((k, l));
                }
            }
            match worst {
                None => return x,
                Some((k, _)) => {
                    working.remove(k);
                }
            }
            continue;
        }
        let mut alpha = 1.0;
        let mut blocking = None;
        for i in 0..mi {
            if working.contains(&i) {
                continue;
            }
            let ap = qp.a_ineq.row(i).dot(&p.transpose());
            if ap > 1e-14 {
                let step = (qp.b_ineq[i] - qp.a_ineq.row(i).dot(&x.transpose())) / ap;
                if step < alpha {
                    alpha = step.max(0.0);
                    blocking = Some(i);
                }
            }
        }
        x += &p * alpha;
        if let Some(i) = blocking {
            working.push(i);
        }
    }
    panic!("primal active-set reference did not terminate");
}

/// Random bounded 2-D polytope containing the origin in its interior.
pub fn random_polygon(rng: &mut ChaCha8Rng, scale: f64) -> Polytope {
    let k = rng.random_range(3..9);
    let offset = rng.random_range(0.0..std::f64::consts::TAU);
    let mut a = DMatrix::zeros(k, 2);
    let mut b = DVector::zeros(k);
    for i in 0..k {
        // Consecutive normals stay less than half a turn apart, so the set is bounded.
        let theta = offset + std::f64::consts::TAU * (i as f64 + rng.random_range(0.0..0.4)) / k as f64;
        a[(i, 0)] = theta.cos();
        a[(i, 1)] = theta.sin();
        b[i] = scale * rng.random_range(0.2..1.0);
    }
    Polytope::new(a, b).expect("origin is interior")
}

/// Random polygon with every vertex within `radius` of the origin, so it
/// fits inside any [`random_polygon`] of scale 1 when `radius < 0.2`.
pub fn random_small_polygon(rng: &mut ChaCha8Rng, radius: f64) -> Polytope {
    let p = random_polygon(rng, 1.0);
    let reach = polygon_vertices(&p).iter().map(|v| v[0].hypot(v[1])).fold(0.0, f64::max);
    p.scale(radius / reach).unwrap()
}

pub fn unit_directions_2d(count: usize) -> Vec<DVector<f64>> {
    (0..count)
        .map(|k| {
            let t = std::f64::consts::TAU * k as f64 / count as f64;
            DVector::from_vec(vec![t.cos(), t.sin()])
        })
        .collect()
}

pub fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let norm = v.norm();
        if norm > 1e-3 && norm <= 1.0 {
            return v / norm;
        }
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Noiseless matched-plant run of the filter with the estimate started
/// `offset` above the true SoC. Returns `(t, |SoC error|)` once per second,
/// using the harness ordering: update on the measurement, then predict.
pub fn estimator_soc_error(true_soc: f64, offset: f64, current: f64, duration: f64) -> Vec<(f64, f64)> {
    use safe_discharge::battery::{BatteryParams, BatteryState, integrate_step, terminal_voltage};
    use safe_discharge::estimation::{EstimatorState, KalmanConfig, kf_predict, kf_update};
    let p = BatteryParams::default();
    let cfg = KalmanConfig::default();
    let dt = 1.0;
    let mut x = BatteryState::new(true_soc, 0.0, p.t_ambient, p.t_ambient);
    let mut guess = x;
    guess.soc += offset;
    let mut est = EstimatorState::new(guess, &cfg, 0.0, dt, &p).unwrap();
    let mut u_prev = 0.0;
    let mut out = vec![(0.0, offset.abs())];
    let steps = (duration / dt).round() as usize;
    for k in 0..steps {
        let z = [x.t_s, terminal_voltage(&x, u_prev, &p).unwrap()];
        est = kf_update(&est, z, u_prev, &p, &cfg).unwrap();
        for _ in 0..10 {
            x = integrate_step(&x, current, dt / 10.0, &p).unwrap();
        }
        est = kf_predict(&est, current, &p, dt, &cfg).unwrap();
        u_prev = current;
        out.push(((k + 1) as f64 * dt, (est.x_hat.soc - x.soc).abs()));
    }
    out
}

/// Vertices of a bounded 2-D polytope by brute-force pairwise line
/// intersection, independent of the LP machinery.
pub fn polygon_vertices(p: &Polytope) -> Vec<[f64; 2]> {
    let a = p.a_matrix();
    let b = p.b_vector();
    let m = a.nrows();
    let mut out = Vec::new();
    for i in 0..m {
        for j in (i + 1)..m {
            let det = a[(i, 0)] * a[(j, 1)] - a[(i, 1)] * a[(j, 0)];
            if det.abs() < 1e-12 {
                continue;
            }
            let x = (b[i] * a[(j, 1)] - a[(i, 1)] * b[j]) / det;
            let y = (a[(i, 0)] * b[j] - b[i] * a[(j, 0)]) / det;
            let ok = (0..m).all(|k| a[(k, 0)] * x + a[(k, 1)] * y <= b[k] + 1e-9 * (1.0 + b[k].abs()));
            if ok {
                out.push([x, y]);
            }
        }
    }
    out
}

pub fn vertex_support(vertices: &[[f64; 2]], d: &DVector<f64>) -> f64 {
    vertices.iter().map(|v| v[0] * d[0] + v[1] * d[1]).fold(f64::NEG_INFINITY, f64::max)
}

/// Random point of `p` as a convex combination of support points in random
/// directions; a third of the draws are the support points themselves.
pub fn sample_in(p: &Polytope, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let n = p.dim();
    let picks = if rng.random_range(0..3) == 0 { 1 } else { 3 };
    let mut weights: Vec<f64> = (0..picks).map(|_| -rng.random_range(1e-12f64..1.0).ln()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let mut x = DVector::zeros(n);
    for w in weights {
        let d = random_unit(rng, n);
        let v = p.support_point(&d).unwrap().expect("bounded set");
        x += v * w;
    }
    x
}

/// Largest support-function slack of `A R ⊕ W ⊆ R` over `directions`,
/// relative to `1 + |h_R(d)|`.
pub fn rpi_direction_slack(a: &DMatrix<f64>, r: &Polytope, w: &Polytope, directions: &[DVector<f64>]) -> f64 {
    directions
        .iter()
        .map(|d| {
            let lhs = r.support(&(a.transpose() * d)).unwrap() + w.support(d).unwrap();
            let rhs = r.support(d).unwrap();
            (lhs - rhs) / (1.0 + rhs.abs())
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Fraction of `samples` draws `x ∈ R`, `w ∈ W` with `A x + w ∈ R` up to
/// `tol` per facet.
pub fn rpi_monte_carlo(a: &DMatrix<f64>, r: &Polytope, w: &Polytope, samples: usize, seed: u64, tol: f64) -> f64 {
    let mut rng = rng(seed);
    let inside = (0..samples)
        .filter(|_| {
            let x = sample_in(r, &mut rng);
            let d = sample_in(w, &mut rng);
            r.contains(&(a * x + d), tol).unwrap()
        })
        .count();
    inside as f64 / samples as f64
}

/// Small battery DP instance: three SoC nodes, three core-temperature
/// nodes, three currents and two long stages, so that constraints, the
/// completion region and interpolation all come into play.
pub fn tiny_dp_config() -> safe_discharge::controllers::DpConfig {
    use safe_discharge::controllers::{DpConfig, Grid};
    DpConfig {
        w1: 1e3,
        w2: 1e-2,
        w3: 5.0,
        w4: 1e-3,
        t_max: 40.0,
        u_max: 40.0,
        dt: 1800.0,
        horizon: 2,
        soe_stop: 0.3,
        soc_grid: Grid::new(vec![0.1, 0.5, 0.9]).unwrap(),
        tc_grid: Grid::new(vec![15.0, 30.0, 45.0]).unwrap(),
        u_grid: Grid::new(vec![0.0, 20.0, 40.0]).unwrap(),
    }
}

/// Backward Bellman recursion written out by hand for the battery DP:
/// returns `V[k][i][j]` for stages `0..=N`.
pub fn battery_bellman(cfg: &safe_discharge::controllers::DpConfig, p: &safe_discharge::battery::BatteryParams) -> Vec<Vec<Vec<f64>>> {
    let xs = cfg.soc_grid.nodes().to_vec();
    let ys = cfg.tc_grid.nodes().to_vec();
    let us = cfg.u_grid.nodes().to_vec();
    let n = cfg.horizon;
    let soe = |soc: f64| 1.0 - 3600.0 * p.capacity_nominal / p.energy_nominal * p.ocv_curve.integral(soc.clamp(0.0, 1.0), 1.0);
    let done = |soc: f64| soe(soc) < cfg.soe_stop;
    let decay = (-cfg.dt / ((p.r_u + p.r_c) * p.c_c)).exp();
    let bracket = |g: &[f64], v: f64| -> (usize, f64) {
        if v <= g[0] {
            return (0, 0.0);
        }
        if v >= g[g.len() - 1] {
            return (g.len() - 2, 1.0);
        }
        let mut k = 0;
        while g[k + 1] <= v {
            k += 1;
        }
        (k, (v - g[k]) / (g[k + 1] - g[k]))
    };
    let interp = |table: &Vec<Vec<f64>>, x: f64, y: f64| -> f64 {
        let (i, s) = bracket(&xs, x);
        let (j, t) = bracket(&ys, y);
        let mut acc = 0.0;
        for (a, b, w) in [(i, j, (1.0 - s) * (1.0 - t)), (i + 1, j, s * (1.0 - t)), (i, j + 1, (1.0 - s) * t), (i + 1, j + 1, s * t)] {
            if w > 0.0 {
                if table[a][b].is_infinite() {
                    return f64::INFINITY;
                }
                acc += w * table[a][b];
            }
        }
        acc
    };
    let mut v = vec![vec![vec![0.0; ys.len()]; xs.len()]; n + 1];
    for (i, &x) in xs.iter().enumerate() {
        for j in 0..ys.len() {
            v[n][i][j] = if done(x) { 0.0 } else { cfg.w3 * n as f64 + cfg.w1 * soe(x).abs() };
        }
    }
    for k in (0..n).rev() {
        for (i, &x) in xs.iter().enumerate() {
            for (j, &y) in ys.iter().enumerate() {
                let mut best = f64::INFINITY;
                for &u in &us {
                    let total = if done(x) {
                        cfg.w4 * u + interp(&v[k + 1], x, y)
                    } else {
                        let x2 = (x - u * cfg.dt / (3600.0 * p.capacity_nominal)).max(0.0);
                        let steady = p.t_ambient + (p.r0 + p.r1) * u * u * (p.r_u + p.r_c);
                        let y2 = steady + (y - steady) * decay;
                        if y2 > cfg.t_max || y2 < ys[0] - 1e-12 || y2 > ys[ys.len() - 1] + 1e-12 {
                            continue;
                        }
                        1.0 + cfg.w2 * u + interp(&v[k + 1], x2, y2)
                    };
                    best = best.min(total);
                }
                v[k][i][j] = best;
            }
        }
    }
    v
}

/// Largest node discrepancy between the library value table and
/// [`battery_bellman`], plus the number of finite nodes compared.
pub fn dp_oracle_error(exec: safe_discharge::parallel::Execution) -> (f64, usize) {
    use safe_discharge::battery::BatteryParams;
    use safe_discharge::controllers::{BatteryDp, dp_value_iteration};
    let cfg = tiny_dp_config();
    let p = BatteryParams::default();
    let problem = BatteryDp::new(&cfg, &p).unwrap();
    let table = dp_value_iteration(&problem, exec);
    let oracle = battery_bellman(&cfg, &p);
    let mut worst = 0.0f64;
    let mut finite = 0;
    for (k, stage) in oracle.iter().enumerate() {
        for (i, row) in stage.iter().enumerate() {
            for (j, &want) in row.iter().enumerate() {
                let got = table.node_value(k, i, j);
                if want.is_infinite() || got.is_infinite() {
                    if want != got {
                        worst = f64::INFINITY;
                    }
                    continue;
                }
                finite += 1;
                worst = worst.max((got - want).abs() / (1.0 + want.abs()));
            }
        }
    }
    (worst, finite)
}

pub fn random_operating_point(rng: &mut impl Rng) -> (safe_discharge::battery::BatteryState, f64) {
    let x = safe_discharge::battery::BatteryState::new(
        rng.random_range(0.05..0.95),
        rng.random_range(0.0..0.12),
        rng.random_range(20.0..45.0),
        rng.random_range(20.0..55.0),
    );
    (x, rng.random_range(0.0..40.0))
}

/// Largest entrywise error between the analytic and central-difference
/// Jacobians, relative to the largest entry of the same row.
pub fn jacobian_error(x: &safe_discharge::battery::BatteryState, u: f64, p: &safe_discharge::battery::BatteryParams) -> f64 {
    use nalgebra::Vector4;
    use safe_discharge::battery::{BatteryState, continuous_jacobians, state_derivative};
    let (jx, ju) = continuous_jacobians(x, u, p);
    let f = |v: &Vector4<f64>, u: f64| state_derivative(&BatteryState::from_vector(v), u, p).unwrap();
    let x0 = x.to_vector();
    let mut worst: f64 = 0.0;
    let mut cols = Vec::new();
    for j in 0..5 {
        let scale = if j < 4 { x0[j].abs().max(1e-2) } else { u.abs().max(1.0) };
        let h = 1e-5 * scale;
        let (plus, minus) = if j < 4 {
            let mut e = Vector4::zeros();
            e[j] = h;
            (f(&(x0 + e), u), f(&(x0 - e), u))
        } else {
            (f(&x0, u + h), f(&x0, u - h))
        };
        cols.push((plus - minus) / (2.0 * h));
    }
    for i in 0..4 {
        let analytic: Vec<f64> = (0..4).map(|j| jx[(i, j)]).chain([ju[i]]).collect();
        let row_scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        for j in 0..5 {
            worst = worst.max((cols[j][i] - analytic[j]).abs() / row_scale);
        }
    }
    worst
}

/// Error of `propagate` at each step size against a run at a tenth of the
/// smallest one.
pub fn rk4_errors(dts: &[f64]) -> Vec<f64> {
    use nalgebra::Vector4;
    use safe_discharge::battery::{BatteryParams, BatteryState, propagate};
    let p = BatteryParams::default();
    let x0 = BatteryState::new(0.9, 0.0, 20.0, 20.0);
    let horizon = 40.0;
    let reference = propagate(&x0, 40.0, horizon, dts[dts.len() - 1] / 10.0, &p).unwrap().to_vector();
    dts.iter()
        .map(|&dt| {
            let x = propagate(&x0, 40.0, horizon, dt, &p).unwrap().to_vector();
            // V1 carries the fast mode; weight it as a scaled state.
            let d = x - reference;
            Vector4::new(d[0], d[1] * 10.0, d[2] / 10.0, d[3] / 10.0).amax()
        })
        .collect()
}


/// Worst violation of each set-algebra identity on one random instance of
/// three polygons, measured with support functions over 64 directions.
pub fn set_algebra_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let p = random_polygon(&mut r, 1.0);
    let q = random_polygon(&mut r, 0.5);
    let s = random_polygon(&mut r, 0.5);
    let small = random_small_polygon(&mut r, 0.15);
    let dirs = unit_directions_2d(64);
    let gap = |a: &Polytope, b: &Polytope| {
        dirs.iter().map(|d| (a.support(d).unwrap() - b.support(d).unwrap()).abs()).fold(0.0, f64::max)
    };
    let excess = |a: &Polytope, b: &Polytope| {
        dirs.iter().map(|d| (a.support(d).unwrap() - b.support(d).unwrap()).max(0.0)).fold(0.0, f64::max)
    };
    let pq = p.minkowski_sum(&q).unwrap();
    let (vp, vq) = (polygon_vertices(&p), polygon_vertices(&q));
    let sums: Vec<[f64; 2]> = vp.iter().flat_map(|a| vq.iter().map(move |b| [a[0] + b[0], a[1] + b[1]])).collect();
    let support_sum = dirs.iter().map(|d| (pq.support(d).unwrap() - vertex_support(&sums, d)).abs()).fold(0.0, f64::max);
    let facet_excess = {
        let back = p.pontryagin_diff(&small).unwrap().minkowski_sum(&small).unwrap();
        (0..p.n_constraints()).map(|i| (back.support(&p.row(i)).unwrap() - p.b_vector()[i]).max(0.0)).fold(0.0, f64::max)
    };
    let half = small.scale(0.5).unwrap();
    vec![
        ("support of sum", support_sum),
        ("commutativity", gap(&pq, &q.minkowski_sum(&p).unwrap())),
        (
            "associativity",
            gap(&pq.minkowski_sum(&s).unwrap(), &p.minkowski_sum(&q.minkowski_sum(&s).unwrap()).unwrap()),
        ),
        ("(P-Q)+Q inside P", facet_excess),
        ("(P+Q)-Q = P", gap(&pq.pontryagin_diff(&q).unwrap(), &p)),
        (
            "antitone difference",
            excess(&p.pontryagin_diff(&small).unwrap(), &p.pontryagin_diff(&half).unwrap()),
        ),
        ("canonical idempotent", gap(&pq.canonicalize().unwrap().canonicalize().unwrap(), &pq)),
    ]
}
