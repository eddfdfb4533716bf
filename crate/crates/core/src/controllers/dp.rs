//! Backward value iteration on a two-dimensional `(SoC, Tc)` grid.

use serde::{Deserialize, Serialize};

use super::{Controller, ControllerCommand, Diagnostics, Observation};
use crate::battery::{BatteryParams, BatteryState, EnergyAccount, integrate_step, soe_step, terminal_voltage};
use crate::error::{Error, Result};
use crate::parallel::{Execution, map_range};

/// Strictly increasing node list, written either explicitly or as
/// `{ lo, hi, n }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct Grid(Vec<f64>);

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum GridSpec {
    Nodes(Vec<f64>),
    Uniform { lo: f64, hi: f64, n: usize },
}

impl TryFrom<GridSpec> for Grid {
    type Error = Error;
    fn try_from(s: GridSpec) -> Result<Self> {
        match s {
            GridSpec::Nodes(v) => Grid::new(v),
            GridSpec::Uniform { lo, hi, n } => Grid::uniform(lo, hi, n),
        }
    }
}

impl From<Grid> for GridSpec {
    fn from(g: Grid) -> Self {
        GridSpec::Nodes(g.0)
    }
}

impl Grid {
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() || nodes.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("grid must be a nonempty list of finite nodes".into()));
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("grid nodes must be strictly increasing".into()));
        }
        Ok(Self(nodes))
    }

    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n == 1 {
            return Self::new(vec![lo]);
        }
        if n == 0 || !(hi > lo) {
            return Err(Error::Config(format!("uniform grid needs n >= 1 and lo < hi (got {lo}, {hi}, {n})")));
        }
        Self::new((0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect())
    }

    pub fn nodes(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn contains(&self, v: f64) -> bool {
        v >= self.0[0] - 1e-12 && v <= self.0[self.0.len() - 1] + 1e-12
    }

    /// `(k, t)` with `v ≈ (1 − t)·node[k] + t·node[k+1]`, clamped.
    fn locate(&self, v: f64) -> (usize, f64) {
        let n = self.0.len();
        if n == 1 || v <= self.0[0] {
            return (0, 0.0);
        }
        if v >= self.0[n - 1] {
            return (n - 2, 1.0);
        }
        let k = self.0.partition_point(|&x| x <= v) - 1;
        (k, (v - self.0[k]) / (self.0[k + 1] - self.0[k]))
    }
}

/// A finite-horizon problem whose state is a point of the 2-D grid.
pub trait DpProblem: Sync {
    fn grid(&self) -> (&Grid, &Grid);
    fn controls(&self) -> &[f64];
    fn n_stages(&self) -> usize;
    /// Successor and stage cost, or `None` when `u` is inadmissible.
    fn step(&self, x: [f64; 2], u: f64) -> Option<([f64; 2], f64)>;
    fn terminal_cost(&self, x: [f64; 2]) -> f64;
}

#[derive(Debug, Clone)]
pub struct ValueTable {
    x_grid: Grid,
    y_grid: Grid,
    /// `values[k][i * ny + j]`, stage `k = 0..=N`.
    values: Vec<Vec<f64>>,
}

impl ValueTable {
    pub fn n_stages(&self) -> usize {
        self.values.len() - 1
    }

    pub fn node_value(&self, stage: usize, i: usize, j: usize) -> f64 {
        self.values[stage][i * self.y_grid.len() + j]
    }

    /// Bilinear interpolation; nodes with zero weight are ignored so an
    /// infeasible neighbour only matters when it contributes.
    pub fn value(&self, stage: usize, x: [f64; 2]) -> f64 {
        let ny = self.y_grid.len();
        let v = &self.values[stage];
        let (i, ti) = self.x_grid.locate(x[0]);
        let (j, tj) = self.y_grid.locate(x[1]);
        let corners = [
            (i, j, (1.0 - ti) * (1.0 - tj)),
            (i + 1, j, ti * (1.0 - tj)),
            (i, j + 1, (1.0 - ti) * tj),
            (i + 1, j + 1, ti * tj),
        ];
        let mut acc = 0.0;
        for (a, b, w) in corners {
            if w == 0.0 {
                continue;
            }
            let node = v[a * ny + b];
            if node == f64::INFINITY {
                return f64::INFINITY;
            }
            acc += w * node;
        }
        acc
    }

    /// Minimizing control at `stage`; exact ties go to the largest `u`.
    pub fn best_action<P: DpProblem + ?Sized>(&self, problem: &P, stage: usize, x: [f64; 2]) -> Option<(f64, f64)> {
        let mut best: Option<(f64, f64)> = None;
        for &u in problem.controls() {
            let Some((next, cost)) = problem.step(x, u) else { continue };
            let total = cost + self.value(stage + 1, next);
            if !total.is_finite() {
                continue;
            }
            match best {
                Some((_, b)) if total > b => {}
                Some((bu, b)) if total == b && u < bu => {}
                _ => best = Some((u, total)),
            }
        }
        best
    }
}

pub fn dp_value_iteration<P: DpProblem + ?Sized>(problem: &P, exec: Execution) -> ValueTable {
    let (xg, yg) = problem.grid();
    let (nx, ny) = (xg.len(), yg.len());
    let n = problem.n_stages();
    let node = |idx: usize| [xg.nodes()[idx / ny], yg.nodes()[idx % ny]];
    let terminal: Vec<f64> = (0..nx * ny).map(|idx| problem.terminal_cost(node(idx))).collect();
    let mut table = ValueTable { x_grid: xg.clone(), y_grid: yg.clone(), values: vec![Vec::new(); n + 1] };
    table.values[n] = terminal;
    for k in (0..n).rev() {
        let stage: Vec<f64> = map_range(exec, nx * ny, |idx| {
            table.best_action(problem, k, node(idx)).map_or(f64::INFINITY, |(_, v)| v)
        });
        table.values[k] = stage;
    }
    table
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpConfig {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    pub t_max: f64,
    pub u_max: f64,
    pub dt: f64,
    /// Number of stages; the rollout stops once the cell is discharged.
    pub horizon: usize,
    pub soe_stop: f64,
    pub soc_grid: Grid,
    pub tc_grid: Grid,
    pub u_grid: Grid,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self {
            w1: 1e5,
            w2: 1e-5,
            w3: 10.0,
            w4: 1e-5,
            t_max: 40.0,
            u_max: 40.0,
            dt: 20.0,
            horizon: 1440,
            soe_stop: 1e-3,
            soc_grid: Grid::uniform(0.0, 1.0, 51).expect("valid"),
            tc_grid: Grid::uniform(15.0, 55.0, 41).expect("valid"),
            u_grid: Grid::uniform(0.0, 40.0, 21).expect("valid"),
        }
    }
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("w1", self.w1), ("w2", self.w2), ("w3", self.w3), ("w4", self.w4)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("dp weight {name} must be finite and >= 0")));
            }
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config("dp dt must be positive".into()));
        }
        if !(self.u_max > 0.0) || self.t_max.is_nan() {
            return Err(Error::Config("dp u_max must be positive and t_max a number".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("dp horizon must be at least one stage".into()));
        }
        if self.u_grid.nodes()[0] < 0.0 || self.u_grid.nodes()[self.u_grid.len() - 1] > self.u_max + 1e-12 {
            return Err(Error::Config("dp u_grid must lie inside [0, u_max]".into()));
        }
        Ok(())
    }
}

/// The battery discharge problem on `(SoC, Tc)`: polarization voltage at
/// its steady value `R1·I` and surface temperature at the conduction
/// divider between core and ambient, which makes one stage of the core
/// temperature an exact exponential.
///
/// Each step before completion costs `1 + w2·u`; completion (open-circuit
/// energy estimate below `soe_stop`) is absorbing at `w4·u` per step; a
/// node still unfinished at the horizon pays `w3·N + w1·SoE`.
pub struct BatteryDp<'a> {
    pub cfg: &'a DpConfig,
    pub params: &'a BatteryParams,
    controls: Vec<f64>,
    decay: f64,
    energy_scale: f64,
}

impl<'a> BatteryDp<'a> {
    pub fn new(cfg: &'a DpConfig, params: &'a BatteryParams) -> Result<Self> {
        cfg.validate()?;
        params.validate()?;
        let tau = (params.r_u + params.r_c) * params.c_c;
        Ok(Self {
            cfg,
            params,
            controls: cfg.u_grid.nodes().to_vec(),
            decay: (-cfg.dt / tau).exp(),
            energy_scale: 3600.0 * params.capacity_nominal / params.energy_nominal,
        })
    }

    /// Open-circuit state of energy as a function of SoC alone.
    pub fn soe_of_soc(&self, soc: f64) -> f64 {
        1.0 - self.energy_scale * self.params.ocv_curve.integral(soc.clamp(0.0, 1.0), 1.0)
    }

    fn finished(&self, soc: f64) -> bool {
        self.soe_of_soc(soc) < self.cfg.soe_stop
    }

    pub fn next_state(&self, x: [f64; 2], u: f64) -> [f64; 2] {
        let p = self.params;
        let soc = (x[0] - u * self.cfg.dt / (3600.0 * p.capacity_nominal)).max(0.0);
        let steady = p.t_ambient + (p.r0 + p.r1) * u * u * (p.r_u + p.r_c);
        [soc, steady + (x[1] - steady) * self.decay]
    }
}

impl DpProblem for BatteryDp<'_> {
    fn grid(&self) -> (&Grid, &Grid) {
        (&self.cfg.soc_grid, &self.cfg.tc_grid)
    }

    fn controls(&self) -> &[f64] {
        &self.controls
    }

    fn n_stages(&self) -> usize {
        self.cfg.horizon
    }

    fn step(&self, x: [f64; 2], u: f64) -> Option<([f64; 2], f64)> {
        if self.finished(x[0]) {
            return Some((x, self.cfg.w4 * u));
        }
        let next = self.next_state(x, u);
        if next[1] > self.cfg.t_max || !self.cfg.tc_grid.contains(next[1]) {
            return None;
        }
        Some((next, 1.0 + self.cfg.w2 * u))
    }

    fn terminal_cost(&self, x: [f64; 2]) -> f64 {
        if self.finished(x[0]) {
            0.0
        } else {
            self.cfg.w3 * self.cfg.horizon as f64 + self.cfg.w1 * self.soe_of_soc(x[0]).abs()
        }
    }
}

/// Greedy rollout of the value table on the full nominal model. Once the
/// grid model reports completion the remaining charge is drawn at the
/// largest grid current that keeps the nominal core below `t_max`.
pub fn dp_solve(x0: &BatteryState, cfg: &DpConfig, params: &BatteryParams, exec: Execution) -> Result<DpSchedule> {
    let problem = BatteryDp::new(cfg, params)?;
    if !cfg.soc_grid.contains(x0.soc) || !cfg.tc_grid.contains(x0.t_c) {
        return Err(Error::Dp(format!("initial state (SoC {}, Tc {}) outside the grid", x0.soc, x0.t_c)));
    }
    let table = dp_value_iteration(&problem, exec);
    let mut x = *x0;
    let mut account = EnergyAccount::full();
    let mut currents = Vec::new();
    let mut u_prev = 0.0;
    let mut v_prev = terminal_voltage(&x, 0.0, params)?;
    for k in 0..cfg.horizon {
        if account.soe <= cfg.soe_stop {
            break;
        }
        let u = if problem.finished(x.soc) {
            tail_current(&x, cfg, params)?
        } else {
            let (u, _) = table.best_action(&problem, k, [x.soc, x.t_c]).ok_or_else(|| {
                Error::Dp(format!("no admissible current at stage {k} (SoC {:.4}, Tc {:.3})", x.soc, x.t_c))
            })?;
            u
        };
        account = soe_step(&account, v_prev, u_prev, cfg.dt, params)?;
        x = crate::battery::propagate(&x, u, cfg.dt, 0.1, params)?;
        v_prev = terminal_voltage(&x, u, params)?;
        u_prev = u;
        currents.push(u);
    }
    Ok(DpSchedule { currents, dt: cfg.dt, table })
}

fn tail_current(x: &BatteryState, cfg: &DpConfig, params: &BatteryParams) -> Result<f64> {
    let mut nodes: Vec<f64> = cfg.u_grid.nodes().to_vec();
    nodes.reverse();
    for u in nodes {
        let mut probe = *x;
        let mut safe = true;
        for _ in 0..((cfg.dt / 0.1).round() as usize) {
            probe = integrate_step(&probe, u, 0.1, params)?;
            if probe.t_c > cfg.t_max {
                safe = false;
                break;
            }
        }
        if safe {
            return Ok(u);
        }
    }
    Ok(0.0)
}

#[derive(Debug, Clone)]
pub struct DpSchedule {
    pub currents: Vec<f64>,
    pub dt: f64,
    pub table: ValueTable,
}

/// Plays a precomputed schedule open loop, holding the last value.
#[derive(Debug, Clone)]
pub struct DpController {
    currents: Vec<f64>,
    dt: f64,
    u_max: f64,
}

impl DpController {
    pub fn new(schedule: &DpSchedule, u_max: f64) -> Self {
        Self { currents: schedule.currents.clone(), dt: schedule.dt, u_max }
    }
}

impl Controller for DpController {
    fn step(&mut self, obs: &Observation) -> Result<ControllerCommand> {
        let k = (obs.t / self.dt + 1e-9).floor() as usize;
        let u = self.currents.get(k).or(self.currents.last()).copied().unwrap_or(0.0);
        Ok(ControllerCommand::saturated(u, self.u_max, Diagnostics::phase("open-loop")))
    }
}
