use std::fmt::Write as _;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::battery::{BatteryParams, BatteryState, EnergyAccount, integrate_step, terminal_voltage};
use crate::controllers::{
    CcCtController, CcCvController, ConstantCurrent, Controller, ControllerCommand, DpController, DpSchedule, MpcConfig,
    MpcController, Observation, PiConfig,
};
use crate::error::{Error, Result};
use crate::estimation::{EstimatorState, KalmanConfig, kf_predict, kf_update, soe_tracker_step};

/// Everything a single closed-loop run needs.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub name: String,
    pub plant_params: BatteryParams,
    pub model_params: BatteryParams,
    pub controller: ControllerSpec,
    pub estimator: KalmanConfig,
    pub dt_control: f64,
    pub dt_plant: f64,
    pub t_max_sim: f64,
    pub soe_stop: f64,
    pub noise_seed: u64,
    pub noise_enabled: bool,
    pub t_constraint: f64,
    /// Offset added to the estimator's initial SoC.
    pub initial_soc_error: f64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.plant_params.validate()?;
        self.model_params.validate()?;
        if !(self.dt_control > 0.0 && self.dt_plant > 0.0 && self.t_max_sim > 0.0) {
            return Err(Error::Config("dt_control, dt_plant and t_max_sim must be positive".into()));
        }
        let ratio = self.dt_control / self.dt_plant;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return Err(Error::Config(format!(
                "dt_plant ({}) must divide dt_control ({})",
                self.dt_plant, self.dt_control
            )));
        }
        if !(self.soe_stop >= 0.0) {
            return Err(Error::Config("soe_stop must be >= 0".into()));
        }
        Ok(())
    }

    fn substeps(&self) -> usize {
        (self.dt_control / self.dt_plant).round() as usize
    }
}

/// Controller selection; heavy synthesis products are shared.
#[derive(Debug, Clone)]
pub enum ControllerSpec {
    Constant { current: f64, u_max: f64 },
    CcCv { pi: PiConfig, cc_current: f64, v_cutoff: f64, u_max: f64 },
    CcCt { pi: PiConfig, cc_current: f64, t_ref: f64, u_max: f64 },
    Dp { schedule: Arc<DpSchedule>, u_max: f64 },
    Mpc { cfg: Arc<MpcConfig> },
}

impl ControllerSpec {
    pub fn build(&self, model_params: &BatteryParams) -> Result<Box<dyn Controller>> {
        Ok(match self {
            ControllerSpec::Constant { current, u_max } => Box::new(ConstantCurrent { current: *current, u_max: *u_max }),
            ControllerSpec::CcCv { pi, cc_current, v_cutoff, u_max } => {
                Box::new(CcCvController::new(pi.clone(), *cc_current, *v_cutoff, *u_max)?)
            }
            ControllerSpec::CcCt { pi, cc_current, t_ref, u_max } => {
                Box::new(CcCtController::new(pi.clone(), *cc_current, *t_ref, *u_max)?)
            }
            ControllerSpec::Dp { schedule, u_max } => Box::new(DpController::new(schedule, *u_max)),
            ControllerSpec::Mpc { cfg } => Box::new(MpcController::new((**cfg).clone(), model_params.clone())),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub i_applied: f64,
    pub v_terminal: f64,
    pub soc_true: f64,
    pub soe: f64,
    pub t_s: f64,
    pub t_c_true: f64,
    pub t_c_est: f64,
    pub command: ControllerCommand,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    Timeout,
    Failed(String),
}

impl RunStatus {
    pub fn label(&self) -> &str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::Timeout => "timeout",
            RunStatus::Failed(_) => "failed",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimTrace {
    pub name: String,
    pub rows: Vec<TraceRow>,
    pub status: RunStatus,
    /// Time at which the tracked SoE reached `soe_stop`, if it did.
    pub discharge_time: Option<f64>,
    /// Maximum true core temperature over every plant sub-step.
    pub max_core_temp: f64,
    pub final_soe: f64,
    pub extracted_energy: f64,
    pub tube_violations: usize,
    pub fallbacks: usize,
}

pub const TRACE_COLUMNS: [&str; 13] = [
    "t",
    "i_applied",
    "v_terminal",
    "soc_true",
    "soe",
    "t_s",
    "t_c_true",
    "t_c_est",
    "phase",
    "u_nominal",
    "qp_iterations",
    "tube_contained",
    "fallback",
];

impl SimTrace {
    /// Header row and one line per control instant, preceded by `# ` lines.
    pub fn to_csv(&self, preamble: &[String]) -> String {
        let mut s = String::new();
        for line in preamble {
            let _ = writeln!(s, "# {line}");
        }
        let _ = writeln!(s, "# status={}", self.status.label());
        s.push_str(&TRACE_COLUMNS.join(","));
        s.push('\n');
        for r in &self.rows {
            let d = &r.command.diagnostics;
            let tube = match d.tube_contained {
                Some(true) => "1",
                Some(false) => "0",
                None => "",
            };
            let nominal = if d.nominal_current.is_nan() { String::new() } else { d.nominal_current.to_string() };
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.t,
                r.i_applied,
                r.v_terminal,
                r.soc_true,
                r.soe,
                r.t_s,
                r.t_c_true,
                r.t_c_est,
                d.phase,
                nominal,
                d.qp_iterations,
                tube,
                u8::from(d.fallback)
            );
        }
        s
    }
}

struct Sensor {
    rng: ChaCha8Rng,
    ts: Normal<f64>,
    v: Normal<f64>,
    enabled: bool,
}

impl Sensor {
    fn new(cfg: &SimConfig) -> Result<Self> {
        let r = cfg.estimator.measurement_cov;
        let normal = |var: f64| Normal::new(0.0, var.sqrt()).map_err(|e| Error::Config(format!("noise: {e}")));
        Ok(Self { rng: ChaCha8Rng::seed_from_u64(cfg.noise_seed), ts: normal(r[(0, 0)])?, v: normal(r[(1, 1)])?, enabled: cfg.noise_enabled })
    }

    fn ts(&mut self, x: &BatteryState) -> f64 {
        x.t_s + if self.enabled { self.ts.sample(&mut self.rng) } else { 0.0 }
    }

    fn v(&mut self, x: &BatteryState, u: f64, params: &BatteryParams) -> Result<f64> {
        let v = terminal_voltage(x, u, params)?;
        Ok(v + if self.enabled { self.v.sample(&mut self.rng) } else { 0.0 })
    }
}

/// Runs plant, estimator and controller until the tracked SoE reaches
/// `soe_stop` or `t_max_sim` elapses. Each control instant: measure
/// `[Ts, V]` under the held input, correct the estimate, query the
/// controller, measure `V` under the new input for the energy tracker,
/// integrate the plant, predict the estimate.
pub fn run_closed_loop(cfg: &SimConfig) -> Result<SimTrace> {
    cfg.validate()?;
    let mut controller = cfg.controller.build(&cfg.model_params)?;
    run_with_controller(cfg, controller.as_mut())
}

pub fn run_with_controller(cfg: &SimConfig, controller: &mut dyn Controller) -> Result<SimTrace> {
    cfg.validate()?;
    let plant = &cfg.plant_params;
    let model = &cfg.model_params;
    let mut sensor = Sensor::new(cfg)?;
    let mut x = BatteryState::full(plant.t_ambient);
    let mut x0_est = BatteryState::full(model.t_ambient);
    x0_est.soc += cfg.initial_soc_error;
    let mut est = EstimatorState::new(x0_est, &cfg.estimator, 0.0, cfg.dt_control, model)?;
    let mut account = EnergyAccount::full();
    let mut u_prev = 0.0;
    let mut t = 0.0;
    let mut k: u64 = 0;
    let substeps = cfg.substeps();
    let mut trace = SimTrace {
        name: cfg.name.clone(),
        rows: Vec::new(),
        status: RunStatus::Timeout,
        discharge_time: None,
        max_core_temp: x.t_c,
        final_soe: account.soe,
        extracted_energy: 0.0,
        tube_violations: 0,
        fallbacks: 0,
    };

    let outcome: Result<()> = (|| {
        while t < cfg.t_max_sim - 1e-9 {
            let z = [sensor.ts(&x), sensor.v(&x, u_prev, plant)?];
            est = kf_update(&est, z, u_prev, model, &cfg.estimator)?;
            let obs = Observation { t, dt: cfg.dt_control, x_hat: est.x_hat, v_measured: z[1], soe: account.soe, u_prev };
            let command = controller.step(&obs)?;
            if let Some(false) = command.diagnostics.tube_contained {
                trace.tube_violations += 1;
            }
            trace.fallbacks += usize::from(command.diagnostics.fallback);
            let u = command.current;
            let v_now = sensor.v(&x, u, plant)?;
            trace.rows.push(TraceRow {
                t,
                i_applied: u,
                v_terminal: terminal_voltage(&x, u, plant)?,
                soc_true: x.soc,
                soe: account.soe,
                t_s: x.t_s,
                t_c_true: x.t_c,
                t_c_est: est.x_hat.t_c,
                command,
            });

            let candidate = soe_tracker_step(&account, v_now, u, cfg.dt_control, model)?;
            let mut n_sub = substeps;
            let finishing = candidate.soe <= cfg.soe_stop;
            if finishing {
                let rate = model.eta * v_now * u / model.energy_nominal;
                let needed = if rate > 0.0 { (account.soe - cfg.soe_stop) / rate } else { 0.0 };
                n_sub = ((needed / cfg.dt_plant - 1e-9).ceil().max(1.0) as usize).min(substeps);
            }
            let duration = n_sub as f64 * cfg.dt_plant;
            for _ in 0..n_sub {
                x = integrate_step(&x, u, cfg.dt_plant, plant)?;
                trace.max_core_temp = trace.max_core_temp.max(x.t_c);
            }
            account = soe_tracker_step(&account, v_now, u, duration, model)?;
            k += 1;
            t = if finishing { t + duration } else { k as f64 * cfg.dt_control };
            if finishing {
                trace.discharge_time = Some(t);
                trace.status = RunStatus::Completed;
                return Ok(());
            }
            est = kf_predict(&est, u, model, cfg.dt_control, &cfg.estimator)?;
            u_prev = u;
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        trace.status = RunStatus::Failed(e.to_string());
    }
    trace.final_soe = account.soe;
    trace.extracted_energy = account.extracted;
    Ok(trace)
}
