use serde::{Deserialize, Serialize};

use super::{Controller, ControllerCommand, Diagnostics, Observation};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiConfig {
    pub kp: f64,
    pub ki: f64,
    pub setpoint: f64,
    pub output_limits: [f64; 2],
    #[serde(default = "yes")]
    pub anti_windup: bool,
}

fn yes() -> bool {
    true
}

impl PiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kp.is_finite() && self.ki.is_finite() && self.setpoint.is_finite()) {
            return Err(Error::Config("PI gains and setpoint must be finite".into()));
        }
        let [lo, hi] = self.output_limits;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Config(format!("PI output limits [{lo}, {hi}] are not ordered")));
        }
        Ok(())
    }

    pub fn cv_default() -> Self {
        Self { kp: 50.0, ki: 10.0, setpoint: 3.45, output_limits: [0.0, 40.0], anti_windup: true }
    }

    pub fn ct_default(t_ref: f64) -> Self {
        Self { kp: 60.0, ki: 0.0061, setpoint: t_ref, output_limits: [0.0, 40.0], anti_windup: true }
    }
}

/// Positional PI with clamping anti-windup. The integrator holds the
/// output at zero error, so seeding it with the last command gives a
/// bumpless hand-over.
#[derive(Debug, Clone, PartialEq)]
pub struct PiState {
    pub integral: f64,
}

impl PiState {
    pub fn seeded(output: f64) -> Self {
        Self { integral: output }
    }

    pub fn step(&mut self, error: f64, dt: f64, cfg: &PiConfig) -> f64 {
        let [lo, hi] = cfg.output_limits;
        let candidate = self.integral + cfg.ki * error * dt;
        let raw = cfg.kp * error + candidate;
        let saturated_high = raw > hi && error > 0.0;
        let saturated_low = raw < lo && error < 0.0;
        if !cfg.anti_windup || !(saturated_high || saturated_low) {
            self.integral = candidate;
        }
        if cfg.anti_windup {
            self.integral = self.integral.clamp(lo, hi);
        }
        (cfg.kp * error + self.integral).clamp(lo, hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    ConstantCurrent,
    Regulating,
}

impl Phase {
    fn label(self, regulating: &'static str) -> &'static str {
        match self {
            Phase::ConstantCurrent => "cc",
            Phase::Regulating => regulating,
        }
    }
}

/// One CC-CV decision. Leaves CC as soon as the terminal voltage sags to
/// `v_cutoff`; then regulates `V` at `cfg.setpoint`.
pub fn cc_cv_step(
    phase: &mut Phase,
    pi: &mut PiState,
    v_measured: f64,
    dt: f64,
    cfg: &PiConfig,
    cc_current: f64,
    v_cutoff: f64,
) -> f64 {
    if *phase == Phase::ConstantCurrent && v_measured <= v_cutoff {
        *phase = Phase::Regulating;
        *pi = PiState::seeded(cc_current);
    }
    match phase {
        Phase::ConstantCurrent => cc_current,
        Phase::Regulating => pi.step(v_measured - cfg.setpoint, dt, cfg),
    }
}

/// One CC-CT decision on the estimated core temperature.
pub fn cc_ct_step(
    phase: &mut Phase,
    pi: &mut PiState,
    tc_estimate: f64,
    dt: f64,
    cfg: &PiConfig,
    cc_current: f64,
    t_ref: f64,
) -> f64 {
    if *phase == Phase::ConstantCurrent && tc_estimate >= t_ref {
        *phase = Phase::Regulating;
        *pi = PiState::seeded(cc_current);
    }
    match phase {
        Phase::ConstantCurrent => cc_current,
        Phase::Regulating => pi.step(t_ref - tc_estimate, dt, cfg),
    }
}

#[derive(Debug, Clone)]
pub struct CcCvController {
    pub cfg: PiConfig,
    pub cc_current: f64,
    pub v_cutoff: f64,
    pub u_max: f64,
    phase: Phase,
    pi: PiState,
}

impl CcCvController {
    pub fn new(cfg: PiConfig, cc_current: f64, v_cutoff: f64, u_max: f64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, cc_current, v_cutoff, u_max, phase: Phase::ConstantCurrent, pi: PiState::seeded(cc_current) })
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }
}

impl Controller for CcCvController {
    fn step(&mut self, obs: &Observation) -> Result<ControllerCommand> {
        let u = cc_cv_step(&mut self.phase, &mut self.pi, obs.v_measured, obs.dt, &self.cfg, self.cc_current, self.v_cutoff);
        Ok(ControllerCommand::saturated(u, self.u_max, Diagnostics::phase(self.phase.label("cv"))))
    }
}

#[derive(Debug, Clone)]
pub struct CcCtController {
    pub cfg: PiConfig,
    pub cc_current: f64,
    pub t_ref: f64,
    pub u_max: f64,
    phase: Phase,
    pi: PiState,
}

impl CcCtController {
    pub fn new(cfg: PiConfig, cc_current: f64, t_ref: f64, u_max: f64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, cc_current, t_ref, u_max, phase: Phase::ConstantCurrent, pi: PiState::seeded(cc_current) })
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }
}

impl Controller for CcCtController {
    fn step(&mut self, obs: &Observation) -> Result<ControllerCommand> {
        let u = cc_ct_step(&mut self.phase, &mut self.pi, obs.x_hat.t_c, obs.dt, &self.cfg, self.cc_current, self.t_ref);
        Ok(ControllerCommand::saturated(u, self.u_max, Diagnostics::phase(self.phase.label("ct"))))
    }
}
