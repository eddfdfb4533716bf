//! TOML configuration schema and assembly of the benchmark runs.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::battery::{BatteryParams, BatteryState, Perturbation, make_perturbed_plant};
use crate::controllers::{DpConfig, DpSchedule, MpcConfig, MpcSettings, PiConfig, admissible_set, dp_solve, synthesize_mpc};
use crate::error::{Error, Result};
use crate::estimation::{KalmanConfig, KalmanDiag};
use crate::parallel::Execution;
use crate::polytope::Polytope;
use crate::simulation::{ControllerSpec, ProfileLibrary, SimConfig, identify_disturbance_set};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub battery: BatteryParams,
    pub plant: PlantSection,
    #[serde(default)]
    pub estimator: KalmanDiag,
    pub simulation: SimulationSection,
    #[serde(default)]
    pub reference: ReferenceSection,
    #[serde(rename = "controller")]
    pub controllers: Vec<ControllerEntry>,
    #[serde(default)]
    pub dp: DpConfig,
    #[serde(default)]
    pub mpc: MpcSettings,
    #[serde(default)]
    pub disturbance: DisturbanceSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub seed: u64,
    #[serde(default)]
    pub perturbation: Perturbation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub dt_plant: f64,
    pub t_max_sim: f64,
    pub soe_stop: f64,
    pub noise_seed: u64,
    #[serde(default = "default_true")]
    pub noise_enabled: bool,
    pub t_constraint: f64,
    #[serde(default)]
    pub initial_soc_error: f64,
}

fn default_true() -> bool {
    true
}

/// Slow reference discharge that defines the nominal energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceSection {
    pub c_rate: f64,
    pub v_cutoff: f64,
    pub cutoff_c_rate: f64,
    pub dt: f64,
}

impl Default for ReferenceSection {
    fn default() -> Self {
        Self { c_rate: 0.1, v_cutoff: 3.45, cutoff_c_rate: 0.06, dt: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DisturbanceSection {
    pub inflation: f64,
    pub profiles: ProfileLibrary,
}

impl Default for DisturbanceSection {
    fn default() -> Self {
        Self { inflation: 1.1, profiles: ProfileLibrary::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ControllerEntry {
    Constant { name: String, dt_control: f64, current: f64, u_max: f64 },
    CcCv { name: String, dt_control: f64, cc_current: f64, v_cutoff: f64, u_max: f64, pi: PiConfig },
    CcCt { name: String, dt_control: f64, cc_current: f64, t_ref: f64, u_max: f64, pi: PiConfig },
    Dp { name: String, dt_control: f64 },
    Mpc { name: String, dt_control: f64 },
}

impl ControllerEntry {
    pub fn name(&self) -> &str {
        match self {
            ControllerEntry::Constant { name, .. }
            | ControllerEntry::CcCv { name, .. }
            | ControllerEntry::CcCt { name, .. }
            | ControllerEntry::Dp { name, .. }
            | ControllerEntry::Mpc { name, .. } => name,
        }
    }

    pub fn dt_control(&self) -> f64 {
        match self {
            ControllerEntry::Constant { dt_control, .. }
            | ControllerEntry::CcCv { dt_control, .. }
            | ControllerEntry::CcCt { dt_control, .. }
            | ControllerEntry::Dp { dt_control, .. }
            | ControllerEntry::Mpc { dt_control, .. } => *dt_control,
        }
    }
}

/// One-based line of a byte offset.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| {
            let where_ = e.span().map(|s| format!("line {}: ", line_of(text, s.start))).unwrap_or_default();
            Error::Config(format!("{where_}{}", e.message()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = std::fs::read(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        let text = std::str::from_utf8(&bytes).map_err(|e| Error::Config(format!("config is not UTF-8: {e}")))?;
        Ok((Self::from_toml_str(text)?, bytes))
    }

    pub fn validate(&self) -> Result<()> {
        self.battery.validate()?;
        self.plant.perturbation.validate()?;
        KalmanConfig::try_from(&self.estimator)?;
        self.dp.validate()?;
        self.mpc.validate()?;
        if self.controllers.is_empty() {
            return Err(Error::Config("at least one [[controller]] is required".into()));
        }
        let mut names: Vec<&str> = self.controllers.iter().map(ControllerEntry::name).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("controller names must be unique".into()));
        }
        Ok(())
    }

    pub fn controller(&self, name: &str) -> Option<&ControllerEntry> {
        self.controllers.iter().find(|c| c.name() == name)
    }

    pub fn plant_params(&self) -> Result<BatteryParams> {
        let mut plant = make_perturbed_plant(&self.battery, &self.plant.perturbation, self.plant.seed)?;
        plant.energy_nominal = self.battery.energy_nominal;
        Ok(plant)
    }

    pub fn disturbance_set(&self, exec: Execution) -> Result<Polytope> {
        identify_disturbance_set(
            &self.plant_params()?,
            &self.battery,
            &self.disturbance.profiles,
            self.mpc.dt,
            self.disturbance.inflation,
            exec,
        )
    }

    pub fn synthesize(&self, w_set: &Polytope) -> Result<MpcConfig> {
        let model = self.mpc.synthesis_model(&self.battery)?;
        let constraints = admissible_set(self.mpc.t_max, self.mpc.u_max)?;
        synthesize_mpc(&model, &constraints, w_set, &self.mpc)
    }

    pub fn dp_schedule(&self, exec: Execution) -> Result<DpSchedule> {
        dp_solve(&BatteryState::full(self.battery.t_ambient), &self.dp, &self.battery, exec)
    }

    /// Synthesizes whatever the selected controllers need and returns one
    /// run configuration per entry, in file order. `only` restricts the
    /// set to controllers with those names.
    pub fn build_runs(&self, only: Option<&[String]>, exec: Execution) -> Result<Prepared> {
        let plant = self.plant_params()?;
        let estimator = KalmanConfig::try_from(&self.estimator)?;
        let selected: Vec<&ControllerEntry> = match only {
            None => self.controllers.iter().collect(),
            Some(names) => {
                let mut v = Vec::new();
                for n in names {
                    v.push(self.controller(n).ok_or_else(|| Error::Config(format!("unknown controller '{n}'")))?);
                }
                v
            }
        };
        let mut prepared = Prepared { runs: Vec::new(), disturbance: None, mpc: None, dp: None };
        for entry in selected {
            let spec = match entry {
                ControllerEntry::Constant { current, u_max, .. } => ControllerSpec::Constant { current: *current, u_max: *u_max },
                ControllerEntry::CcCv { cc_current, v_cutoff, u_max, pi, .. } => {
                    ControllerSpec::CcCv { pi: pi.clone(), cc_current: *cc_current, v_cutoff: *v_cutoff, u_max: *u_max }
                }
                ControllerEntry::CcCt { cc_current, t_ref, u_max, pi, .. } => {
                    ControllerSpec::CcCt { pi: pi.clone(), cc_current: *cc_current, t_ref: *t_ref, u_max: *u_max }
                }
                ControllerEntry::Dp { .. } => {
                    if prepared.dp.is_none() {
                        prepared.dp = Some(Arc::new(self.dp_schedule(exec)?));
                    }
                    ControllerSpec::Dp { schedule: Arc::clone(prepared.dp.as_ref().expect("set above")), u_max: self.dp.u_max }
                }
                ControllerEntry::Mpc { .. } => {
                    if prepared.mpc.is_none() {
                        let w = self.disturbance_set(exec)?;
                        prepared.mpc = Some(Arc::new(self.synthesize(&w)?));
                        prepared.disturbance = Some(w);
                    }
                    ControllerSpec::Mpc { cfg: Arc::clone(prepared.mpc.as_ref().expect("set above")) }
                }
            };
            prepared.runs.push(SimConfig {
                name: entry.name().to_string(),
                plant_params: plant.clone(),
                model_params: self.battery.clone(),
                controller: spec,
                estimator: estimator.clone(),
                dt_control: entry.dt_control(),
                dt_plant: self.simulation.dt_plant,
                t_max_sim: self.simulation.t_max_sim,
                soe_stop: self.simulation.soe_stop,
                noise_seed: self.simulation.noise_seed,
                noise_enabled: self.simulation.noise_enabled,
                t_constraint: self.simulation.t_constraint,
                initial_soc_error: self.simulation.initial_soc_error,
            });
        }
        Ok(prepared)
    }
}

/// Run configurations plus the synthesis products they share.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub runs: Vec<SimConfig>,
    pub disturbance: Option<Polytope>,
    pub mpc: Option<Arc<MpcConfig>>,
    pub dp: Option<Arc<DpSchedule>>,
}
