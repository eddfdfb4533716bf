use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-linear open-circuit voltage table over state of charge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct OcvCurve {
    soc: Vec<f64>,
    volts: Vec<f64>,
}

impl OcvCurve {
    pub fn new(points: &[(f64, f64)]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Config("OCV curve is empty".into()));
        }
        let soc: Vec<f64> = points.iter().map(|p| p.0).collect();
        let volts: Vec<f64> = points.iter().map(|p| p.1).collect();
        let curve = Self { soc, volts };
        curve.validate()?;
        Ok(curve)
    }

    fn validate(&self) -> Result<()> {
        if self.soc.is_empty() {
            return Err(Error::Config("OCV curve is empty".into()));
        }
        for (&s, &v) in self.soc.iter().zip(&self.volts) {
            if !s.is_finite() || !v.is_finite() {
                return Err(Error::Config("OCV curve contains non-finite values".into()));
            }
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Config(format!("OCV breakpoint {s} outside [0, 1]")));
            }
        }
        for k in 1..self.soc.len() {
            if self.soc[k] <= self.soc[k - 1] {
                return Err(Error::Config("OCV SoC breakpoints must be strictly increasing".into()));
            }
            if self.volts[k] <= self.volts[k - 1] {
                return Err(Error::Config("OCV voltages must be strictly increasing".into()));
            }
        }
        Ok(())
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.soc.iter().copied().zip(self.volts.iter().copied())
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.soc
    }

    pub fn voltages(&self) -> &[f64] {
        &self.volts
    }

    /// Map `volts` through `f(soc, v)` keeping the breakpoints.
    pub fn map_voltages(&self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let volts = self.soc.iter().zip(&self.volts).map(|(&s, &v)| f(s, v)).collect();
        let out = Self { soc: self.soc.clone(), volts };
        out.validate()?;
        Ok(out)
    }

    /// Index `k` of the segment `[soc[k], soc[k+1]]` containing `soc`, or
    /// `None` when the curve has a single point.
    fn segment(&self, soc: f64) -> Option<usize> {
        let n = self.soc.len();
        if n < 2 {
            return None;
        }
        let k = self.soc.partition_point(|&s| s <= soc);
        Some(k.clamp(1, n - 1) - 1)
    }

    /// Piecewise-linear interpolation, clamped to the end values.
    pub fn eval(&self, soc: f64) -> f64 {
        let n = self.soc.len();
        if soc <= self.soc[0] {
            return self.volts[0];
        }
        if soc >= self.soc[n - 1] {
            return self.volts[n - 1];
        }
        let k = self.segment(soc).expect("n >= 2 inside the domain");
        let t = (soc - self.soc[k]) / (self.soc[k + 1] - self.soc[k]);
        self.volts[k] + t * (self.volts[k + 1] - self.volts[k])
    }

    /// Slope of the interpolant; zero in the clamped regions. At an interior
    /// knot the slope of the segment to the right is returned.
    pub fn slope(&self, soc: f64) -> f64 {
        let n = self.soc.len();
        if n < 2 || soc < self.soc[0] || soc >= self.soc[n - 1] {
            return 0.0;
        }
        let k = self.segment(soc).expect("n >= 2");
        (self.volts[k + 1] - self.volts[k]) / (self.soc[k + 1] - self.soc[k])
    }

    /// `∫_{lo}^{hi} ocv(s) ds` of the interpolant (exact trapezoids).
    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        if hi < lo {
            return -self.integral(hi, lo);
        }
        // Collect the knots inside (lo, hi) and integrate each linear piece.
        let mut xs = vec![lo];
        xs.extend(self.soc.iter().copied().filter(|&s| s > lo && s < hi));
        xs.push(hi);
        xs.windows(2)
            .map(|w| 0.5 * (w[1] - w[0]) * (self.eval(w[0]) + self.eval(w[1])))
            .sum()
    }
}

impl TryFrom<Vec<[f64; 2]>> for OcvCurve {
    type Error = Error;
    fn try_from(v: Vec<[f64; 2]>) -> Result<Self> {
        let pts: Vec<(f64, f64)> = v.into_iter().map(|p| (p[0], p[1])).collect();
        OcvCurve::new(&pts)
    }
}

impl From<OcvCurve> for Vec<[f64; 2]> {
    fn from(c: OcvCurve) -> Self {
        c.points().map(|(s, v)| [s, v]).collect()
    }
}

/// Physical constants of the single-RC electrothermal cell model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatteryParams {
    /// Nominal charge capacity (Ah).
    pub capacity_nominal: f64,
    /// Ohmic resistance (Ω).
    pub r0: f64,
    /// Polarization resistance (Ω).
    pub r1: f64,
    /// Polarization capacitance (F).
    pub c1: f64,
    /// Surface-to-ambient convection resistance (K/W).
    pub r_u: f64,
    /// Core-to-surface conduction resistance (K/W).
    pub r_c: f64,
    /// Surface heat capacity (J/K).
    pub c_s: f64,
    /// Core heat capacity (J/K).
    pub c_c: f64,
    /// Ambient temperature (°C).
    pub t_ambient: f64,
    pub ocv_curve: OcvCurve,
    /// Total stored energy (J) used for state-of-energy accounting.
    pub energy_nominal: f64,
    /// Energy efficiency in (0, 1].
    #[serde(default = "default_eta")]
    pub eta: f64,
}

fn default_eta() -> f64 {
    1.0
}

impl Default for BatteryParams {
    /// Tuned default cell. `energy_nominal` is the value produced by
    /// [`crate::simulation::reference_energy`] on this parameter set.
    fn default() -> Self {
        Self {
            capacity_nominal: 90.0,
            r0: 3.0e-3,
            r1: 2.0e-3,
            c1: 10.0e3,
            r_u: 3.0,
            r_c: 1.5,
            c_s: 200.0,
            c_c: 400.0,
            t_ambient: 20.0,
            ocv_curve: default_ocv(),
            energy_nominal: DEFAULT_ENERGY_NOMINAL,
            eta: 1.0,
        }
    }
}

/// Reference-discharge energy of the default cell (J).
pub const DEFAULT_ENERGY_NOMINAL: f64 = 1_040_670.485_871_823_4;

/// Generic NMC-shaped 11-point table: steep below SoC 0.1, flat mid-range.
pub fn default_ocv() -> OcvCurve {
    const V: [f64; 11] = [3.00, 3.45, 3.52, 3.58, 3.63, 3.68, 3.75, 3.84, 3.95, 4.07, 4.20];
    let pts: Vec<(f64, f64)> = V.iter().enumerate().map(|(k, &v)| (k as f64 / 10.0, v)).collect();
    OcvCurve::new(&pts).expect("default OCV table is valid")
}

impl BatteryParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("capacity_nominal", self.capacity_nominal),
            ("r0", self.r0),
            ("r1", self.r1),
            ("c1", self.c1),
            ("r_u", self.r_u),
            ("r_c", self.r_c),
            ("c_s", self.c_s),
            ("c_c", self.c_c),
            ("energy_nominal", self.energy_nominal),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be finite and > 0 (got {v})")));
            }
        }
        if !self.t_ambient.is_finite() {
            return Err(Error::Config("t_ambient must be finite".into()));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::Config(format!("eta must lie in (0, 1] (got {})", self.eta)));
        }
        self.ocv_curve.validate()
    }

    /// Open-circuit voltage at `soc`.
    pub fn ocv(&self, soc: f64) -> f64 {
        self.ocv_curve.eval(soc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_clamps_and_hits_knots() {
        let c = default_ocv();
        assert_eq!(c.eval(-0.3), 3.0);
        assert_eq!(c.eval(1.7), 4.2);
        for (s, v) in c.points() {
            assert_eq!(c.eval(s), v);
        }
    }

    #[test]
    fn midpoint_is_mean_of_neighbours() {
        let c = default_ocv();
        let mid = c.eval(0.35);
        assert!((mid - 0.5 * (3.58 + 3.63)).abs() < 1e-12);
        // closed-form two-point interpolation at a quarter
        let q = c.eval(0.725);
        let expect = 3.84 + 0.25 * (3.95 - 3.84);
        assert!((q - expect).abs() < 1e-12);
    }

    #[test]
    fn empty_or_non_monotone_curves_are_rejected() {
        assert!(matches!(OcvCurve::new(&[]), Err(Error::Config(_))));
        assert!(OcvCurve::new(&[(0.0, 3.0), (0.5, 2.9)]).is_err());
        assert!(OcvCurve::new(&[(0.0, 3.0), (0.0, 3.1)]).is_err());
        assert!(OcvCurve::new(&[(0.0, 3.0), (1.2, 3.1)]).is_err());
    }

    #[test]
    fn integral_matches_trapezoid_of_knots() {
        let c = default_ocv();
        let direct: f64 = c.voltages().windows(2).map(|w| 0.05 * (w[0] + w[1])).sum();
        assert!((c.integral(0.0, 1.0) - direct).abs() < 1e-12);
        assert!((c.integral(0.3, 0.3)).abs() < 1e-15);
    }

    #[test]
    fn params_validation() {
        let mut p = BatteryParams::default();
        assert!(p.validate().is_ok());
        p.r1 = 0.0;
        assert!(p.validate().is_err());
        let mut p = BatteryParams::default();
        p.eta = 1.2;
        assert!(p.validate().is_err());
    }
}
