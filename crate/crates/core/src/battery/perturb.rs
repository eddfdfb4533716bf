use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::BatteryParams;
use crate::error::{Error, Result};

/// Relative perturbation magnitude per physical constant, each in `[0, 0.5]`.
/// `ocv` scales the smooth OCV offset bound (`ocv * 100 mV`).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Perturbation {
    pub capacity_nominal: f64,
    pub r0: f64,
    pub r1: f64,
    pub c1: f64,
    pub r_u: f64,
    pub r_c: f64,
    pub c_s: f64,
    pub c_c: f64,
    pub ocv: f64,
}

impl Perturbation {
    pub fn uniform(p: f64) -> Self {
        Self { capacity_nominal: p, r0: p, r1: p, c1: p, r_u: p, r_c: p, c_s: p, c_c: p, ocv: p }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            capacity_nominal: self.capacity_nominal * k,
            r0: self.r0 * k,
            r1: self.r1 * k,
            c1: self.c1 * k,
            r_u: self.r_u * k,
            r_c: self.r_c * k,
            c_s: self.c_s * k,
            c_c: self.c_c * k,
            ocv: self.ocv * k,
        }
    }

    fn magnitudes(&self) -> [f64; 9] {
        [self.capacity_nominal, self.r0, self.r1, self.c1, self.r_u, self.r_c, self.c_s, self.c_c, self.ocv]
    }

    pub fn validate(&self) -> Result<()> {
        for m in self.magnitudes() {
            if !(0.0..=0.5).contains(&m) {
                return Err(Error::Config(format!("perturbation magnitude {m} outside [0, 0.5]")));
            }
        }
        Ok(())
    }
}

/// Plant stand-in: every physical constant scaled by an independent factor
/// in `[1 - p, 1 + p]`, plus a smooth OCV offset bounded by `p_ocv * 0.1 V`.
///
/// Unit draws are taken in a fixed order regardless of the magnitudes, so a
/// given seed always yields the same direction of perturbation and doubling
/// the magnitudes doubles every relative deviation.
pub fn make_perturbed_plant(params: &BatteryParams, perturbation: &Perturbation, seed: u64) -> Result<BatteryParams> {
    perturbation.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unit = || rng.random_range(-1.0..=1.0);
    let mut out = params.clone();
    let pt = perturbation;
    out.capacity_nominal *= 1.0 + pt.capacity_nominal * unit();
    out.r0 *= 1.0 + pt.r0 * unit();
    out.r1 *= 1.0 + pt.r1 * unit();
    out.c1 *= 1.0 + pt.c1 * unit();
    out.r_u *= 1.0 + pt.r_u * unit();
    out.r_c *= 1.0 + pt.r_c * unit();
    out.c_s *= 1.0 + pt.c_s * unit();
    out.c_c *= 1.0 + pt.c_c * unit();
    let (c0, c1, phase) = (unit(), unit(), unit());
    if pt.ocv > 0.0 {
        // |0.5 c0 + 0.5 c1 sin(.)| <= 1, so the offset stays within the bound.
        let amp = pt.ocv * 0.1;
        out.ocv_curve = params.ocv_curve.map_voltages(|s, v| {
            v + amp * (0.5 * c0 + 0.5 * c1 * (std::f64::consts::PI * (s + phase)).sin())
        })?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_perturbation_is_identity() {
        let p = BatteryParams::default();
        assert_eq!(make_perturbed_plant(&p, &Perturbation::default(), 7).unwrap(), p);
    }

    #[test]
    fn deterministic_per_seed() {
        let p = BatteryParams::default();
        let pt = Perturbation::uniform(0.2);
        assert_eq!(make_perturbed_plant(&p, &pt, 11).unwrap(), make_perturbed_plant(&p, &pt, 11).unwrap());
        assert_ne!(make_perturbed_plant(&p, &pt, 11).unwrap(), make_perturbed_plant(&p, &pt, 12).unwrap());
    }

    #[test]
    fn factors_stay_in_range() {
        let p = BatteryParams::default();
        let pt = Perturbation::uniform(0.1);
        for seed in 0..200 {
            let q = make_perturbed_plant(&p, &pt, seed).unwrap();
            for (a, b) in [
                (q.capacity_nominal, p.capacity_nominal),
                (q.r0, p.r0),
                (q.r1, p.r1),
                (q.c1, p.c1),
                (q.r_u, p.r_u),
                (q.r_c, p.r_c),
                (q.c_s, p.c_s),
                (q.c_c, p.c_c),
            ] {
                let r = a / b;
                assert!((0.9 - 1e-12..=1.1 + 1e-12).contains(&r), "ratio {r}");
            }
            for (vq, vp) in q.ocv_curve.voltages().iter().zip(p.ocv_curve.voltages()) {
                assert!((vq - vp).abs() <= 0.01 + 1e-12);
            }
            assert_eq!(q.t_ambient, p.t_ambient);
            assert_eq!(q.energy_nominal, p.energy_nominal);
        }
    }

    #[test]
    fn out_of_range_magnitude_rejected() {
        let p = BatteryParams::default();
        assert!(make_perturbed_plant(&p, &Perturbation::uniform(0.6), 0).is_err());
    }
}
