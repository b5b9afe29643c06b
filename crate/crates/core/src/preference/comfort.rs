//! Fanger PMV / PPD thermal comfort indices (ISO 7730 formulation).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 150;
const SURFACE_TOL: f64 = 1e-6;

/// Occupant and room parameters of the PMV model, everything except air temperature.
///
/// Defaults describe a seated occupant typing in light clothing
/// (T-shirt, sweatpants, shoes): 1.1 met, 0.57 clo, 0.1 m/s, 50 % RH, with the
/// mean radiant temperature following the air temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PmvEnvironment {
    /// Metabolic rate in met.
    #[serde(default = "defaults::met")]
    pub met: f64,
    /// Clothing insulation in clo.
    #[serde(default = "defaults::clo")]
    pub clo: f64,
    /// Relative air velocity in m/s.
    #[serde(default = "defaults::vel")]
    pub vel: f64,
    /// Relative humidity in percent.
    #[serde(default = "defaults::rh")]
    pub rh: f64,
    /// Mean radiant temperature in °C; `None` tracks the air temperature.
    #[serde(default)]
    pub tr: Option<f64>,
    /// External work in met.
    #[serde(default)]
    pub wme: f64,
}

mod defaults {
    pub fn met() -> f64 {
        1.1
    }
    pub fn clo() -> f64 {
        0.57
    }
    pub fn vel() -> f64 {
        0.1
    }
    pub fn rh() -> f64 {
        50.0
    }
}

impl Default for PmvEnvironment {
    fn default() -> Self {
        Self {
            met: defaults::met(),
            clo: defaults::clo(),
            vel: defaults::vel(),
            rh: defaults::rh(),
            tr: None,
            wme: 0.0,
        }
    }
}

impl PmvEnvironment {
    pub fn validate(&self) -> Result<()> {
        range("met", self.met, 0.8, 4.0)?;
        range("clo", self.clo, 0.0, 2.0)?;
        range("rh", self.rh, 0.0, 100.0)?;
        range("vel", self.vel, 0.0, 2.0)?;
        range("wme", self.wme, 0.0, self.met)?;
        if let Some(tr) = self.tr {
            range("tr", tr, -20.0, 80.0)?;
        }
        Ok(())
    }
}

fn range(field: &'static str, value: f64, min: f64, max: f64) -> Result<()> {
    if value >= min && value <= max {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            field,
            value,
            min,
            max,
        })
    }
}

/// Predicted Mean Vote at the given air temperature (°C).
pub fn pmv(env: &PmvEnvironment, air_temperature: f64) -> Result<f64> {
    env.validate()?;
    range("air_temperature", air_temperature, -20.0, 80.0)?;
    let ta = air_temperature;
    let tr = env.tr.unwrap_or(ta);

    // Water vapour partial pressure, Pa.
    let pa = env.rh * 10.0 * (16.6536 - 4030.183 / (ta + 235.0)).exp();
    let icl = 0.155 * env.clo;
    let m = env.met * 58.15;
    let w = env.wme * 58.15;
    let mw = m - w;
    let fcl = if icl <= 0.078 {
        1.0 + 1.29 * icl
    } else {
        1.05 + 0.645 * icl
    };
    let hcf = 12.1 * env.vel.sqrt();
    let taa = ta + 273.0;
    let tra = tr + 273.0;

    // Clothing surface temperature by damped fixed-point iteration, in units of 100 K.
    let tcla = taa + (35.5 - ta) / (3.5 * icl + 0.1);
    let p1 = icl * fcl;
    let p2 = p1 * 3.96;
    let p3 = p1 * 100.0;
    let p4 = p1 * taa;
    let p5 = 308.7 - 0.028 * mw + p2 * (tra / 100.0).powi(4);
    let mut xn = tcla / 100.0;
    let mut xf = tcla / 50.0;
    let mut hc = hcf;
    let mut iterations = 0;
    while (xn - xf).abs() > SURFACE_TOL {
        if iterations == MAX_ITERATIONS {
            return Err(Error::NonConvergence {
                what: "clothing surface temperature",
                iterations,
            });
        }
        xf = (xf + xn) / 2.0;
        let hcn = 2.38 * (100.0 * xf - taa).abs().powf(0.25);
        hc = hcf.max(hcn);
        xn = (p5 + p4 * hc - p2 * xf.powi(4)) / (100.0 + p3 * hc);
        iterations += 1;
    }
    let tcl = 100.0 * xn - 273.0;

    let skin_diffusion = 3.05e-3 * (5733.0 - 6.99 * mw - pa);
    let sweat = if mw > 58.15 { 0.42 * (mw - 58.15) } else { 0.0 };
    let latent_respiration = 1.7e-5 * m * (5867.0 - pa);
    let dry_respiration = 0.0014 * m * (34.0 - ta);
    let radiation = 3.96 * fcl * (xn.powi(4) - (tra / 100.0).powi(4));
    let convection = fcl * hc * (tcl - ta);

    let ts = 0.303 * (-0.036 * m).exp() + 0.028;
    Ok(ts
        * (mw
            - skin_diffusion
            - sweat
            - latent_respiration
            - dry_respiration
            - radiation
            - convection))
}

/// Predicted Percentage of Dissatisfied, in percent. Minimum 5 at PMV = 0.
pub fn ppd(pmv: f64) -> f64 {
    let p2 = pmv * pmv;
    100.0 - 95.0 * (-(0.03353 * p2 * p2 + 0.2179 * p2)).exp()
}

/// Air temperature minimizing PPD on `[lo, hi]`: grid scan at 0.01 °C, then
/// golden-section refinement around the best grid point.
pub fn optimal_temperature(env: &PmvEnvironment, lo: f64, hi: f64) -> Result<f64> {
    let f = |t: f64| pmv(env, t).map(ppd);
    let n = ((hi - lo) / 0.01).round().max(1.0) as usize;
    let mut best = (lo, f(lo)?);
    for i in 1..=n {
        let t = lo + (hi - lo) * i as f64 / n as f64;
        let v = f(t)?;
        if v < best.1 {
            best = (t, v);
        }
    }
    let step = (hi - lo) / n as f64;
    let (mut a, mut b) = ((best.0 - step).max(lo), (best.0 + step).min(hi));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    while b - a > 1e-7 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c)? < f(d)? {
            b = d;
        } else {
            a = c;
        }
    }
    Ok(0.5 * (a + b))
}
