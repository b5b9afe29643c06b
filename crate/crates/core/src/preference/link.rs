use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Link between a utility difference and the probability of preferring the first option.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkFunction {
    /// Bradley-Terry: `1 / (1 + e^{-t})`.
    Logistic,
    /// Thurstone-Mosteller with unit noise scale: standard normal CDF.
    Probit,
    /// Noise-free comparisons; ties resolve to 1/2.
    Sign,
}

impl LinkFunction {
    pub fn name(self) -> &'static str {
        match self {
            LinkFunction::Logistic => "logistic",
            LinkFunction::Probit => "probit",
            LinkFunction::Sign => "sign",
        }
    }

    pub fn eval(self, t: f64) -> f64 {
        match self {
            LinkFunction::Logistic => {
                if t >= 0.0 {
                    1.0 / (1.0 + (-t).exp())
                } else {
                    let e = t.exp();
                    e / (1.0 + e)
                }
            }
            LinkFunction::Probit => 0.5 * erfc(-t * FRAC_1_SQRT_2),
            LinkFunction::Sign => {
                if t > 0.0 {
                    1.0
                } else if t < 0.0 {
                    0.0
                } else {
                    0.5
                }
            }
        }
    }

    /// `ln sigma(t)`, accurate where `sigma` underflows or rounds to 1.
    pub fn log_eval(self, t: f64) -> f64 {
        match self {
            LinkFunction::Logistic => {
                if t >= 0.0 {
                    -(-t).exp().ln_1p()
                } else {
                    t - t.exp().ln_1p()
                }
            }
            LinkFunction::Probit => {
                if t > -30.0 {
                    self.eval(t).ln()
                } else {
                    // Asymptotic series of the normal tail.
                    let t2 = t * t;
                    -0.5 * t2 - (-t).ln() - 0.5 * (2.0 * PI).ln() + (1.0 - 1.0 / t2 + 3.0 / (t2 * t2)).ln()
                }
            }
            LinkFunction::Sign => self.eval(t).ln(),
        }
    }

    /// `sigma'(t)`; zero for the sign link away from the origin.
    pub fn derivative(self, t: f64) -> f64 {
        match self {
            LinkFunction::Logistic => {
                let s = self.eval(t);
                s * (1.0 - s)
            }
            LinkFunction::Probit => normal_pdf(t),
            LinkFunction::Sign => {
                if t == 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            }
        }
    }

    pub fn second_derivative(self, t: f64) -> f64 {
        match self {
            LinkFunction::Logistic => {
                let s = self.eval(t);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            LinkFunction::Probit => -t * normal_pdf(t),
            LinkFunction::Sign => 0.0,
        }
    }

    /// Lipschitz constant `L_sigma0 = sup |sigma'|`.
    pub fn lipschitz(self) -> f64 {
        match self {
            LinkFunction::Logistic => 0.25,
            LinkFunction::Probit => normal_pdf(0.0),
            LinkFunction::Sign => f64::INFINITY,
        }
    }

    /// Smoothness constant `L_sigma1 = sup |sigma''|`.
    pub fn smoothness(self) -> f64 {
        match self {
            // attained where sigma = (3 - sqrt 3) / 6
            LinkFunction::Logistic => 1.0 / (6.0 * 3f64.sqrt()),
            // attained at t = 1
            LinkFunction::Probit => normal_pdf(1.0),
            LinkFunction::Sign => f64::INFINITY,
        }
    }

    /// `sigma'(0)`, the proportionality factor between `grad p` and `grad Phi`.
    pub fn slope_at_zero(self) -> f64 {
        self.derivative(0.0)
    }

    pub fn is_smooth(self) -> bool {
        !matches!(self, LinkFunction::Sign)
    }
}

fn normal_pdf(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * PI).sqrt()
}
