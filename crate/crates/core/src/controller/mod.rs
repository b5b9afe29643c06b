//! The dueling input update and its closed-loop drivers.

mod baselines;
mod stepper;
mod trajectory;

pub use baselines::{run_algebraic_variant, run_closed_loop, run_ideal_p_descent, ClosedLoop};
pub use stepper::{InputBox, PendingComparison, Stepper, V_STREAM};
pub use trajectory::{TrajectoryMeta, TrajectoryRecord, TrajectoryRow};

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::preference::Feedback;

/// Step size, exploration radius, horizon and initial input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub eta: f64,
    pub delta: f64,
    #[serde(rename = "T", alias = "horizon")]
    pub horizon: usize,
    pub u0: Vec<f64>,
}

impl ControllerConfig {
    pub fn new(eta: f64, delta: f64, horizon: usize, u0: Vec<f64>) -> Result<Self> {
        let c = Self {
            eta,
            delta,
            horizon,
            u0,
        };
        c.validate(c.u0.len())?;
        Ok(c)
    }

    /// Full validation for configured runs: `eta > 0`.
    pub fn validate(&self, n_u: usize) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid("eta", format!("must be positive and finite, got {}", self.eta)));
        }
        self.validate_frozen(n_u)
    }

    /// Like [`validate`](Self::validate) but admits `eta = 0`, which freezes the
    /// nominal input; used by probes of the stability bound.
    pub fn validate_frozen(&self, n_u: usize) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid("eta", format!("must be nonnegative and finite, got {}", self.eta)));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::invalid("delta", format!("must be positive and finite, got {}", self.delta)));
        }
        if !(self.step_size().is_finite()) {
            return Err(Error::invalid("delta", "eta / (2 delta) overflows"));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("T", "horizon must be at least 1"));
        }
        check_dim("u0", n_u, self.u0.len())?;
        if self.u0.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("u0", "entries must be finite"));
        }
        Ok(())
    }

    /// Length `eta / (2 delta)` of every input increment.
    pub fn step_size(&self) -> f64 {
        self.eta / (2.0 * self.delta)
    }

    pub fn u0_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.u0)
    }
}

/// Controller memory between two comparisons.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    /// Nominal input `u_k`.
    pub u: DVector<f64>,
    /// Exploration direction `v_k`.
    pub v: DVector<f64>,
    /// `Phi(x_k, u_{k-1} + delta v_{k-1})`; `None` before the priming step.
    pub prev_eval: Option<f64>,
    pub k: usize,
}

/// Uniform draw from the unit sphere in `R^n` by normalizing a standard Gaussian.
pub fn sample_unit_sphere<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<DVector<f64>> {
    if n == 0 {
        return Err(Error::invalid("n", "sphere dimension must be at least 1"));
    }
    loop {
        let g = DVector::<f64>::from_fn(n, |_, _| rng.sample(StandardNormal));
        let norm = g.norm();
        if norm > 1e-300 && norm.is_finite() {
            return Ok(g / norm);
        }
    }
}

/// `u_k + (eta / 2 delta) * feedback * v_k`.
pub fn dueling_update(state: &ControllerState, feedback: Feedback, config: &ControllerConfig) -> Result<DVector<f64>> {
    check_dim("v", state.u.len(), state.v.len())?;
    let norm = state.v.norm();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(Error::invalid("v", format!("must be a unit vector, norm is {norm}")));
    }
    Ok(&state.u + &state.v * (config.step_size() * feedback.sign()))
}
