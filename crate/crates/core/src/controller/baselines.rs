use nalgebra::{DMatrix, DVector};

use super::stepper::Stepper;
use super::trajectory::{TrajectoryMeta, TrajectoryRecord, TrajectoryRow};
use super::{ControllerConfig, InputBox};
use crate::error::{check_dim, Error, Result};
use crate::plant::{AlgebraicPlant, Plant, PlantModel};
use crate::preference::{LinkFunction, PreferenceOracle, ReducedUtility};

/// Headless run of the dueling loop against a simulated user.
#[derive(Debug, Clone)]
pub struct ClosedLoop<'a> {
    plant: &'a PlantModel,
    config: ControllerConfig,
    seed: u64,
    x0: Option<DVector<f64>>,
    lyapunov_p: Option<DMatrix<f64>>,
    optimum: Option<DVector<f64>>,
    plant_id: Option<String>,
    safety_box: Option<InputBox>,
}

impl<'a> ClosedLoop<'a> {
    pub fn new(plant: &'a PlantModel, config: ControllerConfig, seed: u64) -> Self {
        Self {
            plant,
            config,
            seed,
            x0: None,
            lyapunov_p: None,
            optimum: None,
            plant_id: None,
            safety_box: None,
        }
    }

    pub fn x0(mut self, x0: DVector<f64>) -> Self {
        self.x0 = Some(x0);
        self
    }

    pub fn lyapunov(mut self, p: DMatrix<f64>) -> Self {
        self.lyapunov_p = Some(p);
        self
    }

    pub fn optimum(mut self, u_star: DVector<f64>) -> Self {
        self.optimum = Some(u_star);
        self
    }

    pub fn plant_id(mut self, id: impl Into<String>) -> Self {
        self.plant_id = Some(id.into());
        self
    }

    pub fn safety_box(mut self, b: InputBox) -> Self {
        self.safety_box = Some(b);
        self
    }

    fn stepper<P: Plant>(&self, plant: P, oracle: &PreferenceOracle) -> Result<Stepper<P>> {
        let mut s = Stepper::new(plant, self.config.clone(), self.seed, self.x0.clone())?
            .with_utility(oracle.utility().clone())?;
        if let Some(p) = &self.lyapunov_p {
            s = s.with_lyapunov(p.clone())?;
        }
        if let Some(u) = &self.optimum {
            s = s.with_optimum(u.clone())?;
        }
        if let Some(b) = &self.safety_box {
            s = s.with_safety_box(b.clone())?;
        }
        Ok(s)
    }

    fn drive<P: Plant>(&self, mut s: Stepper<P>, oracle: &mut PreferenceOracle, variant: &str) -> TrajectoryRecord {
        let mut failure = None;
        while !s.is_finished() {
            let step = if s.is_primed() {
                s.step_with(|p| match (p.current_eval, p.previous_eval) {
                    (Some(cur), Some(prev)) => oracle.sample_preference(cur, prev),
                    _ => Err(Error::NonFiniteUtility),
                })
            } else {
                s.prime()
            };
            if let Err(e) = step {
                failure = Some(e.to_string());
                break;
            }
        }
        let mut record = s.record(variant, self.plant_id.clone(), Some(oracle.link().name().to_string()));
        record.meta.error = failure;
        record
    }

    /// Dueling loop on the dynamic plant.
    pub fn run(&self, oracle: &mut PreferenceOracle) -> Result<TrajectoryRecord> {
        let s = self.stepper(self.plant.clone(), oracle)?;
        Ok(self.drive(s, oracle, "closed-loop"))
    }

    /// Same loop with the plant replaced by its steady-state map, so every
    /// comparison is between `Phi~(u_k + delta v_k)` and `Phi~(u_{k-1} + delta v_{k-1})`.
    pub fn run_algebraic(&self, oracle: &mut PreferenceOracle) -> Result<TrajectoryRecord> {
        let s = self.stepper(AlgebraicPlant(self.plant), oracle)?;
        Ok(self.drive(s, oracle, "algebraic"))
    }
}

/// Runs the dueling loop on `plant`. A failure after the first step is
/// reported in `meta.error` with the rows logged so far.
pub fn run_closed_loop(
    plant: &PlantModel,
    oracle: &mut PreferenceOracle,
    config: &ControllerConfig,
    x0: Option<DVector<f64>>,
    seed: u64,
) -> Result<TrajectoryRecord> {
    let mut run = ClosedLoop::new(plant, config.clone(), seed);
    run.x0 = x0;
    run.run(oracle)
}

/// Transient-free baseline: comparisons evaluated at steady state.
pub fn run_algebraic_variant(
    plant: &PlantModel,
    oracle: &mut PreferenceOracle,
    config: &ControllerConfig,
    seed: u64,
) -> Result<TrajectoryRecord> {
    ClosedLoop::new(plant, config.clone(), seed).run_algebraic(oracle)
}

/// Deterministic descent `u_{k+1} = u_k - eta sigma'(0) grad Phi~(u_k)` on the
/// preference probability.
pub fn run_ideal_p_descent(
    reduced: &ReducedUtility,
    link: LinkFunction,
    eta: f64,
    u0: DVector<f64>,
    horizon: usize,
) -> Result<TrajectoryRecord> {
    if !reduced.utility().has_gradient() {
        return Err(Error::GradientUnavailable(reduced.utility().kind()));
    }
    if !link.is_smooth() {
        return Err(Error::invalid("link", "needs a differentiable link"));
    }
    check_dim("u0", reduced.n_u(), u0.len())?;
    // delta is not used by this baseline; 1 keeps the record loadable.
    let config = ControllerConfig {
        eta,
        delta: 1.0,
        horizon,
        u0: u0.as_slice().to_vec(),
    };
    config.validate(reduced.n_u())?;
    let u_star = reduced.optimum().ok();
    let plant = reduced.plant();
    let slope = link.slope_at_zero();
    let zero = DVector::zeros(reduced.n_u());
    let mut u = u0;
    let mut rows = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let x = plant.steady_state(&u)?;
        rows.push(TrajectoryRow {
            k,
            x,
            u: u.clone(),
            v: zero.clone(),
            applied: u.clone(),
            feedback: None,
            utility: Some(reduced.evaluate(&u)?),
            lyapunov: None,
            dist_to_opt: u_star.as_ref().map(|s| (&u - s).norm()),
            clamped: false,
        });
        u -= reduced.gradient(&u)? * (eta * slope);
    }
    let final_x = plant.steady_state(&u)?;
    Ok(TrajectoryRecord {
        meta: TrajectoryMeta {
            variant: "ideal-p-descent".into(),
            seed: 0,
            plant_id: None,
            oracle: Some(link.name().into()),
            config: config.clone(),
            n_x: plant.n_x(),
            n_u: plant.n_u(),
            x0: plant.steady_state(&config.u0_vector())?.as_slice().to_vec(),
            final_x: final_x.as_slice().to_vec(),
            final_u: u.as_slice().to_vec(),
            u_star: u_star.map(|s| s.as_slice().to_vec()),
            safety_box: None,
            clamped_steps: Vec::new(),
            error: None,
        },
        rows,
    })
}
