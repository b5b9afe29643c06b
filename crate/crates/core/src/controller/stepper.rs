use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::trajectory::{TrajectoryMeta, TrajectoryRecord, TrajectoryRow};
use super::{dueling_update, sample_unit_sphere, ControllerConfig, ControllerState};
use crate::error::{check_dim, Error, Result};
use crate::plant::Plant;
use crate::preference::{Feedback, LatentUtility};

/// Stream of the ChaCha generator that draws exploration directions.
pub const V_STREAM: u64 = 0;

/// Axis-aligned bounds applied to the nominal input after each update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl InputBox {
    pub fn validate(&self, n_u: usize) -> Result<()> {
        check_dim("safety box lower", n_u, self.lower.len())?;
        check_dim("safety box upper", n_u, self.upper.len())?;
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::invalid("safety_box", "lower must not exceed upper"));
        }
        Ok(())
    }

    /// Clamps in place; true when any coordinate moved.
    pub fn clamp(&self, u: &mut DVector<f64>) -> bool {
        let mut moved = false;
        for (i, x) in u.iter_mut().enumerate() {
            let c = x.clamp(self.lower[i], self.upper[i]);
            if c != *x {
                *x = c;
                moved = true;
            }
        }
        moved
    }

    pub fn contains(&self, u: &DVector<f64>) -> bool {
        u.iter()
            .enumerate()
            .all(|(i, x)| *x >= self.lower[i] && *x <= self.upper[i])
    }
}

/// The two operating points awaiting a comparison at step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingComparison {
    pub k: usize,
    /// `x_{k+1}` reached under the applied input.
    pub current_state: DVector<f64>,
    /// `u_k + delta v_k`.
    pub current_input: DVector<f64>,
    /// `x_k`.
    pub previous_state: DVector<f64>,
    /// `u_{k-1} + delta v_{k-1}`.
    pub previous_input: DVector<f64>,
    pub current_eval: Option<f64>,
    pub previous_eval: Option<f64>,
}

/// Incremental driver of the dueling loop, one comparison at a time.
///
/// Headless runs resolve each [`PendingComparison`] with an oracle; live
/// sessions resolve it with a human answer. Both go through the same code.
#[derive(Debug, Clone)]
pub struct Stepper<P: Plant> {
    plant: P,
    config: ControllerConfig,
    utility: Option<LatentUtility>,
    lyapunov_p: Option<DMatrix<f64>>,
    optimum: Option<DVector<f64>>,
    safety_box: Option<InputBox>,
    seed: u64,
    rng: ChaCha8Rng,
    state: ControllerState,
    x0: DVector<f64>,
    /// `x_k`.
    x: DVector<f64>,
    prev_applied: Option<DVector<f64>>,
    pending: Option<PendingComparison>,
    rows: Vec<TrajectoryRow>,
    clamped_steps: Vec<usize>,
}

impl<P: Plant> Stepper<P> {
    /// `x0 = None` starts at the steady state `h(u0)`. Accepts `eta = 0`.
    pub fn new(plant: P, config: ControllerConfig, seed: u64, x0: Option<DVector<f64>>) -> Result<Self> {
        config.validate_frozen(plant.n_u())?;
        let u0 = config.u0_vector();
        let x0 = match x0 {
            Some(x) => {
                check_dim("x0", plant.n_x(), x.len())?;
                x
            }
            None => plant.steady_state(&u0)?,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(V_STREAM);
        let n_u = plant.n_u();
        Ok(Self {
            plant,
            config,
            utility: None,
            lyapunov_p: None,
            optimum: None,
            safety_box: None,
            seed,
            rng,
            state: ControllerState {
                u: u0,
                v: DVector::zeros(n_u),
                prev_eval: None,
                k: 0,
            },
            x: x0.clone(),
            x0,
            prev_applied: None,
            pending: None,
            rows: Vec::new(),
            clamped_steps: Vec::new(),
        })
    }

    /// Utility evaluated for the log and for simulated comparisons.
    pub fn with_utility(mut self, utility: LatentUtility) -> Result<Self> {
        utility.check_state_dim(self.plant.n_x())?;
        self.utility = Some(utility);
        Ok(self)
    }

    /// Enables the `lyapunov` column `V(x_k, u_k + delta v_k)` with weight `P`.
    pub fn with_lyapunov(mut self, p: DMatrix<f64>) -> Result<Self> {
        check_dim("P", self.plant.n_x(), p.nrows())?;
        check_dim("P", self.plant.n_x(), p.ncols())?;
        self.lyapunov_p = Some(p);
        Ok(self)
    }

    /// Enables the `dist_to_opt` column.
    pub fn with_optimum(mut self, u_star: DVector<f64>) -> Result<Self> {
        check_dim("u*", self.plant.n_u(), u_star.len())?;
        self.optimum = Some(u_star);
        Ok(self)
    }

    pub fn with_safety_box(mut self, b: InputBox) -> Result<Self> {
        b.validate(self.plant.n_u())?;
        let mut u = self.state.u.clone();
        if b.clamp(&mut u) {
            return Err(Error::invalid("u0", "lies outside the safety box"));
        }
        self.safety_box = Some(b);
        Ok(self)
    }

    pub fn plant(&self) -> &P {
        &self.plant
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn utility(&self) -> Option<&LatentUtility> {
        self.utility.as_ref()
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    pub fn x(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn rows(&self) -> &[TrajectoryRow] {
        &self.rows
    }

    pub fn pending(&self) -> Option<&PendingComparison> {
        self.pending.as_ref()
    }

    pub fn is_primed(&self) -> bool {
        !self.rows.is_empty()
    }

    pub fn is_finished(&self) -> bool {
        self.rows.len() >= self.config.horizon
    }

    fn evaluate(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<Option<f64>> {
        self.utility.as_ref().map(|phi| phi.evaluate(x, u)).transpose()
    }

    fn lyapunov(&self, x: &DVector<f64>, applied: &DVector<f64>) -> Result<Option<f64>> {
        match &self.lyapunov_p {
            None => Ok(None),
            Some(p) => {
                let d = x - self.plant.steady_state(applied)?;
                Ok(Some(d.dot(&(p * &d))))
            }
        }
    }

    fn draw_direction(&mut self) -> Result<()> {
        self.state.v = sample_unit_sphere(self.plant.n_u(), &mut self.rng)?;
        Ok(())
    }

    fn applied(&self) -> DVector<f64> {
        &self.state.u + &self.state.v * self.config.delta
    }

    fn push_row(
        &mut self,
        applied: DVector<f64>,
        feedback: Option<Feedback>,
        utility: Option<f64>,
        clamped: bool,
    ) -> Result<()> {
        let lyapunov = self.lyapunov(&self.x, &applied)?;
        let dist_to_opt = self.optimum.as_ref().map(|u_star| (&self.state.u - u_star).norm());
        self.rows.push(TrajectoryRow {
            k: self.state.k,
            x: self.x.clone(),
            u: self.state.u.clone(),
            v: self.state.v.clone(),
            applied,
            feedback,
            utility,
            lyapunov,
            dist_to_opt,
            clamped,
        });
        Ok(())
    }

    /// Step 0: apply `u0 + delta v0` and store its evaluation without an update.
    pub fn prime(&mut self) -> Result<()> {
        if self.is_primed() {
            return Err(Error::invalid("stepper", "already primed"));
        }
        self.draw_direction()?;
        let applied = self.applied();
        let next = self.plant.step(&self.x, &applied)?;
        let eval = self.evaluate(&next, &applied)?;
        self.push_row(applied.clone(), None, eval, false)?;
        self.state.prev_eval = Some(eval.unwrap_or(f64::NAN));
        self.prev_applied = Some(applied);
        self.x = next;
        self.state.k = 1;
        Ok(())
    }

    /// Draws `v_k`, applies `u_k + delta v_k` and exposes the comparison.
    /// Idempotent while a comparison is pending.
    pub fn propose(&mut self) -> Result<&PendingComparison> {
        if !self.is_primed() {
            self.prime()?;
        }
        if self.pending.is_none() {
            if self.is_finished() {
                return Err(Error::invalid("stepper", "horizon reached"));
            }
            self.draw_direction()?;
            let applied = self.applied();
            let next = self.plant.step(&self.x, &applied)?;
            let current_eval = self.evaluate(&next, &applied)?;
            let previous_input = self
                .prev_applied
                .clone()
                .expect("primed stepper keeps the previous input");
            self.pending = Some(PendingComparison {
                k: self.state.k,
                current_state: next,
                current_input: applied,
                previous_state: self.x.clone(),
                previous_input,
                current_eval,
                previous_eval: self.state.prev_eval.filter(|v| !v.is_nan()),
            });
        }
        Ok(self.pending.as_ref().expect("set above"))
    }

    /// Applies the answer to the pending comparison: logs row `k`, updates the
    /// input and moves the plant to `x_{k+1}`.
    pub fn resolve(&mut self, feedback: Feedback) -> Result<&TrajectoryRow> {
        let pending = self
            .pending
            .take()
            .ok_or_else(|| Error::invalid("stepper", "no comparison pending"))?;
        let mut next_u = dueling_update(&self.state, feedback, &self.config)?;
        let clamped = match &self.safety_box {
            Some(b) => b.clamp(&mut next_u),
            None => false,
        };
        if clamped {
            self.clamped_steps.push(pending.k);
        }
        self.push_row(pending.current_input.clone(), Some(feedback), pending.current_eval, clamped)?;
        self.state.prev_eval = Some(pending.current_eval.unwrap_or(f64::NAN));
        self.prev_applied = Some(pending.current_input);
        self.x = pending.current_state;
        self.state.u = next_u;
        self.state.k += 1;
        Ok(self.rows.last().expect("row pushed"))
    }

    /// Resolves the pending comparison by sampling the oracle.
    pub fn step_with<F>(&mut self, mut answer: F) -> Result<()>
    where
        F: FnMut(&PendingComparison) -> Result<Feedback>,
    {
        let fb = answer(self.propose()?)?;
        self.resolve(fb)?;
        Ok(())
    }

    /// Snapshot of the log with the supplied metadata labels.
    pub fn record(&self, variant: &str, plant_id: Option<String>, oracle: Option<String>) -> TrajectoryRecord {
        TrajectoryRecord {
            meta: TrajectoryMeta {
                variant: variant.to_string(),
                seed: self.seed,
                plant_id,
                oracle,
                config: self.config.clone(),
                n_x: self.plant.n_x(),
                n_u: self.plant.n_u(),
                x0: self.x0.as_slice().to_vec(),
                final_x: self.x.as_slice().to_vec(),
                final_u: self.state.u.as_slice().to_vec(),
                u_star: self.optimum.as_ref().map(|u| u.as_slice().to_vec()),
                safety_box: self.safety_box.clone(),
                clamped_steps: self.clamped_steps.clone(),
                error: None,
            },
            rows: self.rows.clone(),
        }
    }
}
