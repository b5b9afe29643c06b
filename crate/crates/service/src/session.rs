use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use nalgebra::DVector;
use prefctl_core::controller::{InputBox, PendingComparison, Stepper, TrajectoryRecord, TrajectoryRow};
use prefctl_core::harness::{builtin, ExperimentConfig, PlantSource, ResolvedExperiment, UtilitySpec, Variant};
use prefctl_core::plant::PlantModel;
use prefctl_core::preference::Feedback;
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

use crate::error::ServiceError;

/// Upper end of the comfort temperature range, °C. The default thermal box
/// stops at the power that holds the air there.
pub const MAX_COMFORT_TEMPERATURE: f64 = 35.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionStatus {
    AwaitingFeedback,
    Advancing,
    Finished,
}

/// The answer to a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Choice {
    Current,
    Previous,
}

impl From<Choice> for Feedback {
    fn from(c: Choice) -> Self {
        match c {
            Choice::Current => Feedback::Current,
            Choice::Previous => Feedback::Previous,
        }
    }
}

impl From<Feedback> for Choice {
    fn from(f: Feedback) -> Self {
        match f {
            Feedback::Current => Choice::Current,
            Feedback::Previous => Choice::Previous,
        }
    }
}

/// What the human is shown about one operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indoor_temperature_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
enum ObservableKind {
    Temperature { index: usize, offset: f64 },
    StateAndInput,
}

impl ObservableKind {
    fn for_utility(spec: &UtilitySpec) -> Self {
        match spec {
            UtilitySpec::PpdComfort {
                state_index,
                temperature_offset,
                ..
            } => ObservableKind::Temperature {
                index: *state_index,
                offset: *temperature_offset,
            },
            UtilitySpec::Quadratic { .. } => ObservableKind::StateAndInput,
        }
    }

    fn describe(&self, x: &DVector<f64>, u: &DVector<f64>) -> Observables {
        match self {
            ObservableKind::Temperature { index, offset } => Observables {
                indoor_temperature_c: Some(x[*index] + offset),
                state: None,
                input: None,
            },
            ObservableKind::StateAndInput => Observables {
                indoor_temperature_c: None,
                state: Some(x.as_slice().to_vec()),
                input: Some(u.as_slice().to_vec()),
            },
        }
    }
}

/// The plant waits for the answer; there is no timeout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeadlinePolicy {
    WaitForAnswer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonPrompt {
    pub session_id: String,
    pub step: usize,
    /// `x_{k+1}` under `u_k + delta v_k`.
    pub current: Observables,
    /// `x_k` under `u_{k-1} + delta v_{k-1}`.
    pub previous: Observables,
    pub deadline_policy: DeadlinePolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackRequest {
    pub step: usize,
    pub choice: Choice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackAck {
    pub session_id: String,
    /// The step the answer was applied to.
    pub step: usize,
    pub status: SessionStatus,
    /// Step of the next prompt, absent once finished.
    pub next_step: Option<usize>,
    /// The safety box moved the updated input.
    pub clamped: bool,
    pub log_length: usize,
}

/// A logged step as exposed to clients: no utility values and no optimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub k: usize,
    /// Observables of `x_k` under the applied input.
    pub observables: Observables,
    pub u: Vec<f64>,
    pub applied: Vec<f64>,
    pub choice: Option<Choice>,
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub session_id: String,
    pub status: SessionStatus,
    pub horizon: usize,
    pub safety_box: Option<InputBox>,
    pub rows: Vec<LogRow>,
}

/// Body of `POST /sessions`: a builtin preset or a full config, plus overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSessionRequest {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub config: Option<ExperimentConfig>,
    /// Seed of the exploration directions.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub horizon: Option<usize>,
    /// Replaces the default box.
    #[serde(default)]
    pub safety_box: Option<InputBox>,
    /// Runs unclamped, like a headless simulation.
    #[serde(default)]
    pub disable_safety_box: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub step: usize,
    pub status: SessionStatus,
    pub horizon: usize,
    pub n_u: usize,
    pub safety_box: Option<InputBox>,
}

/// Default clamp for live sessions. Heating sessions get `[0, P]` with `P`
/// the power holding the comfort state at the top of the comfort range;
/// others get `u0 +- max(100, 10 |u0|)` per coordinate.
pub fn default_safety_box(exp: &ResolvedExperiment) -> InputBox {
    let u0 = &exp.config.controller.u0;
    if let UtilitySpec::PpdComfort {
        state_index,
        temperature_offset,
        ..
    } = &exp.config.utility
    {
        let gain = exp.plant.steady_state_gain();
        if exp.plant.n_u() == 1 && gain[(*state_index, 0)] > 0.0 {
            let top = (MAX_COMFORT_TEMPERATURE - temperature_offset) / gain[(*state_index, 0)];
            return InputBox {
                lower: vec![0.0f64.min(u0[0])],
                upper: vec![top.max(u0[0])],
            };
        }
    }
    let half: Vec<f64> = u0.iter().map(|u| (10.0 * u.abs()).max(100.0)).collect();
    InputBox {
        lower: u0.iter().zip(&half).map(|(u, h)| u - h).collect(),
        upper: u0.iter().zip(&half).map(|(u, h)| u + h).collect(),
    }
}

/// Resolves a create request into a validated experiment and its clamp box.
pub fn resolve_request(req: &CreateSessionRequest) -> Result<(ResolvedExperiment, Option<InputBox>), ServiceError> {
    let mut config = match (&req.preset, &req.config) {
        (Some(name), None) => builtin(name).map_err(|e| ServiceError::BadRequest(e.to_string()))?,
        (None, Some(c)) => c.clone(),
        _ => return Err(ServiceError::BadRequest("give exactly one of `preset` and `config`".into())),
    };
    if matches!(config.plant, PlantSource::File { .. }) {
        return Err(ServiceError::BadRequest("plant must be given inline".into()));
    }
    if config.variant != Variant::ClosedLoop {
        return Err(ServiceError::BadRequest("sessions run the closed-loop variant only".into()));
    }
    if let Some(seed) = req.seed {
        config.oracle.seed = seed;
    }
    if let Some(t) = req.horizon {
        config.controller.horizon = t;
    }
    // Checks are a headless concern.
    config.verify.clear();
    config.safety_box = None;
    let exp = config.resolve(None).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
    let safety = if req.disable_safety_box {
        None
    } else {
        let b = req.safety_box.clone().unwrap_or_else(|| default_safety_box(&exp));
        b.validate(exp.plant.n_u())
            .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        if !b.contains(&exp.config.controller.u0_vector()) {
            return Err(ServiceError::BadRequest("u0 lies outside the safety box".into()));
        }
        Some(b)
    };
    Ok((exp, safety))
}

/// One live run: the stepper with the human in place of the oracle.
#[derive(Debug)]
pub struct Session {
    id: String,
    stepper: Stepper<PlantModel>,
    observe: ObservableKind,
    status: SessionStatus,
    safety_box: Option<InputBox>,
    plant_id: Option<String>,
}

impl Session {
    /// Builds the stepper, primes it and draws the first comparison.
    pub fn start(id: String, exp: &ResolvedExperiment, safety_box: Option<InputBox>) -> Result<Self, ServiceError> {
        let cfg = &exp.config;
        let mut stepper = Stepper::new(
            exp.plant.clone(),
            cfg.controller.clone(),
            cfg.oracle.seed,
            Some(exp.x0.clone()),
        )?
        .with_utility(exp.reduced.utility().clone())?
        .with_lyapunov(exp.certificate.p.clone())?;
        if let Some(u) = &exp.u_star {
            stepper = stepper.with_optimum(u.clone())?;
        }
        if let Some(b) = &safety_box {
            stepper = stepper.with_safety_box(b.clone())?;
        }
        stepper.propose()?;
        Ok(Self {
            id,
            stepper,
            observe: ObservableKind::for_utility(&cfg.utility),
            status: SessionStatus::AwaitingFeedback,
            safety_box,
            plant_id: exp.plant_spec.id.clone(),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn horizon(&self) -> usize {
        self.stepper.config().horizon
    }

    pub fn log_len(&self) -> usize {
        self.stepper.rows().len()
    }

    pub fn safety_box(&self) -> Option<&InputBox> {
        self.safety_box.as_ref()
    }

    fn pending(&self) -> Result<&PendingComparison, ServiceError> {
        if self.status == SessionStatus::Finished {
            return Err(ServiceError::Gone);
        }
        self.stepper
            .pending()
            .ok_or_else(|| ServiceError::Internal("no comparison pending".into()))
    }

    pub fn prompt(&self) -> Result<ComparisonPrompt, ServiceError> {
        let p = self.pending()?;
        Ok(ComparisonPrompt {
            session_id: self.id.clone(),
            step: p.k,
            current: self.observe.describe(&p.current_state, &p.current_input),
            previous: self.observe.describe(&p.previous_state, &p.previous_input),
            deadline_policy: DeadlinePolicy::WaitForAnswer,
        })
    }

    /// Applies the answer for `step`, advances the plant one step and draws
    /// the next comparison. Any other step is rejected without a state change.
    pub fn submit(&mut self, req: &FeedbackRequest) -> Result<FeedbackAck, ServiceError> {
        let k = self.pending()?.k;
        if req.step != k {
            return Err(ServiceError::Conflict(format!("step {} is not the pending step {k}", req.step)));
        }
        self.status = SessionStatus::Advancing;
        let clamped = match self.stepper.resolve(req.choice.into()) {
            Ok(row) => row.clamped,
            Err(e) => {
                self.status = SessionStatus::Finished;
                return Err(e.into());
            }
        };
        let next_step = if self.stepper.is_finished() {
            self.status = SessionStatus::Finished;
            None
        } else {
            match self.stepper.propose() {
                Ok(p) => {
                    self.status = SessionStatus::AwaitingFeedback;
                    Some(p.k)
                }
                Err(e) => {
                    self.status = SessionStatus::Finished;
                    return Err(e.into());
                }
            }
        };
        Ok(FeedbackAck {
            session_id: self.id.clone(),
            step: k,
            status: self.status,
            next_step,
            clamped,
            log_length: self.log_len(),
        })
    }

    fn log_row(&self, row: &TrajectoryRow) -> LogRow {
        LogRow {
            k: row.k,
            observables: self.observe.describe(&row.x, &row.applied),
            u: row.u.as_slice().to_vec(),
            applied: row.applied.as_slice().to_vec(),
            choice: row.feedback.map(Choice::from),
            clamped: row.clamped,
        }
    }

    pub fn rows_from(&self, from: usize) -> Vec<LogRow> {
        self.stepper.rows().iter().skip(from).map(|r| self.log_row(r)).collect()
    }

    pub fn log(&self) -> SessionLog {
        SessionLog {
            session_id: self.id.clone(),
            status: self.status,
            horizon: self.horizon(),
            safety_box: self.safety_box.clone(),
            rows: self.rows_from(0),
        }
    }

    /// Full record in the harness format, utility column included.
    pub fn record(&self) -> TrajectoryRecord {
        self.stepper
            .record("live-session", self.plant_id.clone(), Some("human".into()))
    }
}

/// A session behind its lock, with a counter of logged rows for streams.
#[derive(Debug)]
pub struct SessionHandle {
    pub session: Mutex<Session>,
    rows: watch::Sender<usize>,
}

impl SessionHandle {
    fn new(session: Session) -> Self {
        let (rows, _) = watch::channel(session.log_len());
        Self {
            session: Mutex::new(session),
            rows,
        }
    }

    pub fn lock(&self) -> std::sync::MutexGuard<'_, Session> {
        self.session.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn subscribe(&self) -> watch::Receiver<usize> {
        self.rows.subscribe()
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Unfinished sessions allowed at once.
    pub capacity: usize,
    /// Finished sessions are written here as `<id>.csv` and `<id>.meta.json`.
    pub export_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            capacity: 64,
            export_dir: None,
        }
    }
}

/// All sessions of a service instance.
#[derive(Debug, Default)]
pub struct SessionManager {
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<SessionHandle>>>,
}

impl SessionManager {
    pub fn new(config: ServiceConfig) -> Self {
        Self {
            config,
            sessions: RwLock::new(HashMap::new()),
        }
    }

    pub fn get(&self, id: &str) -> Result<Arc<SessionHandle>, ServiceError> {
        self.sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
            .cloned()
            .ok_or(ServiceError::NotFound)
    }

    pub fn active(&self) -> usize {
        self.sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .values()
            .filter(|h| h.lock().status() != SessionStatus::Finished)
            .count()
    }

    pub fn create(&self, req: &CreateSessionRequest) -> Result<SessionCreated, ServiceError> {
        let (exp, safety) = resolve_request(req)?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let session = Session::start(id.clone(), &exp, safety)?;
        let created = SessionCreated {
            session_id: id.clone(),
            step: session.prompt()?.step,
            status: session.status(),
            horizon: session.horizon(),
            n_u: exp.plant.n_u(),
            safety_box: session.safety_box().cloned(),
        };
        let mut map = self.sessions.write().unwrap_or_else(|p| p.into_inner());
        let active = map
            .values()
            .filter(|h| h.lock().status() != SessionStatus::Finished)
            .count();
        if active >= self.config.capacity {
            return Err(ServiceError::Capacity(self.config.capacity));
        }
        map.insert(id, Arc::new(SessionHandle::new(session)));
        Ok(created)
    }

    pub fn prompt(&self, id: &str) -> Result<ComparisonPrompt, ServiceError> {
        self.get(id)?.lock().prompt()
    }

    pub fn submit(&self, id: &str, req: &FeedbackRequest) -> Result<FeedbackAck, ServiceError> {
        let handle = self.get(id)?;
        let (ack, record) = {
            let mut s = handle.lock();
            let result = s.submit(req);
            handle.rows.send_replace(s.log_len());
            let finished = s.status() == SessionStatus::Finished;
            (result, finished.then(|| s.record()))
        };
        if let (Some(dir), Some(record)) = (&self.config.export_dir, record) {
            std::fs::create_dir_all(dir).map_err(|e| ServiceError::Internal(e.to_string()))?;
            record
                .write_files(dir, id)
                .map_err(|e| ServiceError::Internal(e.to_string()))?;
        }
        ack
    }

    pub fn log(&self, id: &str) -> Result<SessionLog, ServiceError> {
        Ok(self.get(id)?.lock().log())
    }
}
