use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::analysis::Metric;
use crate::controller::{ControllerConfig, InputBox};
use crate::error::{Error, Result};
use crate::plant::{
    compute_lyapunov_certificate, lipschitz_constant_of_h, retune_q, LyapunovCertificate, Plant, PlantModel, PlantSpec,
};
use crate::preference::{LatentUtility, LinkFunction, PmvEnvironment, ReducedUtility};

pub const CONFIG_VERSION: u32 = 1;

/// Plant given inline or as a path relative to the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PlantSource {
    File { file: PathBuf },
    Inline(PlantSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum UtilitySpec {
    #[serde(rename = "quadratic-tracking")]
    Quadratic { x_ref: Vec<f64> },
    #[serde(rename = "ppd-comfort")]
    PpdComfort {
        state_index: usize,
        /// Added to the state to get °C.
        temperature_offset: f64,
        #[serde(default)]
        env: PmvEnvironment,
    },
}

impl UtilitySpec {
    pub fn build(&self) -> LatentUtility {
        match self {
            UtilitySpec::Quadratic { x_ref } => LatentUtility::quadratic(DVector::from_column_slice(x_ref)),
            UtilitySpec::PpdComfort {
                state_index,
                temperature_offset,
                env,
            } => LatentUtility::PpdComfort {
                env: *env,
                state_index: *state_index,
                temperature_offset: *temperature_offset,
            },
        }
    }
}

/// Link functions to run (one sub-experiment each) and the base seed; replica
/// `i` uses seed `seed + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    pub links: Vec<LinkFunction>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialState {
    /// `h(u0)`.
    #[default]
    SteadyState,
    Zero,
    State(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    ClosedLoop,
    Algebraic,
    IdealPDescent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricName {
    RelativeError,
    DistToOptSquared,
    Lyapunov,
    Utility,
    ComfortTemperature,
}

impl MetricName {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::RelativeError => "relative-error",
            MetricName::DistToOptSquared => "dist-to-opt-squared",
            MetricName::Lyapunov => "lyapunov",
            MetricName::Utility => "utility",
            MetricName::ComfortTemperature => "comfort-temperature",
        }
    }
}

/// One of the numerical checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Check {
    Lemma1,
    Lemma2,
    Lemma3,
    Lemma4,
    Lemma5,
    Theorem1,
}

impl Check {
    pub const ALL: [Check; 6] = [
        Check::Lemma1,
        Check::Lemma2,
        Check::Lemma3,
        Check::Lemma4,
        Check::Lemma5,
        Check::Theorem1,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Check::Lemma1 => "lemma1",
            Check::Lemma2 => "lemma2",
            Check::Lemma3 => "lemma3",
            Check::Lemma4 => "lemma4",
            Check::Lemma5 => "lemma5",
            Check::Theorem1 => "theorem1",
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Check {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        let key = key.strip_prefix("lemma").unwrap_or(&key);
        Ok(match key {
            "1" => Check::Lemma1,
            "2" => Check::Lemma2,
            "3" => Check::Lemma3,
            "4" => Check::Lemma4,
            "5" => Check::Lemma5,
            "theorem1" | "t1" => Check::Theorem1,
            _ => return Err(Error::config("lemma", format!("unknown check {s:?}; expected 1-5 or theorem1"))),
        })
    }
}

fn default_lemma2_samples() -> usize {
    10_000
}
fn default_lemma3_candidates() -> usize {
    5
}
fn default_lemma4_inner_samples() -> usize {
    10_000
}
fn default_lemma4_replicas() -> usize {
    1
}
fn default_theorem1_k_prime() -> usize {
    500
}
fn default_lemma5_instances() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyOptions {
    #[serde(default = "default_lemma2_samples")]
    pub lemma2_samples: usize,
    #[serde(default = "default_lemma3_candidates")]
    pub lemma3_candidates: usize,
    #[serde(default = "default_lemma4_inner_samples")]
    pub lemma4_inner_samples: usize,
    /// Replicas checked step by step, from replica 0.
    #[serde(default = "default_lemma4_replicas")]
    pub lemma4_replicas: usize,
    #[serde(default = "default_theorem1_k_prime")]
    pub theorem1_k_prime: usize,
    #[serde(default = "default_lemma5_instances")]
    pub lemma5_instances: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            lemma2_samples: default_lemma2_samples(),
            lemma3_candidates: default_lemma3_candidates(),
            lemma4_inner_samples: default_lemma4_inner_samples(),
            lemma4_replicas: default_lemma4_replicas(),
            theorem1_k_prime: default_theorem1_k_prime(),
            lemma5_instances: default_lemma5_instances(),
        }
    }
}

/// Everything needed to run a batch of replicas; stored as JSON with `version: 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub plant: PlantSource,
    pub utility: UtilitySpec,
    pub oracle: OracleSpec,
    pub controller: ControllerConfig,
    #[serde(default)]
    pub x0: InitialState,
    #[serde(default)]
    pub variant: Variant,
    pub replicas: usize,
    #[serde(default)]
    pub metrics: Vec<MetricName>,
    #[serde(default)]
    pub verify: Vec<Check>,
    #[serde(default)]
    pub verify_options: VerifyOptions,
    /// Clamp box on `u`; off unless given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub safety_box: Option<InputBox>,
    /// Result directory relative to the output root; defaults to `name`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

/// A validated config with every object built.
#[derive(Debug, Clone)]
pub struct ResolvedExperiment {
    /// The config with the plant inlined.
    pub config: ExperimentConfig,
    pub plant_spec: PlantSpec,
    pub plant: PlantModel,
    pub q: DMatrix<f64>,
    /// `Q` was replaced because it gave a larger `mu`.
    pub q_retuned: bool,
    pub certificate: LyapunovCertificate,
    pub reduced: ReducedUtility,
    pub u_star: Option<DVector<f64>>,
    pub x0: DVector<f64>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == CONFIG_VERSION as u64 => {}
            Some(v) => return Err(Error::config("version", format!("unsupported version {v}; expected 1"))),
            None => return Err(Error::config("version", "missing top-level `version: 1`")),
        }
        serde_json::from_value(value).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn output_dir(&self) -> &str {
        self.output.as_deref().unwrap_or(&self.name)
    }

    /// Checks every cross-dimension and builds the plant, utility and
    /// certificate. `base` resolves relative plant files.
    pub fn resolve(&self, base: Option<&Path>) -> Result<ResolvedExperiment> {
        if self.version != CONFIG_VERSION {
            return Err(Error::config("version", format!("unsupported version {}", self.version)));
        }
        if self.name.trim().is_empty() {
            return Err(Error::config("name", "must not be empty"));
        }
        if self.replicas == 0 {
            return Err(Error::config("replicas", "must be at least 1"));
        }
        if self.oracle.links.is_empty() {
            return Err(Error::config("oracle.links", "must name at least one link"));
        }
        let plant_spec = match &self.plant {
            PlantSource::Inline(spec) => spec.clone(),
            PlantSource::File { file } => {
                let path = match base {
                    Some(dir) if file.is_relative() => dir.join(file),
                    _ => file.clone(),
                };
                PlantSpec::load(&path)?
            }
        };
        let plant = plant_spec.build()?;
        let (n_x, n_u) = (plant.n_x(), plant.n_u());

        self.controller
            .validate(n_u)
            .map_err(|e| Error::config("controller", e.to_string()))?;
        if let UtilitySpec::PpdComfort { env, .. } = &self.utility {
            env.validate().map_err(|e| Error::config("utility.env", e.to_string()))?;
        }
        let utility = self.utility.build();
        utility
            .check_state_dim(n_x)
            .map_err(|e| Error::config("utility", e.to_string()))?;
        let x0 = match &self.x0 {
            InitialState::SteadyState => plant.steady_state(&self.controller.u0_vector())?,
            InitialState::Zero => DVector::zeros(n_x),
            InitialState::State(x) => {
                if x.len() != n_x {
                    return Err(Error::config("x0", format!("has {} entries, plant has {n_x} states", x.len())));
                }
                DVector::from_column_slice(x)
            }
        };
        if let Some(b) = &self.safety_box {
            b.validate(n_u).map_err(|e| Error::config("safety_box", e.to_string()))?;
            if !b.contains(&self.controller.u0_vector()) {
                return Err(Error::config("safety_box", "u0 lies outside the box"));
            }
        }
        for m in &self.metrics {
            let ok = match m {
                MetricName::RelativeError => matches!(self.utility, UtilitySpec::Quadratic { .. }),
                MetricName::ComfortTemperature => matches!(self.utility, UtilitySpec::PpdComfort { .. }),
                _ => true,
            };
            if !ok {
                return Err(Error::config(
                    "metrics",
                    format!("{} does not apply to the {} utility", m.as_str(), utility.kind()),
                ));
            }
        }
        if self.variant == Variant::IdealPDescent {
            if !utility.has_gradient() {
                return Err(Error::config("variant", "ideal-p-descent needs an analytic gradient"));
            }
            if self.metrics.contains(&MetricName::Lyapunov) {
                return Err(Error::config("metrics", "ideal-p-descent logs no Lyapunov values"));
            }
        }
        if self.verify.contains(&Check::Theorem1) && self.verify_options.theorem1_k_prime >= self.controller.horizon {
            return Err(Error::config("verify_options.theorem1_k_prime", "must be below T"));
        }

        let l_h = lipschitz_constant_of_h(&plant);
        let mut q = plant_spec.weight()?;
        let mut certificate = compute_lyapunov_certificate(&plant, &q, l_h)?;
        let mut q_retuned = false;
        if !certificate.is_contractive() {
            if let Some(tuned) = retune_q(&plant) {
                certificate = compute_lyapunov_certificate(&plant, &tuned, l_h)?;
                q = tuned;
                q_retuned = true;
            }
        }
        let reduced = ReducedUtility::new(utility, plant.clone())?;
        let u_star = reduced.optimum().ok();

        let mut config = self.clone();
        config.plant = PlantSource::Inline(plant_spec.clone());
        Ok(ResolvedExperiment {
            config,
            plant_spec,
            plant,
            q,
            q_retuned,
            certificate,
            reduced,
            u_star,
            x0,
        })
    }
}

impl ResolvedExperiment {
    pub fn metric(&self, name: MetricName) -> Metric {
        match (name, &self.config.utility) {
            (MetricName::RelativeError, UtilitySpec::Quadratic { x_ref }) => Metric::RelativeError {
                x_ref: DVector::from_column_slice(x_ref),
            },
            (
                MetricName::ComfortTemperature,
                UtilitySpec::PpdComfort {
                    state_index,
                    temperature_offset,
                    ..
                },
            ) => Metric::ComfortTemperature {
                state_index: *state_index,
                offset: *temperature_offset,
            },
            (MetricName::DistToOptSquared, _) => Metric::DistToOptSquared,
            (MetricName::Lyapunov, _) => Metric::Lyapunov,
            _ => Metric::Utility,
        }
    }
}
