use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// The bound does not apply (e.g. a non-contractive certificate).
    Vacuous,
}

impl CheckStatus {
    pub fn from_pass(pass: bool) -> Self {
        if pass {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        }
    }

    pub fn is_failure(self) -> bool {
        self == CheckStatus::Fail
    }
}

/// Observed value against a bound at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMargin {
    pub k: usize,
    pub observed: f64,
    pub bound: f64,
    /// Statistical slack added to the bound.
    pub allowance: f64,
    /// `bound + allowance - observed`; negative means a violation.
    pub margin: f64,
}

impl StepMargin {
    pub fn new(k: usize, observed: f64, bound: f64, allowance: f64) -> Self {
        Self {
            k,
            observed,
            bound,
            allowance,
            margin: bound + allowance - observed,
        }
    }

    pub fn holds(&self) -> bool {
        self.margin >= 0.0
    }
}

/// Result of one numerical check, serialized as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub lemma: String,
    pub status: CheckStatus,
    pub constants: serde_json::Value,
    /// Allowance in standard errors.
    pub allowance_sigmas: f64,
    pub margins: Vec<StepMargin>,
    pub summary: serde_json::Map<String, serde_json::Value>,
    pub notes: Vec<String>,
    /// Outcome of a secondary check reported alongside the main one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alternate_status: Option<CheckStatus>,
}

impl VerificationReport {
    pub fn new(lemma: impl Into<String>, constants: serde_json::Value) -> Self {
        Self {
            lemma: lemma.into(),
            status: CheckStatus::Pass,
            constants,
            allowance_sigmas: 0.0,
            margins: Vec::new(),
            summary: serde_json::Map::new(),
            notes: Vec::new(),
            alternate_status: None,
        }
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    pub fn put(&mut self, key: &str, value: impl Serialize) {
        self.summary
            .insert(key.to_string(), serde_json::to_value(value).unwrap_or(serde_json::Value::Null));
    }

    /// Smallest margin, if any step was checked.
    pub fn worst_margin(&self) -> Option<&StepMargin> {
        self.margins.iter().min_by(|a, b| a.margin.total_cmp(&b.margin))
    }

    /// Sets `status` from the margins.
    pub fn conclude(&mut self) {
        self.status = CheckStatus::from_pass(self.margins.iter().all(StepMargin::holds));
        if let Some(w) = self.worst_margin().cloned() {
            self.put("worst_k", w.k);
            self.put("worst_margin", w.margin);
        }
        self.put("steps_checked", self.margins.len());
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
