use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::controller::{TrajectoryRecord, TrajectoryRow};
use crate::error::{Error, Result};

/// Scalar extracted from each trajectory row.
#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    /// `||x_k - x_ref|| / ||x_ref||` on the unperturbed state.
    RelativeError { x_ref: DVector<f64> },
    /// `||u_k - u*||^2`.
    DistToOptSquared,
    Lyapunov,
    Utility,
    /// `x_k[state_index] + offset`.
    ComfortTemperature { state_index: usize, offset: f64 },
}

impl Metric {
    pub const NAMES: [&'static str; 5] = [
        "relative-error",
        "dist-to-opt-squared",
        "lyapunov",
        "utility",
        "comfort-temperature",
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::RelativeError { .. } => "relative-error",
            Metric::DistToOptSquared => "dist-to-opt-squared",
            Metric::Lyapunov => "lyapunov",
            Metric::Utility => "utility",
            Metric::ComfortTemperature { .. } => "comfort-temperature",
        }
    }

    pub fn value(&self, row: &TrajectoryRow) -> Result<f64> {
        let missing = |col: &'static str| Error::invalid("metric", format!("trajectory has no {col} column"));
        match self {
            Metric::RelativeError { x_ref } => {
                crate::error::check_dim("x_ref", row.x.len(), x_ref.len())?;
                Ok((&row.x - x_ref).norm() / x_ref.norm())
            }
            Metric::DistToOptSquared => row.dist_to_opt.map(|d| d * d).ok_or_else(|| missing("dist_to_opt")),
            Metric::Lyapunov => row.lyapunov.ok_or_else(|| missing("lyapunov")),
            Metric::Utility => row.utility.ok_or_else(|| missing("utility")),
            Metric::ComfortTemperature { state_index, offset } => row
                .x
                .get(*state_index)
                .map(|t| t + offset)
                .ok_or_else(|| Error::invalid("metric", "comfort state index out of range")),
        }
    }
}

/// Per-step mean and sample standard deviation over replicas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub metric: String,
    pub replicas: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn metric_matrix(runs: &[TrajectoryRecord], metric: &Metric) -> Result<Vec<Vec<f64>>> {
    if runs.is_empty() {
        return Err(Error::invalid("runs", "no trajectories"));
    }
    let lens: Vec<usize> = runs.iter().map(TrajectoryRecord::len).collect();
    if lens.iter().any(|l| *l != lens[0]) {
        return Err(Error::RaggedHorizons(lens));
    }
    runs.iter()
        .map(|r| r.rows.iter().map(|row| metric.value(row)).collect())
        .collect()
}

/// Two-pass mean and `n - 1` standard deviation per step; zero spread for one replica.
pub fn ensemble_stats(runs: &[TrajectoryRecord], metric: &Metric) -> Result<EnsembleStats> {
    let values = metric_matrix(runs, metric)?;
    let (mean, std) = column_moments(&values);
    Ok(EnsembleStats {
        metric: metric.name().to_string(),
        replicas: runs.len(),
        mean,
        std,
    })
}

pub(crate) fn column_moments(values: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let r = values.len();
    let t = values.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; t];
    let mut std = vec![0.0; t];
    for k in 0..t {
        let m = values.iter().map(|v| v[k]).sum::<f64>() / r as f64;
        mean[k] = m;
        if r > 1 {
            let ss: f64 = values.iter().map(|v| (v[k] - m).powi(2)).sum();
            std[k] = (ss / (r - 1) as f64).sqrt();
        }
    }
    (mean, std)
}

impl EnsembleStats {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["k", "mean", "std"])?;
        for (k, (m, s)) in self.mean.iter().zip(&self.std).enumerate() {
            out.write_record([k.to_string(), m.to_string(), s.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    /// First step from which the mean stays inside `[target - tol, target + tol]`.
    pub fn settling_step(&self, target: f64, tol: f64) -> Option<usize> {
        let outside = self.mean.iter().rposition(|m| (m - target).abs() > tol);
        match outside {
            None => Some(0),
            Some(k) if k + 1 < self.mean.len() => Some(k + 1),
            Some(_) => None,
        }
    }

    /// Largest rise of the mean above its running minimum.
    pub fn max_rebound(&self) -> f64 {
        let mut low = f64::INFINITY;
        let mut best: f64 = 0.0;
        for m in &self.mean {
            low = low.min(*m);
            best = best.max(m - low);
        }
        best
    }

    pub fn max_mean(&self) -> f64 {
        self.mean.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Average of the mean over the trailing `fraction` of the horizon.
    pub fn tail_mean(&self, fraction: f64) -> f64 {
        let n = self.mean.len();
        let start = n - ((n as f64 * fraction).ceil() as usize).clamp(1, n);
        self.mean[start..].iter().sum::<f64>() / (n - start) as f64
    }
}
