use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{ControllerConfig, InputBox};
use crate::error::{Error, Result};
use crate::preference::Feedback;

/// One logged step of the dueling loop.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub k: usize,
    /// `x_k`.
    pub x: DVector<f64>,
    /// `u_k`.
    pub u: DVector<f64>,
    /// `v_k`.
    pub v: DVector<f64>,
    /// `u_k + delta v_k`.
    pub applied: DVector<f64>,
    /// Answer to the comparison of step `k`; empty on the priming row.
    pub feedback: Option<Feedback>,
    /// `Phi(x_{k+1}, u_k + delta v_k)`.
    pub utility: Option<f64>,
    /// `V(x_k, u_k + delta v_k)`.
    pub lyapunov: Option<f64>,
    /// `||u_k - u*||`.
    pub dist_to_opt: Option<f64>,
    /// The safety box moved `u_{k+1}`.
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub variant: String,
    pub seed: u64,
    pub plant_id: Option<String>,
    pub oracle: Option<String>,
    pub config: ControllerConfig,
    pub n_x: usize,
    pub n_u: usize,
    pub x0: Vec<f64>,
    /// `x_T`, the state after the last logged input.
    pub final_x: Vec<f64>,
    /// `u_T`.
    pub final_u: Vec<f64>,
    pub u_star: Option<Vec<f64>>,
    pub safety_box: Option<InputBox>,
    pub clamped_steps: Vec<usize>,
    /// Set when the run stopped early; rows hold the prefix before the failure.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub meta: TrajectoryMeta,
    pub rows: Vec<TrajectoryRow>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn parse_opt(field: &str, s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse()
            .map(Some)
            .map_err(|_| Error::config(field.to_string(), format!("not a number: {s:?}")))
    }
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.meta.error.is_none() && self.rows.len() == self.meta.config.horizon
    }

    pub fn csv_header(n_x: usize, n_u: usize) -> Vec<String> {
        let mut h = vec!["k".to_string()];
        h.extend((0..n_x).map(|i| format!("x_{i}")));
        h.extend((0..n_u).map(|i| format!("u_{i}")));
        h.extend((0..n_u).map(|i| format!("v_{i}")));
        h.extend(["feedback", "utility", "lyapunov", "dist_to_opt"].map(String::from));
        h
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(Self::csv_header(self.meta.n_x, self.meta.n_u))?;
        for r in &self.rows {
            let mut rec = vec![r.k.to_string()];
            rec.extend(r.x.iter().map(f64::to_string));
            rec.extend(r.u.iter().map(f64::to_string));
            rec.extend(r.v.iter().map(f64::to_string));
            rec.push(r.feedback.map(|f| i64::from(f).to_string()).unwrap_or_default());
            rec.push(fmt_opt(r.utility));
            rec.push(fmt_opt(r.lyapunov));
            rec.push(fmt_opt(r.dist_to_opt));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Writes `<stem>.csv` and the `<stem>.meta.json` sidecar.
    pub fn write_files(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("{stem}.csv"));
        let meta_path = dir.join(format!("{stem}.meta.json"));
        self.write_csv(BufWriter::new(File::create(&csv_path)?))?;
        let mut meta = serde_json::to_string_pretty(&self.meta)?;
        meta.push('\n');
        std::fs::write(&meta_path, meta)?;
        Ok((csv_path, meta_path))
    }

    pub fn read_csv<R: Read>(meta: TrajectoryMeta, r: R) -> Result<Self> {
        let (n_x, n_u) = (meta.n_x, meta.n_u);
        let mut rd = csv::Reader::from_reader(r);
        let header: Vec<String> = rd.headers()?.iter().map(String::from).collect();
        if header != Self::csv_header(n_x, n_u) {
            return Err(Error::config("csv header", format!("unexpected columns {header:?}")));
        }
        let delta = meta.config.delta;
        let clamped: std::collections::HashSet<usize> = meta.clamped_steps.iter().copied().collect();
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                parse_opt(&header[i], &rec[i])?
                    .ok_or_else(|| Error::config(header[i].clone(), "missing value"))
            };
            let k: usize = rec[0]
                .parse()
                .map_err(|_| Error::config("k", format!("not an index: {:?}", &rec[0])))?;
            let x = DVector::from_iterator(n_x, (1..=n_x).map(num).collect::<Result<Vec<_>>>()?);
            let u = DVector::from_iterator(n_u, (1 + n_x..1 + n_x + n_u).map(num).collect::<Result<Vec<_>>>()?);
            let v = DVector::from_iterator(
                n_u,
                (1 + n_x + n_u..1 + n_x + 2 * n_u).map(num).collect::<Result<Vec<_>>>()?,
            );
            let base = 1 + n_x + 2 * n_u;
            let feedback = match &rec[base] {
                "" => None,
                s => Some(Feedback::try_from(
                    s.parse::<i64>()
                        .map_err(|_| Error::config("feedback", format!("not an integer: {s:?}")))?,
                )?),
            };
            let applied = &u + &v * delta;
            rows.push(TrajectoryRow {
                k,
                x,
                u,
                v,
                applied,
                feedback,
                utility: parse_opt("utility", &rec[base + 1])?,
                lyapunov: parse_opt("lyapunov", &rec[base + 2])?,
                dist_to_opt: parse_opt("dist_to_opt", &rec[base + 3])?,
                clamped: clamped.contains(&k),
            });
        }
        Ok(Self { meta, rows })
    }

    /// Loads `<stem>.csv` with its sidecar.
    pub fn read_files(dir: &Path, stem: &str) -> Result<Self> {
        let meta: TrajectoryMeta =
            serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.meta.json")))?)?;
        Self::read_csv(meta, File::open(dir.join(format!("{stem}.csv")))?)
    }
}
