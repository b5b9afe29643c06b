use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::config::{Check, ExperimentConfig, ResolvedExperiment, Variant};
use crate::analysis::{
    derive_bound_constants, ensemble_stats, fuzz_sequence_lemma, verify_lemma1, verify_lemma2, verify_lemma3,
    verify_lemma4, verify_theorem1, CheckStatus, DerivedConstants, EnsembleStats, VerificationReport,
};
use crate::controller::{run_ideal_p_descent, ClosedLoop, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::plant::{AlgebraicPlant, Plant};
use crate::preference::{LinkFunction, PreferenceOracle};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaFailure {
    pub link: String,
    pub replica: usize,
    pub seed: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckEntry {
    pub link: String,
    pub check: String,
    pub status: CheckStatus,
    pub file: String,
}

/// Provenance of a result directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub tool_version: String,
    pub git: Option<String>,
    /// SHA-256 of `config.json`.
    pub config_hash: String,
    pub wall_time_seconds: f64,
    pub variant: Variant,
    pub replicas: usize,
    pub horizon: usize,
    pub seeds: Vec<u64>,
    pub links: Vec<String>,
    /// `complete` or `partial`.
    pub status: String,
    pub failures: Vec<ReplicaFailure>,
    pub mu: f64,
    pub q_retuned: bool,
    pub u_star: Option<Vec<f64>>,
    pub files: Vec<String>,
    pub checks: Vec<CheckEntry>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone)]
pub struct LinkResult {
    pub link: LinkFunction,
    pub runs: Vec<TrajectoryRecord>,
    pub stats: Vec<EnsembleStats>,
    pub reports: Vec<VerificationReport>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub links: Vec<LinkResult>,
}

impl ExperimentResult {
    pub fn link(&self, link: LinkFunction) -> Option<&LinkResult> {
        self.links.iter().find(|l| l.link == link)
    }
}

pub fn replica_seed(config: &ExperimentConfig, replica: usize) -> u64 {
    config.oracle.seed.wrapping_add(replica as u64)
}

fn replica_stem(replica: usize) -> String {
    format!("replica-{replica:03}")
}

fn report_file(rep: &VerificationReport) -> String {
    match rep.summary.get("replica").and_then(|v| v.as_u64()) {
        Some(i) => format!("{}-replica-{i:03}.json", rep.lemma),
        None => format!("{}.json", rep.lemma),
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn git_describe() -> Option<String> {
    let out = std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
}

fn panic_text(payload: Box<dyn std::any::Any + Send>) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".into())
}

/// Runs one replica of the configured variant.
pub fn run_replica(exp: &ResolvedExperiment, link: LinkFunction, replica: usize) -> Result<TrajectoryRecord> {
    let cfg = &exp.config;
    let seed = replica_seed(cfg, replica);
    if cfg.variant == Variant::IdealPDescent {
        let mut rec = run_ideal_p_descent(
            &exp.reduced,
            link,
            cfg.controller.eta,
            cfg.controller.u0_vector(),
            cfg.controller.horizon,
        )?;
        rec.meta.seed = seed;
        rec.meta.plant_id = exp.plant_spec.id.clone();
        return Ok(rec);
    }
    let mut runner = ClosedLoop::new(&exp.plant, cfg.controller.clone(), seed)
        .x0(exp.x0.clone())
        .lyapunov(exp.certificate.p.clone());
    if let Some(u) = &exp.u_star {
        runner = runner.optimum(u.clone());
    }
    if let Some(id) = &exp.plant_spec.id {
        runner = runner.plant_id(id.clone());
    }
    if let Some(b) = &cfg.safety_box {
        runner = runner.safety_box(b.clone());
    }
    let mut oracle = PreferenceOracle::new(link, exp.reduced.utility().clone(), seed);
    match cfg.variant {
        Variant::Algebraic => runner.run_algebraic(&mut oracle),
        _ => runner.run(&mut oracle),
    }
}

/// All replicas of one link in parallel. A panic or an early stop becomes an
/// `Err` entry for that replica; the rows logged so far are kept in the record.
pub fn run_replicas(
    exp: &ResolvedExperiment,
    link: LinkFunction,
) -> Vec<(Option<TrajectoryRecord>, Option<String>)> {
    (0..exp.config.replicas)
        .into_par_iter()
        .map(|i| match catch_unwind(AssertUnwindSafe(|| run_replica(exp, link, i))) {
            Ok(Ok(rec)) => {
                let err = rec.meta.error.clone();
                (Some(rec), err)
            }
            Ok(Err(e)) => (None, Some(e.to_string())),
            Err(p) => (None, Some(format!("panicked: {}", panic_text(p)))),
        })
        .collect()
}

fn not_applicable(check: Check, why: impl Into<String>) -> VerificationReport {
    let mut rep = VerificationReport::new(check.as_str(), json!({}));
    rep.status = CheckStatus::Vacuous;
    rep.note(format!("not applicable: {}", why.into()));
    rep
}

fn check_rng(exp: &ResolvedExperiment, check: Check) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(exp.config.oracle.seed);
    rng.set_stream(0x100 + check as u64);
    rng
}

/// Runs `checks` on the replicas of one link. Checks that need a
/// differentiable link or utility come back vacuous when those are missing.
pub fn run_checks(
    exp: &ResolvedExperiment,
    link: LinkFunction,
    runs: &[TrajectoryRecord],
    checks: &[Check],
) -> Result<Vec<VerificationReport>> {
    let cfg = &exp.config;
    let opts = &cfg.verify_options;
    let smooth_checks = [Check::Lemma2, Check::Lemma3, Check::Lemma4, Check::Theorem1];
    let mut derived: Option<DerivedConstants> = None;
    let derive = |derived: &mut Option<DerivedConstants>| -> Result<DerivedConstants> {
        if derived.is_none() {
            *derived = Some(derive_bound_constants(runs, &exp.reduced, link, &exp.certificate, &cfg.controller)?);
        }
        Ok(derived.clone().expect("set above"))
    };
    let mut out = Vec::new();
    for &check in checks {
        if smooth_checks.contains(&check) && !link.is_smooth() {
            out.push(not_applicable(check, format!("the {} link is not differentiable", link.name())));
            continue;
        }
        match check {
            Check::Lemma1 => {
                if cfg.variant == Variant::IdealPDescent {
                    out.push(not_applicable(check, "no plant in the loop"));
                } else {
                    out.push(verify_lemma1(runs, &exp.plant, &exp.certificate, &cfg.controller)?);
                }
            }
            Check::Lemma2 => {
                let d = derive(&mut derived)?;
                let mut rng = check_rng(exp, check);
                out.push(verify_lemma2(
                    &exp.reduced,
                    link,
                    &d.assumption,
                    &d.inputs,
                    opts.lemma2_samples,
                    &mut rng,
                )?);
            }
            Check::Lemma3 => {
                if exp.u_star.is_none() {
                    out.push(not_applicable(check, "the utility has no closed-form minimizer"));
                    continue;
                }
                let d = derive(&mut derived)?;
                let mut rng = check_rng(exp, check);
                let candidates: Vec<DVector<f64>> =
                    (0..opts.lemma3_candidates).map(|_| d.inputs.sample(&mut rng)).collect();
                out.push(verify_lemma3(&exp.reduced, link, &candidates, &d.inputs, &mut rng)?);
            }
            Check::Lemma4 => {
                if !exp.reduced.utility().has_gradient() || cfg.variant == Variant::IdealPDescent {
                    out.push(not_applicable(check, "needs a dueling run with an analytic gradient"));
                    continue;
                }
                let d = derive(&mut derived)?;
                let algebraic = AlgebraicPlant(&exp.plant);
                let plant: &(dyn Plant + Sync) = match cfg.variant {
                    Variant::Algebraic => &algebraic,
                    _ => &exp.plant,
                };
                for (i, run) in runs.iter().enumerate().take(opts.lemma4_replicas.max(1)) {
                    let mut rep = verify_lemma4(
                        run,
                        &exp.reduced,
                        link,
                        &d.constants,
                        &exp.certificate,
                        plant,
                        opts.lemma4_inner_samples,
                        run.meta.seed,
                    )?;
                    rep.put("replica", i);
                    out.push(rep);
                }
            }
            Check::Lemma5 => out.push(fuzz_sequence_lemma(opts.lemma5_instances, cfg.oracle.seed)),
            Check::Theorem1 => {
                let Some(u_star) = &exp.u_star else {
                    out.push(not_applicable(check, "the utility has no closed-form minimizer"));
                    continue;
                };
                let d = derive(&mut derived)?;
                out.push(verify_theorem1(
                    runs,
                    &d.constants,
                    &exp.certificate,
                    &exp.plant,
                    u_star,
                    opts.theorem1_k_prime,
                )?);
            }
        }
    }
    Ok(out)
}

fn write_text(dir: &Path, rel: &str, text: &str, files: &mut Vec<String>) -> Result<()> {
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text)?;
    files.push(rel.to_string());
    Ok(())
}

/// Runs every link and replica of `config`, computes the requested metrics and
/// checks, and writes everything under `out_root/<output>`.
///
/// When a replica fails the remaining results are still written, the manifest
/// is marked `partial` and [`Error::ReplicaFailed`] is returned.
pub fn run_experiment(config: &ExperimentConfig, base: Option<&Path>, out_root: &Path) -> Result<ExperimentResult> {
    let started = Instant::now();
    let exp = config.resolve(base)?;
    let cfg = &exp.config;
    let dir = out_root.join(cfg.output_dir());
    fs::create_dir_all(&dir)?;
    let mut files = Vec::new();
    let config_text = cfg.to_json()?;
    write_text(&dir, CONFIG_FILE, &config_text, &mut files)?;

    let mut failures = Vec::new();
    let mut links = Vec::new();
    let mut checks = Vec::new();
    for &link in &cfg.oracle.links {
        let name = link.name();
        let mut runs = Vec::new();
        for (i, (rec, err)) in run_replicas(&exp, link).into_iter().enumerate() {
            if let Some(rec) = rec {
                rec.write_files(&dir.join(name), &replica_stem(i))?;
                files.push(format!("{name}/{}.csv", replica_stem(i)));
                files.push(format!("{name}/{}.meta.json", replica_stem(i)));
                runs.push(rec);
            }
            if let Some(reason) = err {
                failures.push(ReplicaFailure {
                    link: name.to_string(),
                    replica: i,
                    seed: replica_seed(cfg, i),
                    reason,
                });
            }
        }
        if failures.iter().any(|f| f.link == name) {
            links.push(LinkResult {
                link,
                runs,
                stats: Vec::new(),
                reports: Vec::new(),
            });
            continue;
        }
        let mut stats = Vec::new();
        for &m in &cfg.metrics {
            let s = ensemble_stats(&runs, &exp.metric(m))?;
            let rel = format!("{name}/stats-{}.csv", m.as_str());
            let mut buf = Vec::new();
            s.write_csv(&mut buf)?;
            write_text(&dir, &rel, &String::from_utf8_lossy(&buf), &mut files)?;
            stats.push(s);
        }
        let reports = run_checks(&exp, link, &runs, &cfg.verify)?;
        for rep in &reports {
            let rel = format!("{name}/reports/{}", report_file(rep));
            rep.write(&dir.join(&rel))?;
            files.push(rel.clone());
            checks.push(CheckEntry {
                link: name.to_string(),
                check: rep.lemma.clone(),
                status: rep.status,
                file: rel,
            });
        }
        links.push(LinkResult {
            link,
            runs,
            stats,
            reports,
        });
    }

    files.sort();
    let manifest = Manifest {
        name: cfg.name.clone(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        git: git_describe(),
        config_hash: sha256_hex(config_text.as_bytes()),
        wall_time_seconds: started.elapsed().as_secs_f64(),
        variant: cfg.variant,
        replicas: cfg.replicas,
        horizon: cfg.controller.horizon,
        seeds: (0..cfg.replicas).map(|i| replica_seed(cfg, i)).collect(),
        links: cfg.oracle.links.iter().map(|l| l.name().to_string()).collect(),
        status: if failures.is_empty() { "complete" } else { "partial" }.into(),
        failures: failures.clone(),
        mu: exp.certificate.mu,
        q_retuned: exp.q_retuned,
        u_star: exp.u_star.as_ref().map(|u| u.as_slice().to_vec()),
        files,
        checks,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join(MANIFEST_FILE), text)?;

    if let Some(f) = failures.first() {
        return Err(Error::ReplicaFailed {
            replica: f.replica,
            reason: format!("{} link: {}", f.link, f.reason),
        });
    }
    Ok(ExperimentResult { dir, manifest, links })
}

/// Reads the trajectories of one link back from a result directory.
pub fn load_runs(dir: &Path, link: LinkFunction, replicas: usize) -> Result<Vec<TrajectoryRecord>> {
    (0..replicas)
        .map(|i| TrajectoryRecord::read_files(&dir.join(link.name()), &replica_stem(i)))
        .collect()
}

/// Re-runs checks on a finished result directory and rewrites their reports.
/// `checks = None` uses the checks listed in the stored config, or all of them.
pub fn verify_result_dir(dir: &Path, checks: Option<&[Check]>) -> Result<Vec<(LinkFunction, VerificationReport)>> {
    let config_text = fs::read_to_string(dir.join(CONFIG_FILE))
        .map_err(|e| Error::config(dir.join(CONFIG_FILE).display().to_string(), e.to_string()))?;
    if let Ok(manifest) = Manifest::read(dir) {
        if manifest.config_hash != sha256_hex(config_text.as_bytes()) {
            return Err(Error::config(CONFIG_FILE, "does not match the hash in manifest.json"));
        }
        if manifest.status != "complete" {
            return Err(Error::config(MANIFEST_FILE, "the run is partial; some replicas failed"));
        }
    }
    let config = ExperimentConfig::from_json(&config_text)?;
    let exp = config.resolve(Some(dir))?;
    let wanted: Vec<Check> = match checks {
        Some(c) => c.to_vec(),
        None if exp.config.verify.is_empty() => Check::ALL.to_vec(),
        None => exp.config.verify.clone(),
    };
    let mut out = Vec::new();
    for &link in &exp.config.oracle.links {
        let needs_runs = wanted.iter().any(|c| *c != Check::Lemma5);
        let runs = if needs_runs {
            load_runs(dir, link, exp.config.replicas)?
        } else {
            Vec::new()
        };
        let reports = run_checks(&exp, link, &runs, &wanted)?;
        for rep in &reports {
            rep.write(&dir.join(link.name()).join("reports").join(report_file(rep)))?;
        }
        out.extend(reports.into_iter().map(|r| (link, r)));
    }
    Ok(out)
}
