use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::report::{CheckStatus, StepMargin, VerificationReport};
use crate::error::{Error, Result};

/// Fixed point `a*` and rate `rho'` of `a^2 <= rho a^2 + b a + c`.
/// Returns `None` for the degenerate `b = c = 0`.
pub fn sequence_constants(rho: f64, b: f64, c: f64) -> Option<(f64, f64)> {
    let disc = (b * b + 4.0 * (1.0 - rho) * c).sqrt();
    if disc == 0.0 {
        return None;
    }
    let a_star = (b + disc) / (2.0 * (1.0 - rho));
    Some((a_star, 1.0 - disc / (2.0 * a_star)))
}

fn check_parameters(rho: f64, b: &[f64], c: f64, a0: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::OutOfRange {
            field: "rho",
            value: rho,
            min: 0.0,
            max: 1.0,
        });
    }
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::invalid("c", "must be finite and non-negative"));
    }
    if !(a0 >= 0.0 && a0.is_finite()) {
        return Err(Error::invalid("a0", "must be finite and non-negative"));
    }
    if b.is_empty() {
        return Err(Error::invalid("b", "empty sequence"));
    }
    if b.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
        return Err(Error::invalid("b", "entries must be finite and non-negative"));
    }
    if b.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::invalid("b", "must be non-increasing"));
    }
    Ok(())
}

/// One random sequence of length `b.len() + 1` meeting the recursion, with the
/// slack drawn as 1 half the time and uniform on `[0, 1)` otherwise.
fn generate<R: Rng + ?Sized>(rho: f64, b: &[f64], c: f64, a0: f64, rng: &mut R) -> Vec<f64> {
    let mut a = Vec::with_capacity(b.len() + 1);
    a.push(a0);
    for bk in b {
        let prev = *a.last().expect("non-empty");
        let cap = rho * prev * prev + bk * prev + c;
        let s: f64 = if rng.random_bool(0.5) { 1.0 } else { rng.random() };
        a.push((s * cap).sqrt());
    }
    a
}

struct Tally {
    pairs: usize,
    violations: Vec<StepMargin>,
    worst_rel: f64,
}

fn check_one(rho: f64, b: &[f64], c: f64, a: &[f64], tally: &mut Tally) {
    for kp in 0..a.len() - 1 {
        let params = sequence_constants(rho, b[kp.min(b.len() - 1)], c);
        for k in kp + 1..a.len() {
            let lhs = a[k] * a[k];
            let bound = match params {
                Some((a_star, rho_p)) => rho_p.powi((k - kp) as i32) * a[kp] * a[kp] + a_star * a_star,
                None => rho.powi((k - kp) as i32) * a[kp] * a[kp],
            };
            let slack = 1e-12 * bound.max(lhs) + 1e-300;
            tally.pairs += 1;
            let rel = if bound > 0.0 { (lhs - bound) / bound } else { lhs };
            tally.worst_rel = tally.worst_rel.max(rel);
            if lhs > bound + slack && tally.violations.len() < 100 {
                tally.violations.push(StepMargin::new(k, lhs, bound, slack));
            }
        }
    }
}

fn report(tally: Tally, instances: usize, constants: serde_json::Value) -> VerificationReport {
    let mut rep = VerificationReport::new("lemma5", constants);
    rep.allowance_sigmas = 0.0;
    rep.status = CheckStatus::from_pass(tally.violations.is_empty());
    rep.put("instances", instances);
    rep.put("pairs_checked", tally.pairs);
    rep.put("violations", tally.violations.len());
    rep.put("worst_relative_excess", tally.worst_rel);
    rep.margins = tally.violations;
    rep.note("bound checked for every k' < k; b = c = 0 uses a_k^2 <= rho^(k-k') a_k'^2");
    rep
}

/// Generates `trials` sequences satisfying `a_{k+1}^2 <= rho a_k^2 + b_k a_k + c`
/// and checks `a_k^2 <= rho'^(k-k') a_k'^2 + (a*_k')^2` for all `k' < k`.
pub fn check_sequence_lemma<R: Rng + ?Sized>(
    rho: f64,
    b: &[f64],
    c: f64,
    a0: f64,
    trials: usize,
    rng: &mut R,
) -> Result<VerificationReport> {
    check_parameters(rho, b, c, a0)?;
    let mut tally = Tally {
        pairs: 0,
        violations: Vec::new(),
        worst_rel: f64::NEG_INFINITY,
    };
    for _ in 0..trials {
        let a = generate(rho, b, c, a0, rng);
        check_one(rho, b, c, &a, &mut tally);
    }
    Ok(report(
        tally,
        trials,
        json!({ "rho": rho, "b": b, "c": c, "a0": a0, "trials": trials }),
    ))
}

/// Random instances with `rho in (0, 0.95)`, `c in (0, 1]`, `b_0 in (0, 1]`
/// geometrically non-increasing, `a_0 in [0, 10]`, sequence length 40.
pub fn fuzz_sequence_lemma(instances: usize, seed: u64) -> VerificationReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally {
        pairs: 0,
        violations: Vec::new(),
        worst_rel: f64::NEG_INFINITY,
    };
    const LEN: usize = 40;
    for _ in 0..instances {
        let rho = rng.random_range(1e-6..0.95);
        let c = 1.0 - rng.random::<f64>();
        let b0 = 1.0 - rng.random::<f64>();
        let ratio: f64 = rng.random_range(0.5..=1.0);
        let b: Vec<f64> = (0..LEN).map(|k| b0 * ratio.powi(k as i32)).collect();
        let a0 = rng.random_range(0.0..=10.0);
        let a = generate(rho, &b, c, a0, &mut rng);
        check_one(rho, &b, c, &a, &mut tally);
    }
    report(tally, instances, json!({ "instances": instances, "seed": seed, "length": LEN }))
}
