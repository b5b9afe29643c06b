use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::plant::LyapunovCertificate;
use crate::preference::{LatentUtility, LinkFunction, ReducedUtility};

/// Axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Region {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let r = Self { lower, upper };
        if r.lower.len() != r.upper.len() {
            return Err(Error::DimensionMismatch {
                what: "region bounds",
                expected: r.lower.len(),
                got: r.upper.len(),
            });
        }
        if r.is_empty() {
            return Err(Error::invalid("region", "empty box"));
        }
        Ok(r)
    }

    /// Smallest box containing `points`, half-widths scaled by `inflate`.
    /// Degenerate directions get a half-width of `inflate - 1`.
    pub fn bounding(points: impl IntoIterator<Item = DVector<f64>>, inflate: f64) -> Result<Self> {
        let mut lo: Option<DVector<f64>> = None;
        let mut hi: Option<DVector<f64>> = None;
        for p in points {
            match (&mut lo, &mut hi) {
                (Some(l), Some(h)) => {
                    if l.len() != p.len() {
                        return Err(Error::DimensionMismatch {
                            what: "region point",
                            expected: l.len(),
                            got: p.len(),
                        });
                    }
                    *l = l.inf(&p);
                    *h = h.sup(&p);
                }
                _ => {
                    lo = Some(p.clone());
                    hi = Some(p);
                }
            }
        }
        let (lo, hi) = lo.zip(hi).ok_or_else(|| Error::invalid("region", "no points"))?;
        let center = (&lo + &hi) * 0.5;
        let half = (&hi - &lo) * (0.5 * inflate);
        let pad = (inflate - 1.0).max(0.0);
        let half = half.map(|h| if h > 0.0 { h } else { pad });
        Self::new((&center - &half).as_slice().to_vec(), (&center + &half).as_slice().to_vec())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty() || self.lower.iter().zip(&self.upper).any(|(l, u)| !(l <= u))
    }

    pub fn contains(&self, p: &DVector<f64>) -> bool {
        p.len() == self.dim() && p.iter().enumerate().all(|(i, x)| *x >= self.lower[i] && *x <= self.upper[i])
    }

    pub fn center(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.lower.iter().zip(&self.upper).map(|(l, u)| {
                if l == u {
                    *l
                } else {
                    rng.random_range(*l..=*u)
                }
            }),
        )
    }

    /// All `2^n` corners; `n` is capped at 20.
    pub fn vertices(&self) -> Result<Vec<DVector<f64>>> {
        let n = self.dim();
        if n > 20 {
            return Err(Error::invalid("region", "too many dimensions to enumerate corners"));
        }
        Ok((0..1usize << n)
            .map(|mask| {
                DVector::from_fn(n, |i, _| {
                    if mask >> i & 1 == 1 {
                        self.upper[i]
                    } else {
                        self.lower[i]
                    }
                })
            })
            .collect())
    }
}

/// Lipschitz, smoothness and strong-convexity constants of `Phi~` on a box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionConstants {
    pub l0: f64,
    pub l1: f64,
    pub m: f64,
    /// Closed form (quadratic kind) rather than a finite-difference estimate.
    pub exact: bool,
}

const FD_STEP: f64 = 1e-4;
const FD_SAMPLES: usize = 1000;

/// `L_0 = sup ||grad Phi~||` on the box, `L_1` and `m` the extreme Hessian eigenvalues.
pub fn estimate_assumption_constants(reduced: &ReducedUtility, region: &Region) -> Result<AssumptionConstants> {
    if region.is_empty() {
        return Err(Error::invalid("region", "empty box"));
    }
    crate::error::check_dim("region", reduced.n_u(), region.dim())?;
    if let Ok(hess) = reduced.hessian() {
        let (m, l1) = linalg::sym_eig_extremes(&hess);
        // ||grad|| is convex for an affine gradient, so the sup sits on a corner.
        let mut l0: f64 = 0.0;
        for v in region.vertices()? {
            l0 = l0.max(reduced.gradient(&v)?.norm());
        }
        return Ok(AssumptionConstants {
            l0,
            l1,
            m,
            exact: true,
        });
    }
    let points = fd_points(region);
    let mut l0: f64 = 0.0;
    let mut l1: f64 = 0.0;
    let mut m = f64::INFINITY;
    for p in &points {
        l0 = l0.max(fd_gradient(|u| reduced.evaluate(u), p)?.norm());
        let h = fd_hessian(|u| reduced.evaluate(u), p)?;
        let (lo, hi) = linalg::sym_eig_extremes(&h);
        l1 = l1.max(hi.abs().max(lo.abs()));
        m = m.min(lo);
    }
    Ok(AssumptionConstants {
        l0,
        l1,
        m,
        exact: false,
    })
}

/// Deterministic evaluation points: a 101-point grid in 1-D, a low-discrepancy
/// set otherwise.
fn fd_points(region: &Region) -> Vec<DVector<f64>> {
    let n = region.dim();
    if n == 1 {
        return (0..=100)
            .map(|i| {
                let t = i as f64 / 100.0;
                DVector::from_element(1, region.lower[0] + t * (region.upper[0] - region.lower[0]))
            })
            .collect();
    }
    // Kronecker sequence with square roots of primes.
    const PRIMES: [f64; 20] = [
        2., 3., 5., 7., 11., 13., 17., 19., 23., 29., 31., 37., 41., 43., 47., 53., 59., 61., 67., 71.,
    ];
    (0..FD_SAMPLES)
        .map(|j| {
            DVector::from_fn(n, |i, _| {
                let frac = ((j as f64 + 0.5) * PRIMES[i % 20].sqrt()).fract();
                region.lower[i] + frac * (region.upper[i] - region.lower[i])
            })
        })
        .collect()
}

fn fd_gradient(f: impl Fn(&DVector<f64>) -> Result<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    let n = u.len();
    let mut g = DVector::zeros(n);
    for i in 0..n {
        let mut e = DVector::zeros(n);
        e[i] = FD_STEP;
        g[i] = (f(&(u + &e))? - f(&(u - &e))?) / (2.0 * FD_STEP);
    }
    Ok(g)
}

fn fd_hessian(f: impl Fn(&DVector<f64>) -> Result<f64>, u: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = u.len();
    let h = 1e-3;
    let f0 = f(u)?;
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut ei = DVector::zeros(n);
            ei[i] = h;
            let mut ej = DVector::zeros(n);
            ej[j] = h;
            let v = if i == j {
                (f(&(u + &ei))? - 2.0 * f0 + f(&(u - &ei))?) / (h * h)
            } else {
                (f(&(u + &ei + &ej))? - f(&(u + &ei - &ej))? - f(&(u - &ei + &ej))? + f(&(u - &ei - &ej))?)
                    / (4.0 * h * h)
            };
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// `L_x = sup ||grad_x Phi(x, u)||` over the state box.
pub fn state_lipschitz(utility: &LatentUtility, states: &Region, n_u: usize) -> Result<f64> {
    let u = DVector::zeros(n_u);
    match utility {
        LatentUtility::Quadratic { .. } => {
            let mut best: f64 = 0.0;
            for v in states.vertices()? {
                best = best.max(utility.gradient(&v, &u)?.0.norm());
            }
            Ok(best)
        }
        _ => {
            let mut best: f64 = 0.0;
            for p in fd_points(states) {
                best = best.max(fd_gradient(|x| utility.evaluate(x, &u), &p)?.norm());
            }
            Ok(best)
        }
    }
}

/// Every constant the stability and convergence bounds are assembled from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub l_0: f64,
    pub l_1: f64,
    pub m: f64,
    pub l_x: f64,
    pub l_sigma0: f64,
    pub l_sigma1: f64,
    pub sigma_prime0: f64,
    pub l_p0: f64,
    pub l_p1: f64,
    pub a2: f64,
    pub r1: f64,
    /// With the `(2 delta^2 + 2 eta + (eta/delta)^2)` factor used inside the error proof.
    pub r2: f64,
    /// With the `(2 delta^2 + eta + (eta/(2 delta))^2)` factor of the stability statement.
    pub r2_statement_form: f64,
    pub rho: f64,
    pub mu: f64,
    pub a1: f64,
    pub alpha2: f64,
    pub eta: f64,
    pub delta: f64,
    /// Dimension used for the `sqrt(n)` factor of `a2`: the input dimension.
    pub n: usize,
}

/// Offset factor `2 delta^2 + eta + (eta / 2 delta)^2` of the stability bound.
pub fn stability_offset(eta: f64, delta: f64) -> f64 {
    2.0 * delta * delta + eta + (eta / (2.0 * delta)).powi(2)
}

/// The variant `2 delta^2 + 2 eta + (eta / delta)^2` appearing in the error proof.
pub fn stability_offset_proof_form(eta: f64, delta: f64) -> f64 {
    2.0 * delta * delta + 2.0 * eta + (eta / delta).powi(2)
}

impl BoundConstants {
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        assumption: &AssumptionConstants,
        l_x: f64,
        link: LinkFunction,
        cert: &LyapunovCertificate,
        eta: f64,
        delta: f64,
        n_u: usize,
    ) -> Self {
        Self {
            l_0: assumption.l0,
            l_1: assumption.l1,
            m: assumption.m,
            l_x,
            l_sigma0: link.lipschitz(),
            l_sigma1: link.smoothness(),
            sigma_prime0: link.slope_at_zero(),
            l_p0: 0.0,
            l_p1: 0.0,
            a2: 0.0,
            r1: 0.0,
            r2: 0.0,
            r2_statement_form: 0.0,
            rho: 0.0,
            mu: cert.mu,
            a1: cert.a1,
            alpha2: cert.alpha2,
            eta,
            delta,
            n: n_u,
        }
        .recompute()
    }

    /// Recomputes every derived field from the primitive ones.
    pub fn recompute(&self) -> Self {
        let mut out = self.clone();
        let (ls0, ls1, s0) = (self.l_sigma0, self.l_sigma1, self.sigma_prime0);
        out.l_p0 = ls0 * self.l_0;
        out.l_p1 = s0 * self.l_1 + ls1 * self.l_0 * self.l_0;
        out.a2 = out.l_p1 * (self.n as f64).sqrt() + (s0 * self.l_1 + out.l_p1) * (1.0 + self.eta / self.delta);
        let lead = 2.0 * ls0 * ls0 * self.l_x * self.l_x / (self.alpha2 * self.delta * self.delta);
        let noise = 2.0 * out.a2 * out.a2 * self.delta * self.delta;
        out.r1 = lead * (self.mu + 1.0) * self.mu;
        out.r2 = lead * self.a1 * stability_offset_proof_form(self.eta, self.delta) * self.mu + noise;
        out.r2_statement_form = lead * self.a1 * stability_offset(self.eta, self.delta) * self.mu + noise;
        out.rho = 1.0 - 2.0 * s0 * self.m * self.eta;
        out
    }

    /// `sqrt(R1 V + R2)`.
    pub fn error_bound(&self, v_prev: f64) -> f64 {
        (self.r1 * v_prev + self.r2).sqrt()
    }
}
