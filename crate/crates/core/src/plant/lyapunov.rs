use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{lipschitz_constant_of_h, steady_state_map, PlantModel};
use crate::error::{check_dim, Error, Result};
use crate::linalg;

/// Stopping threshold on the bounded tail of the Lyapunov series.
pub const LYAPUNOV_TAIL_TOL: f64 = 1e-12;

const MAX_SERIES_TERMS: usize = 1_000_000;

/// Quadratic Lyapunov function `V(x, u) = (x - h(u))^T P (x - h(u))` and the
/// closed-loop constants derived from it.
#[derive(Debug, Clone, Serialize)]
pub struct LyapunovCertificate {
    #[serde(serialize_with = "ser_matrix")]
    pub p: DMatrix<f64>,
    #[serde(serialize_with = "ser_matrix")]
    pub q: DMatrix<f64>,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    /// Per-step decay factor of the expected Lyapunov value under the dueling update.
    pub mu: f64,
    pub a1: f64,
    pub l_h: f64,
    /// Frobenius norm of `A^T P A - P + Q`.
    pub residual: f64,
    pub series_terms: usize,
}

impl LyapunovCertificate {
    /// `mu < 1`; otherwise every bound built on this certificate is vacuous.
    pub fn is_contractive(&self) -> bool {
        self.mu < 1.0
    }
}

fn ser_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    use serde::Serialize;
    linalg::matrix_to_rows(m).serialize(s)
}

/// Solves `A^T P A - P = -Q` by summing `P = sum_k (A^T)^k Q A^k`.
///
/// The tail after `K` terms is `(A^K)^T P (A^K)`, bounded by
/// `s ||P_K|| / (1 - s)` with `s = ||A^K||_F^2`; summation stops once that bound
/// drops below [`LYAPUNOV_TAIL_TOL`].
pub fn compute_lyapunov_certificate(
    model: &PlantModel,
    q: &DMatrix<f64>,
    l_h: f64,
) -> Result<LyapunovCertificate> {
    let n = model.n_x();
    check_dim("Q rows", n, q.nrows())?;
    check_dim("Q columns", n, q.ncols())?;
    if !linalg::is_symmetric(q, 1e-12) {
        return Err(Error::NotSymmetric("Q"));
    }
    let (alpha3, _) = linalg::sym_eig_extremes(q);
    if !(alpha3 > 0.0) {
        return Err(Error::NotPositiveDefinite("Q"));
    }
    if !(l_h > 0.0 && l_h.is_finite()) {
        return Err(Error::invalid("l_h", format!("must be positive and finite, got {l_h}")));
    }
    if !(model.spectral_radius() < 1.0) {
        return Err(Error::Unstable {
            spectral_radius: model.spectral_radius(),
        });
    }

    let a = model.a();
    let at = a.transpose();
    let mut p = q.clone();
    let mut power = DMatrix::<f64>::identity(n, n);
    let mut terms = 1;
    loop {
        power = &power * a;
        let s = power.norm_squared();
        if s < 1.0 && s * p.norm() / (1.0 - s) < LYAPUNOV_TAIL_TOL {
            break;
        }
        if terms >= MAX_SERIES_TERMS {
            return Err(Error::NonConvergence {
                what: "Lyapunov series",
                iterations: terms,
            });
        }
        p += power.transpose() * q * &power;
        terms += 1;
    }
    // Symmetrize away rounding.
    let p = (&p + p.transpose()) * 0.5;
    let residual = (&at * &p * a - &p + q).norm();

    let (alpha1, alpha2) = linalg::sym_eig_extremes(&p);
    let mu = 2.0 * alpha2 / alpha1 * (1.0 - alpha3 / alpha2);
    let a1 = 4.0 * alpha2 * l_h * l_h;
    Ok(LyapunovCertificate {
        p,
        q: q.clone(),
        alpha1,
        alpha2,
        alpha3,
        mu,
        a1,
        l_h,
        residual,
        series_terms: terms,
    })
}

pub fn lyapunov_value(
    cert: &LyapunovCertificate,
    model: &PlantModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<f64> {
    check_dim("certificate", model.n_x(), cert.p.nrows())?;
    check_dim("state", model.n_x(), x.len())?;
    let d = x - steady_state_map(model, u)?;
    Ok(d.dot(&(&cert.p * &d)))
}

/// Lower bound on `mu` over every Lyapunov function satisfying the sandwich and
/// decrease inequalities in the Euclidean norm: `mu >= 2 ||A||_2^2`.
///
/// From `alpha1 ||Ax||^2 <= V(Ax) <= V(x) - alpha3 ||x||^2 <= (alpha2 - alpha3) ||x||^2`.
pub fn mu_lower_bound(model: &PlantModel) -> f64 {
    let n = linalg::op_norm(model.a());
    2.0 * n * n
}

/// Picks the `Q` that minimizes `mu`, or `None` when `Q = I` is already optimal.
///
/// When `||A||_2 < 1`, `Q = I - A^T A` yields `P = I` and attains the lower bound
/// `2 ||A||_2^2`. Otherwise no certificate beats `Q = I` by enough to matter
/// and the caller should inspect [`mu_lower_bound`].
pub fn retune_q(model: &PlantModel) -> Option<DMatrix<f64>> {
    let n = model.n_x();
    let a = model.a();
    if linalg::op_norm(a) >= 1.0 {
        return None;
    }
    let q = DMatrix::identity(n, n) - a.transpose() * a;
    let q = (&q + q.transpose()) * 0.5;
    let l_h = lipschitz_constant_of_h(model).max(f64::MIN_POSITIVE);
    let identity = compute_lyapunov_certificate(model, &DMatrix::identity(n, n), l_h).ok()?;
    let tuned = compute_lyapunov_certificate(model, &q, l_h).ok()?;
    (tuned.mu < identity.mu).then_some(q)
}
