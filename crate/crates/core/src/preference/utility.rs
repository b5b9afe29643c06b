use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::comfort::{self, PmvEnvironment};
use crate::error::{check_dim, Error, Result};
use crate::plant::{steady_state_map, PlantModel};

/// Search interval for the comfort-optimal air temperature, °C.
pub const COMFORT_SEARCH_RANGE: (f64, f64) = (15.0, 35.0);

type UtilityFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync;

/// Latent user cost `Phi(x, u)`; lower is better.
#[derive(Clone)]
pub enum LatentUtility {
    /// `(x - x_ref)^T (x - x_ref)`.
    Quadratic { x_ref: DVector<f64> },
    /// PPD of the air temperature `x[state_index] + temperature_offset`.
    PpdComfort {
        env: PmvEnvironment,
        state_index: usize,
        temperature_offset: f64,
    },
    /// Black-box evaluator without gradient information.
    Custom { name: String, f: Arc<UtilityFn> },
}

impl fmt::Debug for LatentUtility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LatentUtility::Quadratic { x_ref } => {
                f.debug_struct("Quadratic").field("x_ref", &x_ref.as_slice()).finish()
            }
            LatentUtility::PpdComfort {
                env,
                state_index,
                temperature_offset,
            } => f
                .debug_struct("PpdComfort")
                .field("env", env)
                .field("state_index", state_index)
                .field("temperature_offset", temperature_offset)
                .finish(),
            LatentUtility::Custom { name, .. } => f.debug_struct("Custom").field("name", name).finish(),
        }
    }
}

impl LatentUtility {
    pub fn quadratic(x_ref: DVector<f64>) -> Self {
        LatentUtility::Quadratic { x_ref }
    }

    pub fn custom(
        name: impl Into<String>,
        f: impl Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync + 'static,
    ) -> Self {
        LatentUtility::Custom {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LatentUtility::Quadratic { .. } => "quadratic-tracking",
            LatentUtility::PpdComfort { .. } => "ppd-comfort",
            LatentUtility::Custom { .. } => "custom-blackbox",
        }
    }

    pub fn has_gradient(&self) -> bool {
        matches!(self, LatentUtility::Quadratic { .. })
    }

    /// Checks the utility against the plant's state dimension.
    pub fn check_state_dim(&self, n_x: usize) -> Result<()> {
        match self {
            LatentUtility::Quadratic { x_ref } => check_dim("x_ref", n_x, x_ref.len()),
            LatentUtility::PpdComfort { state_index, .. } if *state_index >= n_x => Err(Error::invalid(
                "state_index",
                format!("{state_index} is out of range for {n_x} states"),
            )),
            _ => Ok(()),
        }
    }

    pub fn evaluate(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
        let value = match self {
            LatentUtility::Quadratic { x_ref } => {
                check_dim("state", x_ref.len(), x.len())?;
                (x - x_ref).norm_squared()
            }
            LatentUtility::PpdComfort {
                env,
                state_index,
                temperature_offset,
            } => {
                self.check_state_dim(x.len())?;
                comfort::ppd(comfort::pmv(env, x[*state_index] + temperature_offset)?)
            }
            LatentUtility::Custom { f, .. } => f(x, u),
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::NonFiniteUtility)
        }
    }

    /// `(grad_x Phi, grad_u Phi)`.
    pub fn gradient(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        match self {
            LatentUtility::Quadratic { x_ref } => {
                check_dim("state", x_ref.len(), x.len())?;
                Ok(((x - x_ref) * 2.0, DVector::zeros(u.len())))
            }
            _ => Err(Error::GradientUnavailable(self.kind())),
        }
    }

    /// Observable the human judges in a live session: the comfort temperature,
    /// or the full state for other kinds.
    pub fn observables(&self, x: &DVector<f64>) -> Vec<f64> {
        match self {
            LatentUtility::PpdComfort {
                state_index,
                temperature_offset,
                ..
            } => vec![x[*state_index] + temperature_offset],
            _ => x.as_slice().to_vec(),
        }
    }
}

/// Steady-state reduction `Phi~(u) = Phi(h(u), u)`.
#[derive(Debug, Clone)]
pub struct ReducedUtility {
    utility: LatentUtility,
    plant: PlantModel,
}

impl ReducedUtility {
    pub fn new(utility: LatentUtility, plant: PlantModel) -> Result<Self> {
        utility.check_state_dim(plant.n_x())?;
        Ok(Self { utility, plant })
    }

    pub fn utility(&self) -> &LatentUtility {
        &self.utility
    }

    pub fn plant(&self) -> &PlantModel {
        &self.plant
    }

    pub fn n_u(&self) -> usize {
        self.plant.n_u()
    }

    pub fn evaluate(&self, u: &DVector<f64>) -> Result<f64> {
        let x = steady_state_map(&self.plant, u)?;
        self.utility.evaluate(&x, u)
    }

    /// `H^T grad_x Phi(h(u), u) + grad_u Phi(h(u), u)`.
    pub fn gradient(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let x = steady_state_map(&self.plant, u)?;
        let (gx, gu) = self.utility.gradient(&x, u)?;
        Ok(self.plant.steady_state_gain().transpose() * gx + gu)
    }

    /// Hessian `2 H^T H` of the quadratic kind.
    pub fn hessian(&self) -> Result<DMatrix<f64>> {
        match &self.utility {
            LatentUtility::Quadratic { .. } => {
                let h = self.plant.steady_state_gain();
                Ok(h.transpose() * h * 2.0)
            }
            other => Err(Error::GradientUnavailable(other.kind())),
        }
    }

    /// Minimizer `u*` of the reduced utility where it is available in closed form
    /// or by a scalar search.
    pub fn optimum(&self) -> Result<DVector<f64>> {
        match &self.utility {
            LatentUtility::Quadratic { x_ref } => {
                let h = self.plant.steady_state_gain().clone();
                let svd = h.svd(true, true);
                svd.solve(x_ref, 1e-14)
                    .map_err(|e| Error::invalid("x_ref", format!("least squares failed: {e}")))
            }
            LatentUtility::PpdComfort {
                env,
                state_index,
                temperature_offset,
            } => {
                if self.plant.n_u() != 1 {
                    return Err(Error::GradientUnavailable("ppd-comfort with n_u > 1"));
                }
                let gain = self.plant.steady_state_gain()[(*state_index, 0)];
                if gain == 0.0 {
                    return Err(Error::invalid("plant", "input does not reach the comfort state"));
                }
                let t = self.optimal_temperature_with(env)?;
                Ok(DVector::from_element(1, (t - temperature_offset) / gain))
            }
            LatentUtility::Custom { .. } => Err(Error::GradientUnavailable("custom-blackbox")),
        }
    }

    fn optimal_temperature_with(&self, env: &PmvEnvironment) -> Result<f64> {
        let (lo, hi) = COMFORT_SEARCH_RANGE;
        comfort::optimal_temperature(env, lo, hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};
    use proptest::prelude::*;

    fn c01() -> PlantModel {
        PlantModel::new(dmatrix![0.1, 1.0; 0.0, 0.1], DMatrix::identity(2, 2)).unwrap()
    }

    #[test]
    fn quadratic_examples() {
        let phi = LatentUtility::quadratic(dvector![100.0, 100.0]);
        let u = dvector![0.0, 0.0];
        assert_eq!(phi.evaluate(&dvector![100.0, 100.0], &u).unwrap(), 0.0);
        assert_eq!(phi.evaluate(&dvector![90.0, 100.0], &u).unwrap(), 100.0);
        assert!(phi.evaluate(&dvector![1.0], &u).is_err());
    }

    #[test]
    fn ppd_at_neutral_temperature_is_five() {
        let env = PmvEnvironment::default();
        let t = comfort::optimal_temperature(&env, 15.0, 35.0).unwrap();
        let phi = LatentUtility::PpdComfort {
            env,
            state_index: 0,
            temperature_offset: 0.0,
        };
        let v = phi.evaluate(&dvector![t], &dvector![0.0]).unwrap();
        assert!((v - 5.0).abs() < 1e-6);
        assert!(!phi.has_gradient());
    }

    #[test]
    fn reduced_quadratic_vanishes_at_optimum() {
        let r = ReducedUtility::new(LatentUtility::quadratic(dvector![100.0, 100.0]), c01()).unwrap();
        let u_star = r.optimum().unwrap();
        assert!((u_star.clone() - dvector![-10.0, 90.0]).amax() < 1e-10);
        assert!(r.evaluate(&u_star).unwrap() < 1e-18);
        assert!(r.gradient(&u_star).unwrap().amax() < 1e-10);
    }

    #[test]
    fn deadbeat_reduced_is_distance_to_reference() {
        let plant = PlantModel::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2)).unwrap();
        let r = ReducedUtility::new(LatentUtility::quadratic(dvector![3.0, -1.0]), plant).unwrap();
        let u = dvector![1.0, 1.0];
        assert!((r.evaluate(&u).unwrap() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let r = ReducedUtility::new(LatentUtility::quadratic(dvector![100.0, 100.0]), c01()).unwrap();
        let u = dvector![3.0, -7.0];
        let g = r.gradient(&u).unwrap();
        for i in 0..2 {
            let mut e = DVector::zeros(2);
            e[i] = 1e-4;
            let fd = (r.evaluate(&(&u + &e)).unwrap() - r.evaluate(&(&u - &e)).unwrap()) / 2e-4;
            assert!((fd - g[i]).abs() < 1e-6 * g[i].abs().max(1.0));
        }
    }

    #[test]
    fn comfort_optimum_reaches_neutral_temperature() {
        let plant = PlantModel::new(dmatrix![0.5], dmatrix![2.0]).unwrap();
        let env = PmvEnvironment::default();
        let r = ReducedUtility::new(
            LatentUtility::PpdComfort {
                env,
                state_index: 0,
                temperature_offset: 5.0,
            },
            plant,
        )
        .unwrap();
        let u = r.optimum().unwrap();
        let t = 4.0 * u[0] + 5.0;
        assert!((t - comfort::optimal_temperature(&env, 15.0, 35.0).unwrap()).abs() < 1e-9);
        assert!((r.evaluate(&u).unwrap() - 5.0).abs() < 1e-6);
    }

    #[test]
    fn custom_and_index_checks() {
        let phi = LatentUtility::custom("nan", |_, _| f64::NAN);
        assert!(matches!(
            phi.evaluate(&dvector![0.0], &dvector![0.0]),
            Err(Error::NonFiniteUtility)
        ));
        assert!(matches!(phi.gradient(&dvector![0.0], &dvector![0.0]), Err(Error::GradientUnavailable(_))));
        let bad = LatentUtility::PpdComfort {
            env: PmvEnvironment::default(),
            state_index: 3,
            temperature_offset: 0.0,
        };
        assert!(ReducedUtility::new(bad, c01()).is_err());
    }

    proptest! {
        #[test]
        fn deadbeat_reduced_is_even(u0 in -50.0f64..50.0, u1 in -50.0f64..50.0, r0 in -50.0f64..50.0, r1 in -50.0f64..50.0) {
            let plant = PlantModel::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2)).unwrap();
            let pos = ReducedUtility::new(LatentUtility::quadratic(dvector![r0, r1]), plant.clone()).unwrap();
            let neg = ReducedUtility::new(LatentUtility::quadratic(dvector![-r0, -r1]), plant).unwrap();
            prop_assert_eq!(pos.evaluate(&dvector![u0, u1]).unwrap(), neg.evaluate(&dvector![-u0, -u1]).unwrap());
        }
    }
}
