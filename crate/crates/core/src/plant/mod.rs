//! Discrete-time plants with an exact steady-state input-state map.

mod lyapunov;
mod spec;

pub use lyapunov::{
    compute_lyapunov_certificate, lyapunov_value, mu_lower_bound, retune_q, LyapunovCertificate,
    LYAPUNOV_TAIL_TOL,
};
pub use spec::PlantSpec;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg;

/// State transition `x' = f(x, u)` with a unique steady state `h(u) = f(h(u), u)`.
///
/// Only the LTI realization ships; the controller and the session service are
/// written against this trait.
pub trait Plant {
    fn n_x(&self) -> usize;
    fn n_u(&self) -> usize;
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>>;
    fn steady_state(&self, u: &DVector<f64>) -> Result<DVector<f64>>;
}

/// Stable LTI plant `x_{k+1} = A x_k + B u_k`.
#[derive(Debug, Clone)]
pub struct PlantModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    /// `(I - A)^{-1} B`, cached at construction.
    h: DMatrix<f64>,
    spectral_radius: f64,
}

impl PlantModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch {
                what: "A columns",
                expected: a.nrows(),
                got: a.ncols(),
            });
        }
        if a.nrows() == 0 || b.ncols() == 0 {
            return Err(Error::invalid("plant", "n_x and n_u must be positive"));
        }
        check_dim("B rows", a.nrows(), b.nrows())?;
        let spectral_radius = linalg::spectral_radius(&a)?;
        if !(spectral_radius < 1.0) {
            return Err(Error::Unstable { spectral_radius });
        }
        let n = a.nrows();
        let lu = (DMatrix::identity(n, n) - &a).lu();
        let h = lu.solve(&b).ok_or(Error::SingularSteadyState)?;
        Ok(Self {
            a,
            b,
            h,
            spectral_radius,
        })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Steady-state gain `H = (I - A)^{-1} B`.
    pub fn steady_state_gain(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn spectral_radius(&self) -> f64 {
        self.spectral_radius
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }
}

impl Plant for PlantModel {
    fn n_x(&self) -> usize {
        self.a.nrows()
    }

    fn n_u(&self) -> usize {
        self.b.ncols()
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("state", self.n_x(), x.len())?;
        check_dim("input", self.n_u(), u.len())?;
        Ok(&self.a * x + &self.b * u)
    }

    fn steady_state(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        steady_state_map(self, u)
    }
}

/// Transient-free view of a plant: every step jumps straight to `h(u)`.
///
/// Running the closed loop on this wrapper gives the algebraic-plant baseline.
#[derive(Debug, Clone, Copy)]
pub struct AlgebraicPlant<'a>(pub &'a PlantModel);

impl Plant for AlgebraicPlant<'_> {
    fn n_x(&self) -> usize {
        self.0.n_x()
    }

    fn n_u(&self) -> usize {
        self.0.n_u()
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("state", self.0.n_x(), x.len())?;
        steady_state_map(self.0, u)
    }

    fn steady_state(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        steady_state_map(self.0, u)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub x: DVector<f64>,
    pub k: u64,
}

impl PlantState {
    pub fn new(x: DVector<f64>) -> Self {
        Self { x, k: 0 }
    }
}

pub fn plant_step(model: &PlantModel, state: &PlantState, input: &DVector<f64>) -> Result<PlantState> {
    Ok(PlantState {
        x: model.step(&state.x, input)?,
        k: state.k + 1,
    })
}

/// `h(u) = (I - A)^{-1} B u`.
pub fn steady_state_map(model: &PlantModel, u: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim("input", model.n_u(), u.len())?;
    Ok(&model.h * u)
}

/// Exact Lipschitz constant of `h` for an LTI plant: `||(I - A)^{-1} B||_2`.
pub fn lipschitz_constant_of_h(model: &PlantModel) -> f64 {
    linalg::op_norm(&model.h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn c01() -> PlantModel {
        PlantModel::new(dmatrix![0.1, 1.0; 0.0, 0.1], DMatrix::identity(2, 2)).unwrap()
    }

    #[test]
    fn deadbeat_step_is_b_u() {
        let m = PlantModel::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2)).unwrap();
        let s = PlantState::new(dvector![3.0, 3.0]);
        let next = plant_step(&m, &s, &dvector![1.0, 2.0]).unwrap();
        assert_eq!(next.x, dvector![1.0, 2.0]);
        assert_eq!(next.k, 1);
    }

    #[test]
    fn two_steps_from_rest() {
        let m = c01();
        let u = dvector![-10.0, 90.0];
        let s1 = plant_step(&m, &PlantState::new(dvector![0.0, 0.0]), &u).unwrap();
        assert_eq!(s1.x, u);
        let s2 = plant_step(&m, &s1, &u).unwrap();
        // A*[-10, 90] = [89, 9], plus u.
        assert!((s2.x - dvector![79.0, 99.0]).amax() < 1e-12);
        assert_eq!(s2.k, 2);
    }

    #[test]
    fn wrong_input_length_is_rejected() {
        let m = c01();
        let err = plant_step(&m, &PlantState::new(dvector![0.0, 0.0]), &dvector![1.0]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { what: "input", .. }));
    }

    #[test]
    fn steady_state_examples() {
        let dead = PlantModel::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2)).unwrap();
        assert_eq!(steady_state_map(&dead, &dvector![1.0, 2.0]).unwrap(), dvector![1.0, 2.0]);

        let h = steady_state_map(&c01(), &dvector![-10.0, 90.0]).unwrap();
        assert!((h - dvector![100.0, 100.0]).amax() < 1e-10);

        let scalar = PlantModel::new(dmatrix![0.5], dmatrix![2.0]).unwrap();
        assert!((steady_state_map(&scalar, &dvector![1.0]).unwrap()[0] - 4.0).abs() < 1e-14);
    }

    #[test]
    fn unstable_plant_is_rejected() {
        let err = PlantModel::new(dmatrix![1.0, 0.0; 0.0, 0.5], DMatrix::identity(2, 2)).unwrap_err();
        assert!(matches!(err, Error::Unstable { .. }));
        let err = PlantModel::new(dmatrix![0.0, 2.0; -2.0, 0.0], DMatrix::identity(2, 2)).unwrap_err();
        assert!(matches!(err, Error::Unstable { .. }));
    }

    #[test]
    fn lipschitz_examples() {
        let dead = PlantModel::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2)).unwrap();
        assert!((lipschitz_constant_of_h(&dead) - 1.0).abs() < 1e-14);
        let scalar = PlantModel::new(dmatrix![0.5], dmatrix![2.0]).unwrap();
        assert!((lipschitz_constant_of_h(&scalar) - 4.0).abs() < 1e-14);
        // Largest singular value of [[10/9, 100/81], [0, 10/9]], via numpy.linalg.svd.
        assert!((lipschitz_constant_of_h(&c01()) - 1.8883494001218517).abs() < 1e-12);
    }

    #[test]
    fn algebraic_wrapper_jumps_to_steady_state() {
        let m = c01();
        let alg = AlgebraicPlant(&m);
        let x = alg.step(&dvector![5.0, -5.0], &dvector![-10.0, 90.0]).unwrap();
        assert!((x - dvector![100.0, 100.0]).amax() < 1e-10);
    }
}
