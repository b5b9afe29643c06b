use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::preference::{LinkFunction, ReducedUtility};

/// `p_{u_ref}(u) = sigma(Phi~(u) - Phi~(u_ref))`, the probability that `u_ref`
/// is preferred over `u`.
pub fn p_value(reduced: &ReducedUtility, link: LinkFunction, u_ref: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
    Ok(link.eval(reduced.evaluate(u)? - reduced.evaluate(u_ref)?))
}

/// `sigma'(Phi~(u) - Phi~(u_ref)) grad Phi~(u)`.
pub fn gradient_of_p(
    reduced: &ReducedUtility,
    link: LinkFunction,
    u_ref: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    if !reduced.utility().has_gradient() {
        return Err(Error::GradientUnavailable(reduced.utility().kind()));
    }
    let t = reduced.evaluate(u)? - reduced.evaluate(u_ref)?;
    Ok(reduced.gradient(u)? * link.derivative(t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::PlantModel;
    use crate::preference::LatentUtility;
    use nalgebra::{dmatrix, dvector, DMatrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c01() -> ReducedUtility {
        let plant = PlantModel::new(dmatrix![0.1, 1.0; 0.0, 0.1], DMatrix::identity(2, 2)).unwrap();
        ReducedUtility::new(LatentUtility::quadratic(dvector![100.0, 100.0]), plant).unwrap()
    }

    #[test]
    fn same_reference_gives_slope_at_zero() {
        let r = c01();
        let u = dvector![3.0, -7.0];
        for link in [LinkFunction::Logistic, LinkFunction::Probit] {
            let g = gradient_of_p(&r, link, &u, &u).unwrap();
            let want = r.gradient(&u).unwrap() * link.slope_at_zero();
            assert!((g - &want).norm() <= 1e-10 * want.norm());
        }
    }

    #[test]
    fn vanishes_at_the_optimum() {
        let r = c01();
        let u_star = r.optimum().unwrap();
        let g = gradient_of_p(&r, LinkFunction::Logistic, &dvector![1.0, 2.0], &u_star).unwrap();
        assert!(g.norm() < 1e-9);
    }

    #[test]
    fn matches_central_differences() {
        // Small reference offset keeps sigma' away from its tails.
        let plant = PlantModel::new(dmatrix![0.1, 1.0; 0.0, 0.1], DMatrix::identity(2, 2)).unwrap();
        let r = ReducedUtility::new(LatentUtility::quadratic(dvector![1.0, 1.0]), plant).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let u = dvector![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let u_ref = dvector![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let g = gradient_of_p(&r, LinkFunction::Logistic, &u_ref, &u).unwrap();
            let h = 1e-5;
            let fd = DVector::from_fn(2, |i, _| {
                let mut e = DVector::zeros(2);
                e[i] = h;
                let hi = p_value(&r, LinkFunction::Logistic, &u_ref, &(&u + &e)).unwrap();
                let lo = p_value(&r, LinkFunction::Logistic, &u_ref, &(&u - &e)).unwrap();
                (hi - lo) / (2.0 * h)
            });
            assert!((&g - &fd).norm() <= 1e-6 * g.norm().max(1e-3), "{g} vs {fd}");
        }
    }

    #[test]
    fn black_box_has_no_gradient() {
        let plant = PlantModel::new(dmatrix![0.5], dmatrix![1.0]).unwrap();
        let r = ReducedUtility::new(LatentUtility::custom("bb", |x, _| x[0] * x[0]), plant).unwrap();
        assert!(matches!(
            gradient_of_p(&r, LinkFunction::Logistic, &dvector![0.0], &dvector![1.0]),
            Err(Error::GradientUnavailable(_))
        ));
    }
}
