//! Property tests of the structural invariants across plant, preference,
//! controller and analysis.

use nalgebra::{DMatrix, DVector};
use prefctl_core::analysis::{gradient_of_p, BoundConstants};
use prefctl_core::controller::{run_closed_loop, sample_unit_sphere, ControllerConfig};
use prefctl_core::harness::builtin;
use prefctl_core::plant::{
    compute_lyapunov_certificate, lipschitz_constant_of_h, lyapunov_value, plant_step, steady_state_map, PlantModel,
    PlantState,
};
use prefctl_core::preference::{LatentUtility, LinkFunction, PreferenceOracle, ReducedUtility};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random stable plant: entries in [-1, 1], A rescaled to spectral radius `radius`.
fn plant_strategy(n_x: usize, n_u: usize) -> impl Strategy<Value = PlantModel> {
    (
        prop::collection::vec(-1.0f64..1.0, n_x * n_x),
        prop::collection::vec(-1.0f64..1.0, n_x * n_u),
        0.05f64..0.9,
    )
        .prop_filter_map("degenerate", move |(a, b, radius)| {
            let a = DMatrix::from_row_slice(n_x, n_x, &a);
            let r = a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
            if r < 1e-3 {
                return None;
            }
            let b = DMatrix::from_row_slice(n_x, n_u, &b);
            if b.norm() < 1e-2 {
                return None;
            }
            PlantModel::new(a * (radius / r), b).ok()
        })
}

fn dvec(n: usize, range: std::ops::Range<f64>) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(range, n).prop_map(DVector::from_vec)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn steady_state_is_a_fixed_point(p in plant_strategy(3, 2), u in dvec(2, -10.0..10.0)) {
        let h = steady_state_map(&p, &u).unwrap();
        let next = plant_step(&p, &PlantState::new(h.clone()), &u).unwrap();
        prop_assert!((next.x - &h).norm() <= 1e-10 * h.norm().max(1.0));
    }

    #[test]
    fn lyapunov_decrease_and_sandwich(
        p in plant_strategy(3, 2),
        u in dvec(2, -10.0..10.0),
        xs in prop::collection::vec(dvec(3, -50.0..50.0), 16),
    ) {
        let q = DMatrix::identity(3, 3);
        let cert = compute_lyapunov_certificate(&p, &q, lipschitz_constant_of_h(&p)).unwrap();
        let h = steady_state_map(&p, &u).unwrap();
        for x in xs {
            let e2 = (&x - &h).norm_squared();
            let v = lyapunov_value(&cert, &p, &x, &u).unwrap();
            let tol = 1e-8 * v.max(1.0);
            prop_assert!(cert.alpha1 * e2 <= v + tol);
            prop_assert!(v <= cert.alpha2 * e2 + tol);
            let next = plant_step(&p, &PlantState::new(x), &u).unwrap();
            let v_next = lyapunov_value(&cert, &p, &next.x, &u).unwrap();
            prop_assert!(v_next - v <= -cert.alpha3 * e2 + tol, "{} vs {}", v_next - v, -cert.alpha3 * e2);
        }
    }

    #[test]
    fn constant_input_converges_geometrically(
        p in plant_strategy(4, 1),
        u in dvec(1, -5.0..5.0),
        x0 in dvec(4, -20.0..20.0),
    ) {
        let h = steady_state_map(&p, &u).unwrap();
        // The deviation is rescaled to unit length after every step so the
        // ratios stay above the rounding floor around h(u).
        let mut e = &x0 - &h;
        prop_assume!(e.norm() > 1e-6);
        e /= e.norm();
        let mut log_ratios = Vec::new();
        for _ in 0..600 {
            let next = plant_step(&p, &PlantState::new(&h + &e), &u).unwrap().x - &h;
            let d = next.norm();
            if d == 0.0 {
                break;
            }
            log_ratios.push(d.ln());
            e = next / d;
        }
        prop_assume!(log_ratios.len() >= 50);
        // Averaged over the last 50 steps; single-step ratios oscillate for complex modes.
        let tail = &log_ratios[log_ratios.len() - 50..];
        let rate = (tail.iter().sum::<f64>() / 50.0).exp();
        prop_assert!(rate <= p.spectral_radius() + 0.05, "rate {rate}, radius {}", p.spectral_radius());
    }

    #[test]
    fn preference_probabilities_are_antisymmetric(a in -30.0f64..30.0, b in -30.0f64..30.0) {
        for link in [LinkFunction::Logistic, LinkFunction::Probit, LinkFunction::Sign] {
            let o = PreferenceOracle::new(link, LatentUtility::quadratic(DVector::zeros(1)), 0);
            let forward = 2.0 * o.preference_probability(a, b).unwrap() - 1.0;
            let swapped = 2.0 * o.preference_probability(b, a).unwrap() - 1.0;
            prop_assert!((forward + swapped).abs() <= 1e-15);
        }
    }

    #[test]
    fn quadratic_curvature_matches_the_gain(
        p in plant_strategy(3, 2),
        x_ref in dvec(3, -5.0..5.0),
        u in dvec(2, -5.0..5.0),
    ) {
        let reduced = ReducedUtility::new(LatentUtility::quadratic(x_ref), p.clone()).unwrap();
        let h = p.steady_state_gain();
        let hth = h.transpose() * h;
        let eig = hth.clone().symmetric_eigen().eigenvalues;
        let hess = reduced.hessian().unwrap();
        let heig = hess.clone().symmetric_eigen().eigenvalues;
        prop_assert!((heig.min() - 2.0 * eig.min()).abs() <= 1e-9 * eig.max());
        prop_assert!((heig.max() - 2.0 * eig.max()).abs() <= 1e-9 * eig.max());
        // Central differences of the gradient recover the Hessian columns.
        let step = 1e-4;
        for j in 0..2 {
            let mut up = u.clone();
            let mut dn = u.clone();
            up[j] += step;
            dn[j] -= step;
            let col = (reduced.gradient(&up).unwrap() - reduced.gradient(&dn).unwrap()) / (2.0 * step);
            prop_assert!((col - hess.column(j)).norm() <= 1e-6 * hess.norm().max(1.0));
        }
    }

    #[test]
    fn p_gradient_at_its_reference_is_proportional(
        p in plant_strategy(2, 2),
        x_ref in dvec(2, -5.0..5.0),
        u in dvec(2, -5.0..5.0),
    ) {
        let reduced = ReducedUtility::new(LatentUtility::quadratic(x_ref), p).unwrap();
        let g = reduced.gradient(&u).unwrap();
        prop_assume!(g.norm() > 1e-8);
        for link in [LinkFunction::Logistic, LinkFunction::Probit] {
            let gp = gradient_of_p(&reduced, link, &u, &u).unwrap();
            let expected = &g * link.slope_at_zero();
            prop_assert!((gp - &expected).norm() <= 1e-10 * expected.norm());
        }
    }

    #[test]
    fn bound_constants_survive_serialization(
        prims in prop::collection::vec(1e-3f64..1e3, 8),
        mu in 1e-3f64..3.0,
        eta in 1e-3f64..1.0,
        delta in 1e-2f64..2.0,
        n in 1usize..14,
        link in prop::sample::select(vec![LinkFunction::Logistic, LinkFunction::Probit]),
    ) {
        let c = BoundConstants {
            l_0: prims[0],
            l_1: prims[1],
            m: prims[2],
            l_x: prims[3],
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
            mu,
            a1: prims[4],
            alpha2: prims[5],
            eta,
            delta,
            n,
        }
        .recompute();
        let text = serde_json::to_string(&c).unwrap();
        let back: BoundConstants = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.recompute(), c);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn every_update_has_the_nominal_length(
        p in plant_strategy(3, 2),
        x_ref in dvec(3, -5.0..5.0),
        eta in 0.01f64..0.5,
        delta in 0.05f64..1.0,
        seed in any::<u64>(),
        link in prop::sample::select(vec![LinkFunction::Logistic, LinkFunction::Probit, LinkFunction::Sign]),
    ) {
        let config = ControllerConfig::new(eta, delta, 200, vec![0.0, 0.0]).unwrap();
        let mut oracle = PreferenceOracle::new(link, LatentUtility::quadratic(x_ref), seed ^ 1);
        let rec = run_closed_loop(&p, &mut oracle, &config, None, seed).unwrap();
        let step = eta / (2.0 * delta);
        // Row 0 only primes the comparison.
        for w in rec.rows[1..].windows(2) {
            let moved = (&w[1].u - &w[0].u).norm();
            prop_assert!((moved - step).abs() <= 1e-12 * step.max(w[0].u.norm()), "{moved} vs {step}");
        }
    }

    #[test]
    fn same_seed_gives_identical_records(
        p in plant_strategy(2, 1),
        x_ref in dvec(2, -5.0..5.0),
        seed in any::<u64>(),
    ) {
        let config = ControllerConfig::new(0.1, 0.5, 300, vec![1.0]).unwrap();
        let utility = LatentUtility::quadratic(x_ref);
        let run = || {
            let mut oracle = PreferenceOracle::new(LinkFunction::Logistic, utility.clone(), seed.wrapping_add(7));
            run_closed_loop(&p, &mut oracle, &config, None, seed).unwrap()
        };
        let (a, b) = (run(), run());
        prop_assert_eq!(&a.rows, &b.rows);
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        a.write_csv(&mut ca).unwrap();
        b.write_csv(&mut cb).unwrap();
        prop_assert_eq!(ca, cb);
    }

    #[test]
    fn expected_update_descends_far_from_the_optimum(
        p in plant_strategy(2, 2),
        x_ref in dvec(2, -5.0..5.0),
        dir in dvec(2, -1.0..1.0),
        seed in any::<u64>(),
    ) {
        prop_assume!(dir.norm() > 0.1);
        let delta = 0.1;
        let reduced = ReducedUtility::new(LatentUtility::quadratic(x_ref.clone()), p).unwrap();
        let u_star = reduced.optimum().unwrap();
        let u = &u_star + dir.normalize() * (50.0 * delta);
        let g = reduced.gradient(&u).unwrap();
        prop_assume!(g.norm() > 1e-6);
        let oracle = PreferenceOracle::new(LinkFunction::Logistic, LatentUtility::quadratic(x_ref), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi_ref = reduced.evaluate(&u).unwrap();
        let n = 10_000;
        let samples: Vec<f64> = (0..n)
            .map(|_| {
                let v = sample_unit_sphere(2, &mut rng).unwrap();
                let phi = reduced.evaluate(&(&u + &v * delta)).unwrap();
                // Conditional mean of the feedback given v.
                let fb = 2.0 * oracle.preference_probability(phi, phi_ref).unwrap() - 1.0;
                fb * v.dot(&g)
            })
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        prop_assert!(mean + 4.0 * (var / n as f64).sqrt() < 0.0, "mean {mean}");
    }

    #[test]
    fn c01_inputs_stay_bounded(seed in 0u64..1_000_000) {
        let resolved = builtin("quadratic-c01").unwrap().resolve(None).unwrap();
        let cfg = &resolved.config.controller;
        let u_star = resolved.u_star.clone().unwrap();
        let mut oracle = PreferenceOracle::new(LinkFunction::Logistic, resolved.reduced.utility().clone(), seed + 1);
        let rec = run_closed_loop(&resolved.plant, &mut oracle, cfg, Some(resolved.x0.clone()), seed).unwrap();
        let max_u = rec.rows.iter().map(|r| r.u.norm()).fold(0.0, f64::max);
        let u0 = cfg.u0_vector().norm();
        prop_assert!(max_u <= u0 + cfg.horizon as f64 * cfg.step_size());
        prop_assert!(max_u < 10.0 * u_star.norm(), "{max_u} vs {}", u_star.norm());
    }
}
