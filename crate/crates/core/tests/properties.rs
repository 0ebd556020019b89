use catalytic_sbm::config::Config;
use catalytic_sbm::evolution::{laplace_functional, solve_catalyst_trace, Forcing};
use catalytic_sbm::kernels::heat_kernel;
use catalytic_sbm::moments::{fluctuation_second_moment, ou_char_functional, ou_covariance, var_mass, var_occupation};
use catalytic_sbm::stats::{empirical_cf, ks_normal, mc_summary};
use catalytic_sbm::{InitialMeasure, ModelParams, TestFn};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

fn model(sigma2: f64, k: u32) -> ModelParams {
    ModelParams::new(0.0, sigma2, k).unwrap()
}

/// Nonnegative mixtures of up to three Gaussians.
fn positive_fn() -> impl Strategy<Value = TestFn> {
    prop::collection::vec((0.05f64..2.0, -2.0f64..2.0, 0.3f64..2.0), 1..=3).prop_map(|terms| {
        terms
            .into_iter()
            .map(|(a, m, w)| TestFn::gaussian(m, w).unwrap() * a)
            .fold(TestFn::zero(), |acc, g| acc + g)
    })
}

/// Signed polynomial-times-Gaussian terms of degree at most 2.
fn signed_fn() -> impl Strategy<Value = TestFn> {
    prop::collection::vec(
        (prop::collection::vec(-2.0f64..2.0, 1..=3), -2.0f64..2.0, 0.3f64..2.0),
        1..=2,
    )
    .prop_map(|terms| {
        terms
            .into_iter()
            .map(|(c, m, w)| TestFn::term(c, m, w).unwrap())
            .fold(TestFn::zero(), |acc, g| acc + g)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn heat_kernel_is_symmetric(t in 1e-3f64..1e2, x in -10.0f64..10.0) {
        prop_assert_eq!(heat_kernel(t, x).unwrap(), heat_kernel(t, -x).unwrap());
        prop_assert!(heat_kernel(t, x.abs() + 0.1).unwrap() <= heat_kernel(t, x.abs()).unwrap());
    }

    #[test]
    fn heat_flow_conserves_mass(f in signed_fn(), t in 0.0f64..5.0) {
        let before = f.lebesgue_integral();
        let after = f.heat(t).unwrap().lebesgue_integral();
        prop_assert!((before - after).abs() <= 1e-12 * (1.0 + before.abs()));
    }

    #[test]
    fn heat_flow_preserves_positivity(f in positive_fn(), t in 0.0f64..5.0) {
        let g = f.heat(t).unwrap();
        for i in -80..=80 {
            prop_assert!(g.eval(i as f64 * 0.1) >= 0.0);
        }
    }

    #[test]
    fn generator_commutes_with_heat_flow(f in signed_fn(), t in 0.0f64..3.0) {
        let a = f.heat(t).unwrap().generator().unwrap();
        let b = f.generator().unwrap().heat(t).unwrap();
        for i in -40..=40 {
            let x = i as f64 * 0.15;
            prop_assert!((a.eval(x) - b.eval(x)).abs() <= 1e-12 * (1.0 + a.eval(x).abs()));
        }
    }

    #[test]
    fn trace_is_positive_and_dominated(f in positive_fn(), sigma2 in 0.0f64..6.0) {
        let forcing = Forcing::Semigroup(f);
        let trace = solve_catalyst_trace(&forcing, &model(sigma2, 1), 1.0, 128).unwrap();
        for (t, w) in trace.times().iter().zip(trace.values()) {
            prop_assert!(*w >= 0.0);
            prop_assert!(*w <= forcing.value(*t, 0.0) + 1e-14);
        }
    }

    #[test]
    fn trace_decreases_with_intensity(f in positive_fn(), a in 0.0f64..3.0, extra in 0.01f64..3.0) {
        let forcing = Forcing::Semigroup(f);
        let lo = solve_catalyst_trace(&forcing, &model(a, 1), 1.0, 128).unwrap();
        let hi = solve_catalyst_trace(&forcing, &model(a + extra, 1), 1.0, 128).unwrap();
        for (l, h) in lo.values().iter().zip(hi.values()) {
            prop_assert!(h <= &(l + 1e-14));
        }
    }

    #[test]
    fn laplace_functional_is_monotone_in_theta(f in positive_fn(), theta in 0.1f64..3.0, t in 0.1f64..2.0) {
        let p = model(1.0, 1);
        let a = laplace_functional(&(f.clone() * theta), &p, t, &InitialMeasure::Lebesgue).unwrap();
        let b = laplace_functional(&(f * (theta * 1.5)), &p, t, &InitialMeasure::Lebesgue).unwrap();
        prop_assert!(a > 0.0 && a <= 1.0);
        prop_assert!(b <= a + 1e-12);
    }

    #[test]
    fn ou_covariance_is_symmetric(f in signed_fn(), g in signed_fn(), t in 0.05f64..2.0, s in 0.05f64..2.0) {
        let p = model(1.0, 1);
        let a = ou_covariance(&f, &g, t, s, &p).unwrap();
        let b = ou_covariance(&g, &f, s, t, &p).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
    }

    #[test]
    fn ou_gram_matrix_is_psd(
        fs in prop::collection::vec(signed_fn(), 4),
        ts in prop::collection::vec(0.05f64..2.0, 4),
    ) {
        let p = model(1.0, 1);
        let gram = DMatrix::from_fn(4, 4, |i, j| ou_covariance(&fs[i], &fs[j], ts[i], ts[j], &p).unwrap());
        let gram = (&gram + gram.transpose()) * 0.5;
        let min = SymmetricEigen::new(gram).eigenvalues.min();
        prop_assert!(min >= -1e-10, "min eigenvalue {}", min);
    }

    #[test]
    fn variances_grow_in_time_and_scale_with_intensity(
        f in positive_fn(), t in 0.1f64..1.5, dt in 0.01f64..1.0, s in 0.1f64..4.0,
    ) {
        let lam = InitialMeasure::Lebesgue;
        let one = model(1.0, 1);
        let scaled = model(s, 1);
        let v = var_mass(&lam, &f, t, &one).unwrap();
        prop_assert!(var_mass(&lam, &f, t + dt, &one).unwrap() >= v * (1.0 - 1e-10));
        prop_assert!((var_mass(&lam, &f, t, &scaled).unwrap() - s * v).abs() <= 1e-8 * (1.0 + s * v));
        let o = var_occupation(&lam, 0.0, t, &one).unwrap();
        prop_assert!(var_occupation(&lam, 0.0, t + dt, &one).unwrap() >= o);
        prop_assert!((var_occupation(&lam, 0.0, t, &scaled).unwrap() - s * o).abs() <= 1e-10 * (1.0 + s * o));
    }

    #[test]
    fn fluctuation_moment_ignores_k(f in signed_fn(), t in 0.05f64..2.0) {
        let base = fluctuation_second_moment(&f, t, &model(1.0, 1)).unwrap();
        for k in [2, 4, 8] {
            prop_assert_eq!(base.to_bits(), fluctuation_second_moment(&f, t, &model(1.0, k)).unwrap().to_bits());
        }
    }

    #[test]
    fn characteristic_functional_modulus(f in signed_fn(), t in 0.0f64..2.0, sigma2 in 0.0f64..3.0) {
        let cf = ou_char_functional(&f, t, &model(sigma2, 1), &InitialMeasure::Lebesgue).unwrap();
        prop_assert!(cf.norm() <= 1.0 + 1e-15);
    }

    #[test]
    fn summaries_are_pure_and_bounded(xs in prop::collection::vec(-5.0f64..5.0, 10..200), u in -3.0f64..3.0) {
        let a = mc_summary(&xs).unwrap();
        prop_assert_eq!(a, mc_summary(&xs).unwrap());
        prop_assert!(a.variance >= 0.0);
        prop_assert!(empirical_cf(&xs, u).norm() <= 1.0 + 1e-12);
        let ks = ks_normal(&xs, 0.0, 1.0).unwrap();
        prop_assert!((0.0..=1.0).contains(&ks.d) && (0.0..=1.0).contains(&ks.p_value));
    }

    #[test]
    fn config_text_round_trips(seed in any::<u64>(), dt_exp in 5u32..7, reps in 1usize..1000, k in 1u32..16) {
        let overrides = vec![
            ("seed".to_string(), seed.to_string()),
            ("dt".to_string(), format!("1e-{dt_exp}")),
            ("replicates".to_string(), reps.to_string()),
            ("k".to_string(), k.to_string()),
        ];
        let cfg = Config::with_overrides(&overrides).unwrap();
        prop_assert_eq!(Config::from_text(&cfg.to_text(), &[]).unwrap(), cfg);
    }
}
