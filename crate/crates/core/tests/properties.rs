use jaclab::norms::{dist, lp_norm, Difference, Region};
use jaclab::perturbation::{annulus_mass, PerturbationParams, PerturbedDensity};
use jaclab::quadrature::{integrate, QuadratureConfig};
use jaclab::radial::{ball_mean, jacobian, solve_radial, DensityRecord, RadialDensity};
use jaclab::report::format_float;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cfg() -> QuadratureConfig {
    QuadratureConfig::default()
}

fn density(seed: u64, n: usize, pieces: usize, c: f64) -> RadialDensity {
    RadialDensity::random_piecewise(&mut ChaCha8Rng::seed_from_u64(seed), n, pieces, c).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn quadrature_is_linear(a in -3.0..3.0f64, b in -3.0..3.0f64, k in 0.5..4.0f64) {
        let g = |x: f64| (k * x).sin();
        let h = |x: f64| x.powf(1.5);
        let lhs = integrate(&|x: f64| a * g(x) + b * h(x), 0.0, 1.0, &cfg()).unwrap().value;
        let rhs = a * integrate(&g, 0.0, 1.0, &cfg()).unwrap().value + b * integrate(&h, 0.0, 1.0, &cfg()).unwrap().value;
        prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn quadrature_is_additive(split in 0.05..0.95f64) {
        let g = |x: f64| x.sqrt() * (3.0 * x).cos();
        let whole = integrate(&g, 0.0, 1.0, &cfg().with_singular(true, false)).unwrap().value;
        let left = integrate(&g, 0.0, split, &cfg().with_singular(true, false)).unwrap().value;
        let right = integrate(&g, split, 1.0, &cfg()).unwrap().value;
        prop_assert!((whole - left - right).abs() < 1e-10);
    }

    #[test]
    fn random_densities_have_unit_mean(seed in 0u64..10_000, n in 2usize..5, pieces in 1usize..8, c in 0.0..0.9f64) {
        let f = density(seed, n, pieces, c);
        prop_assert!((ball_mean(&f, &cfg()).unwrap() - 1.0).abs() < 1e-10);
        prop_assert!(f.lower_bound_violation(512) <= 0.0);
    }

    #[test]
    fn solved_jacobian_recovers_density(seed in 0u64..10_000, r in 0.01..1.0f64) {
        let f = density(seed, 2, 5, 0.5);
        let profile = solve_radial(&f, &cfg()).unwrap();
        let expected = jaclab::radial::RadialFunction::eval(&f, r);
        prop_assert!((jacobian(&profile, r).unwrap() - expected).abs() < 1e-7 * expected);
    }

    #[test]
    fn norms_satisfy_the_triangle_inequality(s1 in 0u64..1000, s2 in 0u64..1000, p in 1.0..4.0f64) {
        let f = density(s1, 2, 4, 0.1);
        let g = density(s2, 2, 4, 0.1);
        let zero = RadialDensity::constant(2, 0.0).unwrap();
        let norm = |h: &RadialDensity| lp_norm(h, p, Region::BALL, &cfg()).unwrap().value;
        let d = dist(&f, &g, p, &cfg()).unwrap();
        prop_assert!(d <= dist(&f, &zero, p, &cfg()).unwrap() + norm(&g) + 1e-10);
        prop_assert!(d <= norm(&f) + norm(&g) + 1e-10);
        let diff = lp_norm(&Difference { f: &f, g: &g }, p, Region::BALL, &cfg()).unwrap().value;
        prop_assert!((diff - d).abs() < 1e-10 * (1.0 + d));
    }

    #[test]
    fn norms_are_homogeneous(seed in 0u64..1000, t in 0.1..10.0f64, p in 1.0..4.0f64) {
        let f = density(seed, 3, 3, 0.2);
        let a = lp_norm(&f.scaled(t).unwrap(), p, Region::BALL, &cfg()).unwrap().value;
        let b = lp_norm(&f, p, Region::BALL, &cfg()).unwrap().value;
        prop_assert!((a - t * b).abs() < 1e-10 * a);
    }

    #[test]
    fn density_records_roundtrip(seed in 0u64..10_000, n in 2usize..5) {
        let f = density(seed, n, 6, 0.3);
        let json = serde_json::to_string(&f.to_record()).unwrap();
        let back: DensityRecord = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(RadialDensity::from_record(&back).unwrap().to_record(), f.to_record());
    }

    #[test]
    fn perturbed_data_keep_mass_identities(
        seed in 0u64..1000,
        n in 2usize..4,
        radius in 0.9..0.9999f64,
        q in 3.0..6.0f64,
        t in 0.05..0.95f64,
    ) {
        let alpha = -1.0 - t * (q / 2.0 - 1.0);
        let params = PerturbationParams::new(n, 2.0, q, alpha, radius).unwrap();
        let base = density(seed, n, 4, 0.5);
        let built = PerturbedDensity::build(base, params, &cfg()).unwrap();
        prop_assert!((ball_mean(&built, &cfg()).unwrap() - 1.0).abs() < 1e-9);
        let expected = (1.0 - params.inner_mass_fraction()) / n as f64;
        prop_assert!((annulus_mass(&params, &cfg()).unwrap() - expected).abs() < 1e-9);
        prop_assert!(params.gamma() > 0.0 && params.gamma() < 1.0);
    }

    #[test]
    fn float_format_roundtrips(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL) {
        prop_assert_eq!(format_float(v).parse::<f64>().unwrap(), v);
    }
}
