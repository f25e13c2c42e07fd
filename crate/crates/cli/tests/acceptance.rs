//! End-to-end acceptance criteria. Each criterion prints one PASS/FAIL line.

use std::process::Command;
use std::time::{Duration, Instant};

use jaclab::blowup::{scan, sharpness_family, ScanConfig, SharpnessConfig, DEFAULT_RADII};
use jaclab::minimality::{
    image_accounting, jacobian_residual, partition, quasimin_ratio, radial_competitor, radial_image_volume,
    twist_competitor, BoundaryMode, CompetitorStatus, TwistProfile, DEFAULT_GRID, DEFAULT_JACOBIAN_GATE,
};
use jaclab::norms::{llogl_norm, Region};
use jaclab::perturbation::{annulus_mass, annulus_profile, ParamTemplate, PerturbationParams, PerturbedDensity};
use jaclab::quadrature::QuadratureConfig;
use jaclab::radial::{
    ball_mean, image_volume, integrate_against, jacobian, solve_radial, unit_ball_volume, RadialDensity,
    RadialFunction,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn qc() -> QuadratureConfig {
    QuadratureConfig::default()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn radial_fixtures() -> Vec<RadialDensity> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out = vec![
        RadialDensity::constant(2, 1.0).unwrap(),
        RadialDensity::power(2, 1.5, 1.0).unwrap(),
    ];
    for _ in 0..20 {
        let pieces = rng.gen_range(2..8);
        out.push(RadialDensity::random_piecewise(&mut rng, 2, pieces, 0.5).unwrap());
    }
    out
}

fn random_params(rng: &mut ChaCha8Rng) -> PerturbationParams {
    let n = rng.gen_range(2..=3);
    let p = rng.gen_range(1.0..3.0);
    let q = rng.gen_range((p + 0.5f64).max(n as f64)..8.0);
    let alpha = -1.0 - rng.gen_range(0.05..0.95) * (q / p - 1.0);
    let radius = rng.gen_range(0.8..0.999);
    PerturbationParams::new(n, p, q, alpha, radius).unwrap()
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for f in radial_fixtures() {
        let profile = solve_radial(&f, &qc()).unwrap();
        for _ in 0..100 {
            let r = rng.gen_range(1e-3..=1.0);
            worst = worst.max(rel(jacobian(&profile, r).unwrap(), f.eval(r)));
        }
    }
    Outcome {
        passed: worst <= 1e-7,
        detail: format!("max relative Jacobian error {worst:.3e} (tol 1e-7) over 22 densities x 100 radii"),
    }
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut tuples = vec![PerturbationParams::default_at(0.9).unwrap()];
    tuples.extend((0..10).map(|_| random_params(&mut rng)));
    let (mut mean_err, mut mass_err, mut rho_ok): (f64, f64, bool) = (0.0, 0.0, true);
    for params in tuples {
        let pieces = rng.gen_range(1..6);
        let base = RadialDensity::random_piecewise(&mut rng, params.n(), pieces, 0.5).unwrap();
        let built = PerturbedDensity::build(base, params, &qc()).unwrap();
        mean_err = mean_err.max((ball_mean(&built, &qc()).unwrap() - 1.0).abs());
        rho_ok &= annulus_profile(&params).rho(1.0).unwrap() == 1.0;
        let closed = (1.0 - (params.gamma() * params.radius()).powi(params.n() as i32)) / params.n() as f64;
        mass_err = mass_err.max((annulus_mass(&params, &qc()).unwrap() - closed).abs());
    }
    Outcome {
        passed: mean_err <= 1e-9 && mass_err <= 1e-9 && rho_ok,
        detail: format!("|mean - 1| {mean_err:.3e}, rho(1) = 1 exactly: {rho_ok}, mass error {mass_err:.3e} (tol 1e-9)"),
    }
}

fn default_scan(p: f64, radii: &[f64]) -> jaclab::blowup::ScanReport {
    let cfg = ScanConfig {
        template: ParamTemplate {
            p,
            ..ParamTemplate::default()
        },
        radii: radii.to_vec(),
        ..ScanConfig::default()
    };
    scan(&RadialDensity::constant(2, 1.0).unwrap(), &cfg).unwrap()
}

fn criterion_3() -> Outcome {
    let r = default_scan(2.0, &DEFAULT_RADII);
    let s = r.fits.energy_slope.fit.slope;
    let e = r.fits.energy_exact_slope.fit.slope;
    Outcome {
        passed: (s + 0.5).abs() <= 0.02 && (e + 0.5).abs() <= 0.05,
        detail: format!("surrogate slope {s:.5} (-0.5 +/- 0.02), exact slope {e:.5} (-0.5 +/- 0.05)"),
    }
}

fn criterion_4() -> Outcome {
    let r = default_scan(2.0, &DEFAULT_RADII);
    let s = r.fits.tail_slope.fit.slope;
    let dists: Vec<f64> = r.rows.iter().map(|row| row.dist_p).collect();
    let decreasing = dists.windows(2).all(|w| w[1] < w[0]);
    Outcome {
        passed: (s - 0.25).abs() <= 0.05 && decreasing,
        detail: format!(
            "tail slope {s:.5} (0.25 +/- 0.05); dist_p {} strictly decreasing: {decreasing}",
            dists.iter().map(|d| format!("{d:.6}")).collect::<Vec<_>>().join(", ")
        ),
    }
}

const DEEP_RADII: [f64; 4] = [0.999, 0.9999, 1.0 - 1e-5, 1.0 - 1e-6];

fn criterion_5() -> Outcome {
    let deep = default_scan(1.0, &DEEP_RADII).fits.llogl_slope.unwrap();
    let shallow = default_scan(1.0, &DEFAULT_RADII).fits.llogl_slope.unwrap();
    let one = RadialDensity::constant(2, 1.0).unwrap();
    let v = llogl_norm(&one, Region::BALL, &qc()).unwrap().value;
    let pinned = 3.489_479_240_751_099_2;
    Outcome {
        passed: (deep.fit.slope - deep.expected).abs() <= 0.05 && (v - pinned).abs() <= 1e-6,
        detail: format!(
            "corrected slope {:.5} on R in 1-1e-3..1-1e-6 ({} +/- 0.05; {:.5} on the default sweep), L log L of 1 = {v:.10}",
            deep.fit.slope, deep.expected, shallow.fit.slope
        ),
    }
}

fn criterion_6() -> Outcome {
    let params = PerturbationParams::default_at(0.9).unwrap();
    let q = params.q();
    let radial = quasimin_ratio(&radial_competitor(&params, DEFAULT_GRID).unwrap(), &params, q, DEFAULT_JACOBIAN_GATE).unwrap();
    let mut ok = radial.lhs <= radial.rhs * (1.0 + 1e-12)
        && radial.first_moment.margin >= 0.0
        && radial.status == CompetitorStatus::Exact;
    let mut min_margin = radial.first_moment.margin;
    let mut min_ratio = radial.energy_ratio;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..10 {
        let h = TwistProfile::random(&mut rng, params.radius());
        let v = twist_competitor(&params, &h, DEFAULT_GRID, BoundaryMode::Identity).unwrap();
        let r = quasimin_ratio(&v, &params, q, DEFAULT_JACOBIAN_GATE).unwrap();
        ok &= r.lhs <= r.rhs && r.first_moment.margin >= 0.0 && r.status == CompetitorStatus::Exact;
        min_margin = min_margin.min(r.first_moment.margin);
        min_ratio = min_ratio.min(r.energy_ratio);
    }
    let formula = (1.0 - (params.gamma() * params.radius()).powi(2)) / 4.0;
    let lambda_ok = (params.lambda() - formula).abs() <= 2.0 * f64::EPSILON * formula;
    let h = TwistProfile::linear();
    let coarse = (DEFAULT_GRID.0 / 2, DEFAULT_GRID.1 / 2);
    let fine = DEFAULT_GRID;
    let e1 = jacobian_residual(&twist_competitor(&params, &h, coarse, BoundaryMode::Identity).unwrap(), &params)
        .unwrap()
        .unwrap();
    let e2 = jacobian_residual(&twist_competitor(&params, &h, fine, BoundaryMode::Identity).unwrap(), &params)
        .unwrap()
        .unwrap();
    let order = (e1 / e2).log2();
    Outcome {
        passed: ok && lambda_ok && order >= 1.5,
        detail: format!(
            "min RHS/LHS {min_ratio:.6}, min first-moment margin {min_margin:.4e}, lambda exact: {lambda_ok}, residual order {order:.3}"
        ),
    }
}

fn criterion_7() -> Outcome {
    let mut worst: f64 = 0.0;
    for f in radial_fixtures() {
        let profile = solve_radial(&f, &qc()).unwrap();
        for (a, b) in [(0.0, 1.0), (0.1, 0.4), (0.5, 0.99)] {
            let mass = 2.0 * unit_ball_volume(2) * integrate_against(&f, a, b, |_, v| v, &qc()).unwrap();
            worst = worst.max(rel(image_volume(&profile, (a, b)).unwrap(), mass));
        }
    }
    let params = PerturbationParams::default_at(0.9).unwrap();
    let annulus = annulus_profile(&params);
    let exact = radial_image_volume(&params);
    worst = worst.max(rel(image_volume(&annulus, (0.9, 1.0)).unwrap(), exact));
    let v = radial_competitor(&params, DEFAULT_GRID).unwrap();
    let img = image_accounting(&v, &partition(&v, &params).unwrap(), &params).unwrap();
    let binned = rel(img.annulus.image_volume, exact);
    let pi_form = std::f64::consts::PI * (1.0 - (params.gamma() * 0.9).powi(2));
    Outcome {
        passed: worst <= 1e-7 && binned <= 0.02 && rel(exact, pi_form) < 1e-14,
        detail: format!("image volume identity error {worst:.3e} (tol 1e-7), binned volume error {binned:.5} (tol 0.02)"),
    }
}

fn criterion_8() -> Outcome {
    let r = sharpness_family(&SharpnessConfig::default()).unwrap();
    Outcome {
        passed: r.q_energy_increasing && r.q_energy_growth > 10.0 && r.p_norm_last_change <= 1e-6,
        detail: format!(
            "q-energies strictly increasing: {}, last/first {:.2} (> 10), last p-norm change {:.3e} (tol 1e-6)",
            r.q_energy_increasing, r.q_energy_growth, r.p_norm_last_change
        ),
    }
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("scan.json");
    std::fs::write(&config, r#"{"command": "scan", "params": {"n": 2, "p": 2, "q": 4, "alpha": -1.5}}"#).unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_jaclab"))
            .arg("scan")
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .env("JACLAB_THREADS", if name == "a.json" { "1" } else { "4" })
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(out).unwrap()
    };
    let (a, b) = (run("a.json"), run("b.json"));
    Outcome {
        passed: a == b && !a.is_empty(),
        detail: format!("two scan runs (1 and 4 threads): {} and {} bytes, identical: {}", a.len(), b.len(), a == b),
    }
}

#[test]
fn acceptance() {
    let criteria: [(u32, fn() -> Outcome, Duration); 9] = [
        (1, criterion_1, Duration::from_secs(5)),
        (2, criterion_2, Duration::from_secs(2)),
        (3, criterion_3, Duration::from_secs(2)),
        (4, criterion_4, Duration::from_secs(10)),
        (5, criterion_5, Duration::from_secs(10)),
        (6, criterion_6, Duration::from_secs(30)),
        (7, criterion_7, Duration::from_secs(20)),
        (8, criterion_8, Duration::from_secs(5)),
        (9, criterion_9, Duration::from_secs(60)),
    ];
    let mut failed = Vec::new();
    for (id, run, budget) in criteria {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let passed = outcome.passed && in_time;
        println!(
            "criterion {id}: {} | {} | {:.2}s (budget {}s)",
            if passed { "PASS" } else { "FAIL" },
            outcome.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
        if !passed {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
