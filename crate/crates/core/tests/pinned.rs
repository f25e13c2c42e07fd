use jaclab::minimality::{
    image_accounting, partition, quasimin_ratio, radial_competitor, radial_image_volume, CompetitorStatus,
    DEFAULT_GRID, DEFAULT_JACOBIAN_GATE,
};
use jaclab::norms::{llogl_norm, Region};
use jaclab::perturbation::{annulus_energy, annulus_mass, PerturbationParams};
use jaclab::quadrature::QuadratureConfig;
use jaclab::radial::RadialDensity;

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs()
}

#[test]
fn default_parameters_at_r_09() {
    let p = PerturbationParams::default_at(0.9).unwrap();
    assert!(close(p.gamma(), 0.847_625_143_815_371_6, 1e-14));
    assert!(close(p.m(), 2.371_373_705_661_655_3, 1e-14));
    assert!(close(p.lambda(), 0.104_510_152_153_324_04, 1e-14));
    let e = annulus_energy(&p).unwrap();
    assert!(close(e.exact, 18.875_717_705_012_59, 1e-12));
    assert!(close(e.surrogate, 3.162_277_660_168_379, 1e-14));
    let mass = annulus_mass(&p, &QuadratureConfig::default()).unwrap();
    assert!((mass - 0.209_020_304_306_648_07).abs() < 1e-12);
}

#[test]
fn three_dimensional_annulus_mass() {
    // γR = 0.8 exactly: R = 0.9, α = q(ln 0.2/ln 0.1 - 1)
    let q = 4.0;
    let alpha = q * (0.2f64.ln() / 0.1f64.ln() - 1.0);
    let p = PerturbationParams::new(3, 2.0, q, alpha, 0.9).unwrap();
    assert!((p.gamma() * 0.9 - 0.8).abs() < 1e-14);
    let mass = annulus_mass(&p, &QuadratureConfig::default()).unwrap();
    assert!((mass - 0.162_666_666_666_666_67).abs() < 1e-12);
}

#[test]
fn llogl_norm_of_the_constant_on_the_disk() {
    let one = RadialDensity::constant(2, 1.0).unwrap();
    let v = llogl_norm(&one, Region::BALL, &QuadratureConfig::default()).unwrap().value;
    assert!((v - 3.489_479_240_751_099_2).abs() < 1e-12);
}

#[test]
fn radial_competitor_at_the_default_grid() {
    let p = PerturbationParams::default_at(0.9).unwrap();
    let v = radial_competitor(&p, DEFAULT_GRID).unwrap();
    let rep = quasimin_ratio(&v, &p, 4.0, DEFAULT_JACOBIAN_GATE).unwrap();
    assert_eq!(rep.status, CompetitorStatus::Exact);
    assert!(rep.chain_bound.holds);
    let part = partition(&v, &p).unwrap();
    let img = image_accounting(&v, &part, &p).unwrap();
    let exact = radial_image_volume(&p);
    assert!(close(img.annulus.image_volume, exact, 0.02));
    assert!(close(exact, std::f64::consts::PI * (1.0 - (p.gamma() * 0.9).powi(2)), 1e-14));
}

#[test]
fn estimate_family_ratio_is_locked() {
    let fam = jaclab::blowup::estimate_family(2, 2.0, 0.5, 20, 5, 0, &QuadratureConfig::default()).unwrap();
    assert_eq!(fam.checks.len(), 20);
    assert!((fam.max_ratio - 0.308_418_975_179_852_56).abs() < 1e-9);
}
