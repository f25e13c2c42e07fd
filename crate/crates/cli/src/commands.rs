use jaclab::blowup::{estimate_check, estimate_family, scan, sharpness_family, ScanConfig};
use jaclab::minimality::{
    image_accounting, jacobian_residual, partition, quasimin_constant, quasimin_ratio, radial_competitor,
    radial_image_volume, twist_competitor, AnnulusMap, AnnulusMapRecord, BoundaryMode, ImageReport,
    QuasiminReport, TwistProfile,
};
use jaclab::norms::dist;
use jaclab::perturbation::{
    annulus_energy, annulus_mass, annulus_profile, lp_tail, AnnulusEnergy, LpTail, PerturbationParams,
    PerturbedDensity,
};
use jaclab::radial::{
    ball_mean, image_volume, integrate_against, jacobian, solve_radial, sobolev_energy, unit_ball_volume,
    DensityRecord, RadialFunction,
};
use jaclab::report::{format_float, to_canonical_json};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

/// Relative tolerance of the Jacobian roundtrip.
pub const ROUNDTRIP_TOL: f64 = 1e-7;

/// What a command produced, before anything is written.
pub struct Outcome {
    pub json: String,
    pub csv: Option<String>,
    /// Set when a checked invariant failed.
    pub violation: Option<String>,
    pub summary: String,
}

fn canonical<T: Serialize>(value: &T) -> Result<String, CliError> {
    to_canonical_json(value).map_err(|e| CliError::Numerical(format!("serialization failed: {e}")))
}

fn table_csv(header: &[&str], rows: impl Iterator<Item = Vec<f64>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.into_iter().map(format_float).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn samples(cfg: &RunConfig) -> Result<usize, CliError> {
    let k = cfg.samples.unwrap_or(100);
    if k < 2 {
        return Err(CliError::Config("samples must be >= 2".into()));
    }
    Ok(k)
}

#[derive(Serialize)]
struct ProfileRow {
    r: f64,
    rho: f64,
    rho_dot: f64,
    jacobian: f64,
    f: f64,
}

#[derive(Serialize)]
struct EnergyEntry {
    exponent: f64,
    value: Option<f64>,
    error: Option<String>,
}

#[derive(Serialize)]
struct SolveReport {
    density: DensityRecord,
    rho_at_1: f64,
    roundtrip_residual: f64,
    roundtrip_tolerance: f64,
    image_volume: f64,
    density_mass: f64,
    energies: Vec<EnergyEntry>,
    table: Vec<ProfileRow>,
}

pub fn solve_radial_cmd(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let qc = cfg.quadrature()?;
    let f = cfg.density()?;
    let k = samples(cfg)?;
    let exponents = cfg.exponents.clone().unwrap_or_else(|| vec![2.0, 4.0]);
    if let Some(e) = exponents.iter().find(|e| !(**e >= 1.0)) {
        return Err(CliError::Config(format!("Sobolev exponents must be >= 1, got {e}")));
    }
    let profile = solve_radial(&f, &qc)?;
    let lo = profile.min_radius();
    let mut table = Vec::with_capacity(k);
    let mut residual: f64 = 0.0;
    for i in 1..=k {
        let r = (i as f64 / k as f64).max(lo);
        let value = f.eval(r);
        let jac = jacobian(&profile, r)?;
        let err = if value == 0.0 { jac.abs() } else { (jac - value).abs() / value.abs() };
        residual = residual.max(err);
        table.push(ProfileRow {
            r,
            rho: profile.rho(r)?,
            rho_dot: profile.rho_dot(r)?,
            jacobian: jac,
            f: value,
        });
    }
    let energies = exponents
        .iter()
        .map(|&e| match sobolev_energy(&profile, e, (0.0, 1.0), &qc) {
            Ok(v) => EnergyEntry {
                exponent: e,
                value: Some(v),
                error: None,
            },
            Err(err) => EnergyEntry {
                exponent: e,
                value: None,
                error: Some(err.to_string()),
            },
        })
        .collect();
    let n = f.dim();
    let density_mass = n as f64 * unit_ball_volume(n) * integrate_against(&f, 0.0, 1.0, |_, v| v, &qc)?;
    let report = SolveReport {
        density: f.to_record(),
        rho_at_1: profile.rho(1.0)?,
        roundtrip_residual: residual,
        roundtrip_tolerance: ROUNDTRIP_TOL,
        image_volume: image_volume(&profile, (0.0, 1.0))?,
        density_mass,
        energies,
        table,
    };
    let csv = table_csv(
        &["r", "rho", "rho_dot", "jacobian", "f"],
        report.table.iter().map(|r| vec![r.r, r.rho, r.rho_dot, r.jacobian, r.f]),
    );
    let violation = (residual > ROUNDTRIP_TOL)
        .then(|| format!("radial.jacobian_roundtrip: residual {residual:e} exceeds {ROUNDTRIP_TOL:e}"));
    Ok(Outcome {
        summary: format!("rho(1) = {}, roundtrip residual = {residual:e}", report.rho_at_1),
        json: canonical(&report)?,
        csv: Some(csv),
        violation,
    })
}

#[derive(Serialize)]
struct PerturbReport {
    params: PerturbationParams,
    base: DensityRecord,
    base_mean_r: f64,
    mean: f64,
    annulus_mass: f64,
    rho_at_1: f64,
    lambda: f64,
    lower_bound: f64,
    energy: AnnulusEnergy,
    lp_tail: LpTail,
    dist_p: f64,
    table: Vec<[f64; 2]>,
}

pub fn perturb_cmd(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let qc = cfg.quadrature()?;
    let params = cfg.params()?;
    let base = cfg.density()?;
    let k = samples(cfg)?;
    let built = PerturbedDensity::build(base.clone(), params, &qc)?;
    let table: Vec<[f64; 2]> = (0..=k)
        .map(|i| {
            let r = i as f64 / k as f64;
            [r, built.eval(r)]
        })
        .collect();
    let report = PerturbReport {
        params,
        base: base.to_record(),
        base_mean_r: built.base_mean_r(),
        mean: ball_mean(&built, &qc)?,
        annulus_mass: annulus_mass(&params, &qc)?,
        rho_at_1: annulus_profile(&params).rho(1.0)?,
        lambda: params.lambda(),
        lower_bound: built.guaranteed_lower_bound(),
        energy: annulus_energy(&params)?,
        lp_tail: lp_tail(&params, params.p(), &qc)?,
        dist_p: dist(&base, &built, params.p(), &qc)?,
        table,
    };
    let csv = table_csv(&["r", "f"], report.table.iter().map(|r| r.to_vec()));
    Ok(Outcome {
        summary: format!(
            "gamma = {}, M = {}, mean = {}, dist_p = {}",
            params.gamma(),
            params.m(),
            report.mean,
            report.dist_p
        ),
        json: canonical(&report)?,
        csv: Some(csv),
        violation: None,
    })
}

pub fn scan_cmd(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let d = ScanConfig::default();
    let scan_cfg = ScanConfig {
        template: cfg.template()?,
        radii: cfg.radii(),
        epsilon: cfg.epsilon.unwrap_or(d.epsilon),
        eta: cfg.eta.unwrap_or(d.eta),
        quadrature: cfg.quadrature()?,
    };
    let base = cfg.density()?;
    let report = scan(&base, &scan_cfg)?;
    let f = &report.fits;
    let mut summary = format!(
        "energy slope {:.4} (expected {}), tail slope {:.4} (expected {})",
        f.energy_slope.fit.slope, f.energy_slope.expected, f.tail_slope.fit.slope, f.tail_slope.expected
    );
    if let Some(l) = &f.llogl_slope {
        summary.push_str(&format!(", L log L slope {:.4} (expected {})", l.fit.slope, l.expected));
    }
    if !report.failures.is_empty() {
        summary.push_str(&format!(", {} failed rows", report.failures.len()));
    }
    Ok(Outcome {
        json: canonical(&report)?,
        csv: Some(report.to_csv()),
        violation: None,
        summary,
    })
}

pub fn estimate_cmd(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let qc = cfg.quadrature()?;
    let p = cfg.params.p.unwrap_or(2.0);
    if cfg.density.is_some() {
        let f = cfg.density()?;
        let check = estimate_check(&f, p, &qc)?;
        return Ok(Outcome {
            summary: format!("ratio {}", check.ratio),
            json: canonical(&check)?,
            csv: None,
            violation: None,
        });
    }
    let family = estimate_family(
        cfg.dim(),
        p,
        cfg.lower_bound.unwrap_or(0.5),
        cfg.count.unwrap_or(20),
        cfg.pieces.unwrap_or(5),
        cfg.seed(),
        &qc,
    )?;
    Ok(Outcome {
        summary: format!("max ratio {} over {} densities", family.max_ratio, family.checks.len()),
        json: canonical(&family)?,
        csv: None,
        violation: None,
    })
}

pub fn sharpness_cmd(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let mut sc = cfg.sharpness.unwrap_or_default();
    sc.n = cfg.params.n.unwrap_or(sc.n);
    sc.p = cfg.params.p.unwrap_or(sc.p);
    sc.q = cfg.params.q.unwrap_or(sc.q);
    if cfg.quadrature.is_some() {
        sc.quadrature = cfg.quadrature()?;
    }
    let report = sharpness_family(&sc)?;
    let csv = table_csv(
        &["truncation", "q_energy", "p_norm"],
        (0..report.truncations.len()).map(|i| vec![report.truncations[i], report.q_energies[i], report.p_norms[i]]),
    );
    Ok(Outcome {
        summary: format!(
            "q-energy growth {:.3}, last p-norm change {:e}",
            report.q_energy_growth, report.p_norm_last_change
        ),
        json: canonical(&report)?,
        csv: Some(csv),
        violation: None,
    })
}

#[derive(Serialize)]
struct TwistEntry {
    twist: TwistProfile,
    report: QuasiminReport,
}

#[derive(Serialize)]
struct ResidualOrder {
    coarse_grid: (usize, usize),
    coarse: f64,
    fine_grid: (usize, usize),
    fine: f64,
    order: f64,
}

#[derive(Serialize)]
struct MinimalityReport {
    params: PerturbationParams,
    q: f64,
    constant: f64,
    lambda: f64,
    grid: (usize, usize),
    radial: QuasiminReport,
    image: ImageReport,
    exact_image_volume: f64,
    twists: Vec<TwistEntry>,
    residual_order: Option<ResidualOrder>,
    map: Option<QuasiminReport>,
}

/// Refines a planar grid: twice the directions, radii at half the spacing.
pub fn refine(grid: (usize, usize)) -> (usize, usize) {
    (2 * grid.0, 2 * grid.1 - 1)
}

pub fn minimality_cmd(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let params = cfg.params()?;
    let q = params.q();
    let grid = cfg.grid();
    let gate = cfg.gate();
    let boundary = cfg.boundary.unwrap_or(BoundaryMode::Identity);
    let radial = radial_competitor(&params, grid)?;
    let radial_report = quasimin_ratio(&radial, &params, q, gate)?;
    let part = partition(&radial, &params)?;
    let image = image_accounting(&radial, &part, &params)?;

    let mut twists = Vec::new();
    let mut residual_order = None;
    if params.n() == 2 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed());
        let profiles: Vec<TwistProfile> = (0..cfg.twists.unwrap_or(10))
            .map(|_| TwistProfile::random(&mut rng, params.radius()))
            .collect();
        for h in profiles {
            let v = twist_competitor(&params, &h, grid, boundary)?;
            twists.push(TwistEntry {
                report: quasimin_ratio(&v, &params, q, gate)?,
                twist: h,
            });
        }
        let coarse_grid = (grid.0 / 2, grid.1 / 2);
        let fine_grid = refine(coarse_grid);
        let h = TwistProfile::linear();
        let coarse = jacobian_residual(&twist_competitor(&params, &h, coarse_grid, boundary)?, &params)?;
        let fine = jacobian_residual(&twist_competitor(&params, &h, fine_grid, boundary)?, &params)?;
        if let (Some(coarse), Some(fine)) = (coarse, fine) {
            residual_order = Some(ResidualOrder {
                coarse_grid,
                coarse,
                fine_grid,
                fine,
                order: (coarse / fine).log2(),
            });
        }
    }
    let map = match &cfg.map {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            let rec: AnnulusMapRecord =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            Some(quasimin_ratio(&AnnulusMap::from_record(&rec)?, &params, q, gate)?)
        }
        None => None,
    };
    let failed: Vec<String> = std::iter::once(("radial", &radial_report))
        .chain(twists.iter().map(|t| ("twist", &t.report)))
        .filter(|(_, r)| !(r.first_moment.holds && r.rhs >= r.lhs * (1.0 - 1e-12)))
        .map(|(name, r)| format!("{name}: lhs {} rhs {} first-moment margin {}", r.lhs, r.rhs, r.first_moment.margin))
        .collect();
    let report = MinimalityReport {
        params,
        q,
        constant: quasimin_constant(params.n(), q),
        lambda: params.lambda(),
        grid,
        exact_image_volume: radial_image_volume(&params),
        radial: radial_report,
        image,
        twists,
        residual_order,
        map,
    };
    Ok(Outcome {
        summary: format!(
            "{} competitors checked, binned image volume {} vs {}",
            1 + report.twists.len(),
            report.image.annulus.image_volume,
            report.exact_image_volume
        ),
        json: canonical(&report)?,
        csv: None,
        violation: (!failed.is_empty()).then(|| format!("minimality.quasimin_chain: {}", failed.join("; "))),
    })
}
