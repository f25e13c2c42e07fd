//! Parameter sweeps over the perturbation family, the energy estimate for
//! radial solutions, and a witness for its sharpness.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_power_law, PowerFit};
use crate::minimality::quasimin_constant;
use crate::norms::{dist, llogl_norm, lp_norm, Region};
use crate::perturbation::{annulus_energy, lp_tail, ParamTemplate, PerturbationParams, PerturbedDensity};
use crate::quadrature::{integrate, QuadratureConfig};
use crate::radial::{
    ball_mean, solve_radial, solve_radial_with, sobolev_energy, sphere_area, ClosedForm, DensityRecord,
    RadialDensity, RadialFunction, SolveOptions, unit_ball_volume,
};

pub const SCAN_SCHEMA_VERSION: u32 = 1;

pub const CSV_HEADER: [&str; 8] = [
    "R",
    "gamma",
    "M",
    "dist_p",
    "energy_exact",
    "energy_surrogate",
    "lp_tail",
    "llogl_tail",
];

/// The default sweep.
pub const DEFAULT_RADII: [f64; 4] = [0.9, 0.99, 0.999, 0.9999];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanConfig {
    pub template: ParamTemplate,
    #[serde(rename = "R_list")]
    pub radii: Vec<f64>,
    /// Target for `dist_p`.
    pub epsilon: f64,
    /// Allowed relative loss in the lower bound of the datum.
    pub eta: f64,
    pub quadrature: QuadratureConfig,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            template: ParamTemplate::default(),
            radii: DEFAULT_RADII.to_vec(),
            epsilon: 0.1,
            eta: 0.05,
            quadrature: QuadratureConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    #[serde(rename = "R")]
    pub radius: f64,
    pub gamma: f64,
    #[serde(rename = "M")]
    pub m: f64,
    pub dist_p: f64,
    pub energy_exact: f64,
    pub energy_surrogate: f64,
    pub lp_tail: f64,
    /// `L log L` norm of the datum on the annulus; only for `p = 1`.
    pub llogl_tail: Option<f64>,
    /// `energy_exact / C(n, q)`: a lower bound for the energy of every
    /// solution with the same datum.
    pub energy_lower_bound: f64,
    pub within_epsilon: bool,
    /// Lower bound of the perturbed datum.
    pub datum_lower_bound: f64,
    pub lower_bound_ok: bool,
    pub gamma_in_range: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowFailure {
    #[serde(rename = "R")]
    pub radius: f64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub fit: PowerFit,
    pub expected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanFits {
    /// Unweighted energy surrogate; expected `1 + α`.
    pub energy_slope: SlopeFit,
    /// Exact annulus energy; expected `1 + α`.
    pub energy_exact_slope: SlopeFit,
    /// `L^p` tail; expected `αp/q + 1`.
    pub tail_slope: SlopeFit,
    /// `L log L` tail divided by `log(e + 1/(1-R))`; expected `α/q + 1`.
    pub llogl_slope: Option<SlopeFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub schema_version: u32,
    pub params: ParamTemplate,
    pub base_density: DensityRecord,
    pub epsilon: f64,
    pub eta: f64,
    pub quasimin_constant: f64,
    pub rows: Vec<ScanRow>,
    pub failures: Vec<RowFailure>,
    pub fits: ScanFits,
}

impl ScanReport {
    /// One line per row under the fixed header; `llogl_tail` is empty when
    /// absent.
    pub fn to_csv(&self) -> String {
        let mut out = CSV_HEADER.join(",");
        out.push('\n');
        for r in &self.rows {
            let cells = [
                r.radius,
                r.gamma,
                r.m,
                r.dist_p,
                r.energy_exact,
                r.energy_surrogate,
                r.lp_tail,
            ];
            let mut line: Vec<String> = cells.iter().map(|v| crate::report::format_float(*v)).collect();
            line.push(r.llogl_tail.map(crate::report::format_float).unwrap_or_default());
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// `log(e + 1/(1-R))`.
pub fn log_factor(radius: f64) -> f64 {
    (std::f64::consts::E + 1.0 / (1.0 - radius)).ln()
}

fn scan_row(
    base: &RadialDensity,
    params: PerturbationParams,
    cfg: &ScanConfig,
    constant: f64,
) -> Result<ScanRow> {
    let q = &cfg.quadrature;
    let p = params.p();
    let built = PerturbedDensity::build(base, params, q)?;
    let dist_p = dist(base, &built, p, q)?;
    let energy = annulus_energy(&params)?;
    let tail = lp_tail(&params, p, q)?;
    let llogl_tail = if p == 1.0 {
        Some(llogl_norm(&built, Region::annulus(params.radius(), 1.0)?, q)?.value)
    } else {
        None
    };
    let datum_lower_bound = built.guaranteed_lower_bound();
    Ok(ScanRow {
        radius: params.radius(),
        gamma: params.gamma(),
        m: params.m(),
        dist_p,
        energy_exact: energy.exact,
        energy_surrogate: energy.surrogate,
        lp_tail: tail.value,
        llogl_tail,
        energy_lower_bound: energy.exact / constant,
        within_epsilon: dist_p < cfg.epsilon,
        datum_lower_bound,
        lower_bound_ok: datum_lower_bound >= (1.0 - cfg.eta) * base.lower_bound(),
        gamma_in_range: params.gamma_in_range(),
    })
}

fn slope(rows: &[ScanRow], value: impl Fn(&ScanRow) -> f64, expected: f64) -> Result<SlopeFit> {
    let x: Vec<f64> = rows.iter().map(|r| 1.0 - r.radius).collect();
    let y: Vec<f64> = rows.iter().map(value).collect();
    Ok(SlopeFit {
        fit: fit_power_law(&x, &y)?,
        expected,
    })
}

/// Sweeps `R` over `cfg.radii`, one row per radius, rows computed in parallel.
///
/// A failing row is recorded and skipped; the fits need three good rows.
pub fn scan(base: &RadialDensity, cfg: &ScanConfig) -> Result<ScanReport> {
    cfg.template.validate()?;
    cfg.quadrature.validate()?;
    if base.dim() != cfg.template.n {
        return Err(Error::DimensionMismatch(base.dim(), cfg.template.n));
    }
    if cfg.radii.len() < 3 {
        return Err(Error::FitRefused {
            successful: cfg.radii.len(),
        });
    }
    if cfg.radii.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidInput("R_list must be strictly increasing".into()));
    }
    if let Some(r) = cfg.radii.iter().find(|r| !(**r > 0.75 && **r < 1.0)) {
        return Err(Error::ParameterDomain(format!("R in (3/4, 1) violated: R = {r}")));
    }
    let t = cfg.template;
    let constant = quasimin_constant(t.n, t.q);
    let outcomes: Vec<Result<ScanRow>> = cfg
        .radii
        .par_iter()
        .map(|&radius| scan_row(base, t.with_radius(radius)?, cfg, constant))
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (radius, outcome) in cfg.radii.iter().zip(outcomes) {
        match outcome {
            Ok(row) => rows.push(row),
            Err(e) => failures.push(RowFailure {
                radius: *radius,
                error: e.to_string(),
            }),
        }
    }
    if rows.len() < 3 {
        return Err(Error::FitRefused { successful: rows.len() });
    }
    let blowup = 1.0 + t.alpha;
    let fits = ScanFits {
        energy_slope: slope(&rows, |r| r.energy_surrogate, blowup)?,
        energy_exact_slope: slope(&rows, |r| r.energy_exact, blowup)?,
        tail_slope: slope(&rows, |r| r.lp_tail, t.alpha * t.p / t.q + 1.0)?,
        llogl_slope: if t.p == 1.0 {
            Some(slope(
                &rows,
                |r| r.llogl_tail.unwrap_or(f64::NAN) / log_factor(r.radius),
                t.alpha / t.q + 1.0,
            )?)
        } else {
            None
        },
    };
    Ok(ScanReport {
        schema_version: SCAN_SCHEMA_VERSION,
        params: t,
        base_density: base.to_record(),
        epsilon: cfg.epsilon,
        eta: cfg.eta,
        quasimin_constant: constant,
        rows,
        failures,
        fits,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateCheck {
    /// `(∫ (|ρ̇|^p + (ρ/r)^p) r^{n-1} dr)^{1/p}`
    pub lhs: f64,
    /// `‖f‖_p / c^{(n-1)/n} + ‖f‖_p^{1/n}`
    pub rhs: f64,
    pub ratio: f64,
    pub lower_bound: f64,
}

/// Compares the `p`-energy of the radial solution with the data bound.
pub fn estimate_check(f: &RadialDensity, p: f64, cfg: &QuadratureConfig) -> Result<EstimateCheck> {
    let c = f.lower_bound();
    if !(c > 0.0) {
        return Err(Error::InvalidDensity("the estimate needs a positive lower bound".into()));
    }
    let mean = ball_mean(f, cfg)?;
    if (mean - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidDensity(format!("the estimate needs unit mean, got {mean}")));
    }
    let n = f.dim() as f64;
    let profile = solve_radial(f, cfg)?;
    let lhs = sobolev_energy(&profile, p, (0.0, 1.0), cfg)?.powf(1.0 / p);
    let norm = lp_norm(f, p, Region::BALL, cfg)?.value;
    let rhs = norm / c.powf((n - 1.0) / n) + norm.powf(1.0 / n);
    Ok(EstimateCheck {
        lhs,
        rhs,
        ratio: lhs / rhs,
        lower_bound: c,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateFamily {
    pub seed: u64,
    pub lower_bound: f64,
    pub checks: Vec<EstimateCheck>,
    pub max_ratio: f64,
}

/// [`estimate_check`] over `count` seeded random piecewise-constant unit-mean
/// densities with `f ≥ c`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_family(
    n: usize,
    p: f64,
    c: f64,
    count: usize,
    pieces: usize,
    seed: u64,
    cfg: &QuadratureConfig,
) -> Result<EstimateFamily> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let densities = (0..count)
        .map(|_| RadialDensity::random_piecewise(&mut rng, n, pieces, c))
        .collect::<Result<Vec<_>>>()?;
    let checks = densities
        .par_iter()
        .map(|f| estimate_check(f, p, cfg))
        .collect::<Result<Vec<_>>>()?;
    let max_ratio = checks.iter().map(|c| c.ratio).fold(0.0, f64::max);
    Ok(EstimateFamily {
        seed,
        lower_bound: c,
        checks,
        max_ratio,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SharpnessConfig {
    pub n: usize,
    pub p: f64,
    pub q: f64,
    pub delta: f64,
    /// Center of the singularity.
    pub center: f64,
    pub half_width: f64,
    /// Constant part of the datum.
    pub base: f64,
    /// Truncation radii `half_width · 10^{-k · decades}` for `k = 0..=refinements`.
    pub refinements: usize,
    pub decades: f64,
    pub quadrature: QuadratureConfig,
}

impl Default for SharpnessConfig {
    fn default() -> Self {
        Self {
            n: 2,
            p: 2.0,
            q: 4.0,
            delta: 0.5,
            center: 0.9,
            half_width: 0.05,
            base: 0.5,
            refinements: 6,
            decades: 3.0,
            quadrature: QuadratureConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharpnessReport {
    pub config: SharpnessConfig,
    pub density: DensityRecord,
    /// Normalizing coefficient of the singular part.
    pub kappa: f64,
    pub truncations: Vec<f64>,
    /// `∫ (|ρ̇|^q + (ρ/r)^q) r^{n-1} dr` over `[δ, 1]` minus `|r - r₀| < ε`.
    pub q_energies: Vec<f64>,
    /// `‖f‖_{L^p}` over the same truncated shells.
    pub p_norms: Vec<f64>,
    pub q_energy_increasing: bool,
    pub q_energy_growth: f64,
    pub p_norm_last_change: f64,
}

/// A datum in `L^p` but not in `L^q` near `r₀`:
/// `f = c + κ |r - r₀|^{-1/q}` on `|r - r₀| < w`, `f = c` elsewhere, `κ` chosen
/// for unit mean. Reports the truncated `q`-energies of its radial solution
/// and the truncated `p`-norms of the datum as the truncation shrinks.
pub fn sharpness_family(cfg: &SharpnessConfig) -> Result<SharpnessReport> {
    let SharpnessConfig {
        n,
        p,
        q,
        delta,
        center,
        half_width: w,
        base,
        refinements,
        decades,
        quadrature: qc,
    } = *cfg;
    if !(p >= 1.0 && q > p) {
        return Err(Error::InvalidInput(format!("need 1 <= p < q, got p = {p}, q = {q}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidInput(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(center - w > delta && center + w < 1.0 && w > 0.0) {
        return Err(Error::InvalidInput("the singular window must lie inside (delta, 1)".into()));
    }
    if !(base > 0.0 && base < 1.0) || refinements == 0 || !(decades > 0.0) {
        return Err(Error::InvalidInput("need base in (0, 1), refinements >= 1, decades > 0".into()));
    }
    let beta = if q.is_finite() { 1.0 / q } else { 0.0 };
    let power = (n - 1) as i32;
    let both_sides = |t: f64| (center + t).powi(power) + (center - t).powi(power);

    // mean = base + κ · n ∫_0^w t^{-β} ((r₀+t)^{n-1} + (r₀-t)^{n-1}) dt
    let spike_mass = n as f64
        * integrate(
            &|t: f64| t.powf(-beta) * both_sides(t),
            0.0,
            w,
            &qc.with_singular(beta > 0.0, false),
        )?
        .value;
    let kappa = (1.0 - base) / spike_mass;
    let form = ClosedForm::Spike {
        base,
        coefficient: kappa,
        center,
        half_width: w,
        exponent: beta,
    };
    let density = RadialDensity::closed_form(n, form.clone())?;
    let profile = solve_radial_with(Arc::new(density.clone()), &qc, SolveOptions::default())?;

    // ρ at r₀ ± t from the mass accumulated in the offset variable, so that
    // offsets below the spacing of doubles near r₀ stay resolved.
    let nf = n as f64;
    let rho_center_n = profile.rho(center)?.powi(n as i32);
    let offset_mass = |t: f64, sign: f64| -> Result<f64> {
        if t == 0.0 {
            return Ok(0.0);
        }
        let g = |s: f64| form.eval_offset(s) * (center + sign * s).powi(power);
        Ok(nf * integrate(&g, 0.0, t, &qc.with_singular(beta > 0.0, false))?.value)
    };
    let shell = |t: f64, exponent: f64, energy: bool| -> Result<f64> {
        let f = form.eval_offset(t);
        let mut total = 0.0;
        for sign in [1.0, -1.0] {
            let r = center + sign * t;
            if !energy {
                total += f.powf(exponent) * r.powi(power);
                continue;
            }
            let rho = (rho_center_n + sign * offset_mass(t, sign)?).powf(1.0 / nf);
            let rho_dot = (r / rho).powi(power) * f;
            total += (rho_dot.powf(exponent) + (rho / r).powf(exponent)) * r.powi(power);
        }
        Ok(total)
    };
    // ∫_{lo}^{hi} shell(t) dt in u = ln t
    let window = |lo: f64, hi: f64, exponent: f64, energy: bool| -> Result<f64> {
        let failure = std::cell::Cell::new(None);
        let g = |u: f64| {
            let t = u.exp();
            match shell(t, exponent, energy) {
                Ok(v) => v * t,
                Err(e) => {
                    failure.set(Some(e));
                    f64::NAN
                }
            }
        };
        let est = integrate(&g, lo.ln(), hi.ln(), &qc);
        if let Some(e) = failure.take() {
            return Err(e);
        }
        Ok(est?.value)
    };

    let outer_energy = sobolev_energy(&profile, q, (delta, center - w), &qc)?
        + sobolev_energy(&profile, q, (center + w, 1.0), &qc)?;
    let outer_p = unit_ball_volume(n) * base.powf(p) * ((1.0 - delta.powi(n as i32)) - both_shell(center, w, n));
    let truncations: Vec<f64> = (0..=refinements)
        .map(|k| w * 10f64.powf(-decades * k as f64))
        .collect();

    let mut q_energies = vec![outer_energy];
    let mut p_integrals = vec![outer_p];
    for k in 1..truncations.len() {
        let (lo, hi) = (truncations[k], truncations[k - 1]);
        q_energies.push(q_energies[k - 1] + window(lo, hi, q, true)?);
        p_integrals.push(p_integrals[k - 1] + sphere_area(n) * window(lo, hi, p, false)?);
    }
    let p_norms: Vec<f64> = p_integrals.iter().map(|v| v.powf(1.0 / p)).collect();
    let last = p_norms.len() - 1;
    Ok(SharpnessReport {
        config: *cfg,
        density: density.to_record(),
        kappa,
        q_energy_increasing: q_energies.windows(2).all(|w| w[1] > w[0]),
        q_energy_growth: q_energies[last] / q_energies[0],
        p_norm_last_change: (p_norms[last] - p_norms[last - 1]).abs(),
        truncations,
        q_energies,
        p_norms,
    })
}

/// `(r₀ + w)^n - (r₀ - w)^n`: the window's share of `1 - δ^n`.
fn both_shell(center: f64, w: f64, n: usize) -> f64 {
    (center + w).powi(n as i32) - (center - w).powi(n as i32)
}
