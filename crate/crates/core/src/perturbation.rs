//! The boundary-layer perturbation family `f_{γ,R}`.
//!
//! Inside `B_R` the datum is rescaled to carry mass `γ^n`; on the annulus
//! `A(R, 1)` it is replaced by the Jacobian of the affine profile
//! `ρ(r) = γR + M(r - R)`. The coupling `1 - γR = (1 - R)^{1 + α/q}` makes the
//! profile hit `ρ(1) = 1` while its radial derivative `M` blows up as `R → 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{integrate_split, integrate_weighted, QuadratureConfig};
use crate::radial::{sphere_area, unit_ball_volume, RadialFunction, RadialProfile};

/// `(γ, M)` from `1 - γR = (1 - R)^{1 + α/q}` and `M = (1 - γR)/(1 - R)`.
pub fn gamma_of_r(radius: f64, alpha: f64, q: f64) -> Result<(f64, f64)> {
    if !(q >= 1.0) || !q.is_finite() {
        return Err(Error::ParameterDomain(format!("q >= 1 violated: q = {q}")));
    }
    if !(radius > 0.75 && radius < 1.0) {
        return Err(Error::ParameterDomain(format!("R in (3/4, 1) violated: R = {radius}")));
    }
    if !(alpha > -q && alpha < -1.0) {
        return Err(Error::ParameterDomain(format!("alpha in (-q, -1) violated: alpha = {alpha}")));
    }
    let s = 1.0 - radius;
    let outer = s.powf(1.0 + alpha / q);
    Ok(((1.0 - outer) / radius, s.powf(alpha / q)))
}

/// The exponents of the family with `R` left free.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamTemplate {
    pub n: usize,
    pub p: f64,
    pub q: f64,
    pub alpha: f64,
}

impl Default for ParamTemplate {
    fn default() -> Self {
        Self {
            n: 2,
            p: 2.0,
            q: 4.0,
            alpha: -1.5,
        }
    }
}

impl ParamTemplate {
    pub fn validate(&self) -> Result<()> {
        let Self { n, p, q, alpha } = *self;
        if n < 2 {
            return Err(Error::ParameterDomain(format!("n >= 2 violated: n = {n}")));
        }
        if !(p >= 1.0) || !p.is_finite() {
            return Err(Error::ParameterDomain(format!("p >= 1 violated: p = {p}")));
        }
        if !(q > p) || !q.is_finite() {
            return Err(Error::ParameterDomain(format!("q > p violated: q = {q}, p = {p}")));
        }
        if !(q >= n as f64) {
            return Err(Error::ParameterDomain(format!("q >= n violated: q = {q}, n = {n}")));
        }
        if !(alpha > -q / p && alpha < -1.0) {
            return Err(Error::ParameterDomain(format!(
                "alpha in (-q/p, -1) violated: alpha = {alpha}, -q/p = {}",
                -q / p
            )));
        }
        Ok(())
    }

    pub fn with_radius(&self, radius: f64) -> Result<PerturbationParams> {
        PerturbationParams::new(self.n, self.p, self.q, self.alpha, radius)
    }
}

/// A validated parameter tuple `(n, p, q, α, R)` with the derived `γ` and `M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsRecord", into = "ParamsRecord")]
pub struct PerturbationParams {
    template: ParamTemplate,
    radius: f64,
    gamma: f64,
    m: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsRecord {
    n: usize,
    p: f64,
    q: f64,
    alpha: f64,
    #[serde(rename = "R")]
    radius: f64,
    gamma: Option<f64>,
    #[serde(rename = "M")]
    m: Option<f64>,
}

impl From<PerturbationParams> for ParamsRecord {
    fn from(v: PerturbationParams) -> Self {
        Self {
            n: v.template.n,
            p: v.template.p,
            q: v.template.q,
            alpha: v.template.alpha,
            radius: v.radius,
            gamma: Some(v.gamma),
            m: Some(v.m),
        }
    }
}

impl TryFrom<ParamsRecord> for PerturbationParams {
    type Error = Error;

    fn try_from(r: ParamsRecord) -> Result<Self> {
        let params = Self::new(r.n, r.p, r.q, r.alpha, r.radius)?;
        let close = |stored: Option<f64>, derived: f64| match stored {
            None => true,
            Some(v) => (v - derived).abs() <= 1e-12 * derived.abs(),
        };
        if !close(r.gamma, params.gamma) || !close(r.m, params.m) {
            return Err(Error::ParameterDomain(format!(
                "stored gamma/M disagree with the values derived from R: gamma = {}, M = {}",
                params.gamma, params.m
            )));
        }
        Ok(params)
    }
}

impl PerturbationParams {
    pub fn new(n: usize, p: f64, q: f64, alpha: f64, radius: f64) -> Result<Self> {
        let template = ParamTemplate { n, p, q, alpha };
        template.validate()?;
        let (gamma, m) = gamma_of_r(radius, alpha, q)?;
        Ok(Self {
            template,
            radius,
            gamma,
            m,
        })
    }

    /// The default desk-scale tuple at the given `R`.
    pub fn default_at(radius: f64) -> Result<Self> {
        ParamTemplate::default().with_radius(radius)
    }

    pub fn template(&self) -> ParamTemplate {
        self.template
    }
    pub fn n(&self) -> usize {
        self.template.n
    }
    pub fn p(&self) -> f64 {
        self.template.p
    }
    pub fn q(&self) -> f64 {
        self.template.q
    }
    pub fn alpha(&self) -> f64 {
        self.template.alpha
    }
    pub fn radius(&self) -> f64 {
        self.radius
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn m(&self) -> f64 {
        self.m
    }

    /// `1 - R`.
    pub fn gap(&self) -> f64 {
        1.0 - self.radius
    }

    /// `1 - γR`, evaluated as `(1 - R)^{1 + α/q}`.
    pub fn outer_gap(&self) -> f64 {
        self.gap().powf(1.0 + self.alpha() / self.q())
    }

    /// `(γR)^n`.
    pub fn inner_mass_fraction(&self) -> f64 {
        (1.0 - self.outer_gap()).powi(self.n() as i32)
    }

    /// Whether `γ` lies in `(3/4, 1)`; reported, not enforced.
    pub fn gamma_in_range(&self) -> bool {
        self.gamma > 0.75 && self.gamma < 1.0
    }

    /// Threshold separating short and long rays: `(1 - γ^n R^n)/(2n)`.
    pub fn lambda(&self) -> f64 {
        (1.0 - self.inner_mass_fraction()) / (2 * self.n()) as f64
    }

    /// Outer branch `M (ρ(r)/r)^{n-1}` with `ρ(r) = 1 - M(1 - r)`.
    pub fn outer_branch(&self, r: f64) -> f64 {
        let rho = 1.0 - self.m * (1.0 - r);
        self.m * (rho / r).powi(self.n() as i32 - 1)
    }
}

/// `f_{γ,R}` built from a base datum `f`.
#[derive(Clone)]
pub struct PerturbedDensity<F> {
    params: PerturbationParams,
    base: F,
    base_mean_r: f64,
}

impl<F: RadialFunction> PerturbedDensity<F> {
    /// Builds `f_{γ,R}` and checks its unit mean.
    pub fn build(base: F, params: PerturbationParams, cfg: &QuadratureConfig) -> Result<Self> {
        let n = params.n();
        if base.dim() != n {
            return Err(Error::DimensionMismatch(base.dim(), n));
        }
        let radius = params.radius();
        let power = (n - 1) as i32;
        let inner = integrate_split(
            &|r: f64| base.eval(r) * r.powi(power),
            0.0,
            radius,
            &base.breakpoints(),
            &base.singular_radii(),
            cfg,
        )?
        .value;
        let base_mean_r = n as f64 * inner / radius.powi(n as i32);
        if !(base_mean_r > 0.0) || !base_mean_r.is_finite() {
            return Err(Error::InvalidBaseDensity(format!(
                "mean over B_R is {base_mean_r}, it must be positive and finite"
            )));
        }
        let built = Self {
            params,
            base,
            base_mean_r,
        };
        let mean = crate::radial::ball_mean(&built, cfg)?;
        if (mean - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidBaseDensity(format!(
                "perturbed datum has mean {mean} instead of 1"
            )));
        }
        Ok(built)
    }

    pub fn params(&self) -> &PerturbationParams {
        &self.params
    }

    pub fn base(&self) -> &F {
        &self.base
    }

    /// `⨍_{B_R} f`.
    pub fn base_mean_r(&self) -> f64 {
        self.base_mean_r
    }

    /// `min(γ^{n-1}, γ^n c / ⨍_{B_R} f)`, a lower bound for `f_{γ,R}`.
    pub fn guaranteed_lower_bound(&self) -> f64 {
        let g = self.params.gamma();
        let n = self.params.n() as i32;
        g.powi(n - 1)
            .min(g.powi(n) * self.base.lower_bound() / self.base_mean_r)
    }
}

impl<F: RadialFunction> RadialFunction for PerturbedDensity<F> {
    fn dim(&self) -> usize {
        self.params.n()
    }

    fn eval(&self, r: f64) -> f64 {
        if r < self.params.radius() {
            self.params.gamma().powi(self.params.n() as i32) * self.base.eval(r) / self.base_mean_r
        } else {
            self.params.outer_branch(r)
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        let radius = self.params.radius();
        let mut v: Vec<f64> = self.base.breakpoints().into_iter().filter(|&b| b < radius).collect();
        v.push(radius);
        v
    }

    fn singular_radii(&self) -> Vec<f64> {
        let radius = self.params.radius();
        self.base
            .singular_radii()
            .into_iter()
            .filter(|&s| s < radius)
            .collect()
    }

    fn lower_bound(&self) -> f64 {
        self.guaranteed_lower_bound()
    }
}

/// `∫_R^1 f_{γ,R} r^{n-1} dr = (1 - (γR)^n)/n`, cross-checked by quadrature.
pub fn annulus_mass(params: &PerturbationParams, cfg: &QuadratureConfig) -> Result<f64> {
    let exact = (1.0 - params.inner_mass_fraction()) / params.n() as f64;
    let numeric = integrate_weighted(&|r| params.outer_branch(r), params.radius(), 1.0, params.n(), cfg)?.value;
    if (numeric - exact).abs() > 1e-9 {
        return Err(Error::ToleranceNotMet {
            estimate: numeric,
            error: (numeric - exact).abs(),
            subdivisions: 0,
        });
    }
    Ok(exact)
}

/// `ρ(r) = γR + M(r - R)` on `[R, 1]`, stored as `1 + M(r - 1)` so that
/// `ρ(1) = 1` exactly.
pub fn annulus_profile(params: &PerturbationParams) -> RadialProfile {
    RadialProfile::affine(params.n(), (params.radius(), 1.0), 1.0, 1.0, params.m())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnulusEnergy {
    /// `∫_{A(R,1)} |∂_r u|^q dx = ω_n M^q (1 - R^n)`.
    pub exact: f64,
    /// `M^q (1 - R) = (1 - R)^{1 + α}`.
    pub surrogate: f64,
}

/// Radial `q`-energy of the annulus solution and its unweighted surrogate.
pub fn annulus_energy(params: &PerturbationParams) -> Result<AnnulusEnergy> {
    let q = params.q();
    let n = params.n();
    let log_mq = q * params.m().ln();
    let shell = -(n as f64 * (-params.gap()).ln_1p()).exp_m1();
    let log_exact = log_mq + unit_ball_volume(n).ln() + shell.ln();
    if log_exact > f64::MAX.ln() || log_mq > f64::MAX.ln() {
        return Err(Error::EnergyOverflow { log_value: log_exact });
    }
    Ok(AnnulusEnergy {
        exact: log_exact.exp(),
        surrogate: (log_mq + params.gap().ln()).exp(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LpTail {
    /// `∫_{A(R,1)} |f_{γ,R}|^p dx`.
    pub value: f64,
    /// Predicted scale `(1 - R)^{αp/q + 1}`.
    pub predicted_scale: f64,
}

/// `p`-th power integral of `f_{γ,R}` over the annulus. Only the outer branch
/// enters, so no base datum is needed.
pub fn lp_tail(params: &PerturbationParams, p: f64, cfg: &QuadratureConfig) -> Result<LpTail> {
    if !(p >= 1.0) {
        return Err(Error::InvalidInput(format!("p must be >= 1, got {p}")));
    }
    let n = params.n();
    let integral = integrate_weighted(&|r| params.outer_branch(r).powf(p), params.radius(), 1.0, n, cfg)?.value;
    Ok(LpTail {
        value: sphere_area(n) * integral,
        predicted_scale: params.gap().powf(params.alpha() * p / params.q() + 1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radial::{jacobian, radial_derivative_norm, RadialDensity};
    use std::f64::consts::PI;

    fn cfg() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn default_tuple_values() {
        let p = PerturbationParams::default_at(0.9).unwrap();
        assert!(rel(p.gamma(), 0.847_625_143_815_371_6) < 1e-14);
        assert!(rel(p.m(), 2.371_373_705_661_655_3) < 1e-14);
        assert!(rel(p.outer_gap(), 0.237_137_370_566_165_53) < 1e-14);
        assert!(rel(1.0 - p.gamma() * p.radius(), p.outer_gap()) < 1e-14);
        assert!(rel(p.lambda(), 0.104_510_152_153_324_04) < 1e-14);
        assert!(p.gamma_in_range());
    }

    #[test]
    fn domain_violations_name_the_constraint() {
        let err = PerturbationParams::new(2, 2.0, 4.0, -1.0, 0.9).unwrap_err();
        assert!(err.to_string().contains("alpha"));
        let err = PerturbationParams::new(2, 2.0, 4.0, -1.5, 0.7).unwrap_err();
        assert!(err.to_string().contains("R in (3/4, 1)"));
        let err = PerturbationParams::new(3, 2.0, 2.5, -1.1, 0.9).unwrap_err();
        assert!(err.to_string().contains("q >= n"));
        let err = PerturbationParams::new(2, 2.0, 2.0, -0.5, 0.9).unwrap_err();
        assert!(err.to_string().contains("q > p"));
        assert!(gamma_of_r(0.9, -4.5, 4.0).is_err());
    }

    #[test]
    fn gamma_tends_to_one() {
        let g = PerturbationParams::default_at(1.0 - 1e-8).unwrap().gamma();
        assert!(1.0 - g < 1e-4);
    }

    #[test]
    fn params_json_roundtrip_and_cross_check() {
        let p = PerturbationParams::default_at(0.99).unwrap();
        let json = serde_json::to_string(&p).unwrap();
        assert!(json.contains("\"R\":0.99"));
        let back: PerturbationParams = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
        let tampered = json.replace(&format!("{}", p.gamma()), "0.5");
        assert!(serde_json::from_str::<PerturbationParams>(&tampered).is_err());
        let extra = r#"{"n":2,"p":2.0,"q":4.0,"alpha":-1.5,"R":0.9,"seed":1}"#;
        assert!(serde_json::from_str::<PerturbationParams>(extra).is_err());
    }

    #[test]
    fn masses() {
        let p = PerturbationParams::default_at(0.9).unwrap();
        assert!((annulus_mass(&p, &cfg()).unwrap() - 0.209_020_304_306_648_07).abs() < 1e-15);
        // n = 3 with γR = 0.8: pick R, α so that (1-R)^{1+α/q} = 0.2
        let p3 = PerturbationParams::new(3, 2.0, 4.0, -1.5, 1.0 - 0.2f64.powf(1.0 / 0.625)).unwrap();
        assert!((annulus_mass(&p3, &cfg()).unwrap() - 0.162_666_666_666_666_67).abs() < 1e-12);
    }

    #[test]
    fn built_density_has_unit_mean_and_branches() {
        let f = RadialDensity::constant(2, 1.0).unwrap();
        let params = PerturbationParams::default_at(0.9).unwrap();
        let fp = PerturbedDensity::build(f, params, &cfg()).unwrap();
        let g = params.gamma();
        assert!((fp.eval(0.3) - g * g).abs() < 1e-15);
        let r = 0.95;
        let expected = params.m() * (g * 0.9 + params.m() * (r - 0.9)) / r;
        assert!(rel(fp.eval(r), expected) < 1e-14);
        for i in 0..=100 {
            let r = 0.9 + 0.1 * i as f64 / 100.0;
            assert!(fp.eval(r) >= g - 1e-15);
        }
        assert!(fp.lower_bound() >= (1.0 - 0.05) * 0.75);
    }

    #[test]
    fn base_vanishing_on_inner_ball_is_rejected() {
        let params = PerturbationParams::default_at(0.9).unwrap();
        let zero = RadialDensity::piecewise(2, vec![0.95], vec![0.0, 1.0]).unwrap();
        assert!(matches!(
            PerturbedDensity::build(zero, params, &cfg()),
            Err(Error::InvalidBaseDensity(_))
        ));
    }

    #[test]
    fn annulus_profile_matches_outer_branch() {
        let params = PerturbationParams::default_at(0.99).unwrap();
        let prof = annulus_profile(&params);
        assert_eq!(prof.rho(1.0).unwrap(), 1.0);
        assert!(rel(prof.rho(0.99).unwrap(), params.gamma() * 0.99) < 1e-14);
        for i in 0..50 {
            let r = 0.99 + 0.01 * (i as f64 + 0.5) / 50.0;
            assert!(rel(jacobian(&prof, r).unwrap(), params.outer_branch(r)) < 1e-10);
            assert_eq!(radial_derivative_norm(&prof, r).unwrap(), params.m());
        }
    }

    #[test]
    fn energies() {
        let params = PerturbationParams::default_at(0.9).unwrap();
        let e = annulus_energy(&params).unwrap();
        assert!(rel(e.exact, 18.875_717_705_012_59) < 1e-13);
        assert!(rel(e.surrogate, 3.162_277_660_168_379) < 1e-13);
        assert!(rel(e.exact, PI * params.m().powi(4) * (1.0 - 0.81)) < 1e-13);
        let near = PerturbationParams::new(2, 2.0, 4.0, -1.0 - 1e-12, 0.99).unwrap();
        assert!((annulus_energy(&near).unwrap().surrogate - 1.0).abs() < 1e-10);
    }

    #[test]
    fn tails() {
        let params = PerturbationParams::default_at(0.9).unwrap();
        let t1 = lp_tail(&params, 1.0, &cfg()).unwrap();
        assert!((t1.value - PI * (1.0 - params.inner_mass_fraction())).abs() < 1e-12);
        let bound = 2.0 * params.m();
        for i in 0..=100 {
            assert!(params.outer_branch(0.9 + 0.001 * i as f64) <= bound);
        }
        let t2 = lp_tail(&params, 2.0, &cfg()).unwrap();
        assert!(t2.value > 0.0 && t2.predicted_scale == 0.1f64.powf(0.25));
    }
}
