//! `L^p` and `L log L` norms of radial functions, the distance between
//! data, and the Jacobian-versus-energy diagnostic ratio.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::quadrature::{integrate_split, QuadratureConfig};
use crate::radial::{jacobian, sobolev_energy, sphere_area, RadialFunction, RadialProfile};

/// A radial region: the whole ball or the annulus `{a < |x| < b}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub a: f64,
    pub b: f64,
}

impl Region {
    pub const BALL: Region = Region { a: 0.0, b: 1.0 };

    pub fn annulus(a: f64, b: f64) -> Result<Self> {
        if !(0.0 <= a && a < b && b <= 1.0) {
            return Err(Error::InvalidInput(format!("region [{a}, {b}] must satisfy 0 <= a < b <= 1")));
        }
        Ok(Self { a, b })
    }

    pub fn is_ball(&self) -> bool {
        self.a == 0.0 && self.b == 1.0
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RegionRepr {
    Named(String),
    Interval([f64; 2]),
}

impl Serialize for Region {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_ball() {
            RegionRepr::Named("ball".into()).serialize(s)
        } else {
            RegionRepr::Interval([self.a, self.b]).serialize(s)
        }
    }
}

impl<'de> Deserialize<'de> for Region {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match RegionRepr::deserialize(d)? {
            RegionRepr::Named(s) if s == "ball" => Ok(Region::BALL),
            RegionRepr::Named(s) => Err(serde::de::Error::custom(format!("unknown region {s:?}"))),
            RegionRepr::Interval([a, b]) => Region::annulus(a, b).map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Space {
    Lp { p: f64 },
    Llogl,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub space: Space,
    pub region: Region,
    pub value: f64,
    /// `‖f‖_{L^1}` over the region; set for `L log L` reports.
    pub l1_mass: Option<f64>,
}

/// `f - g` as a radial function.
pub struct Difference<'a, F: ?Sized, G: ?Sized> {
    pub f: &'a F,
    pub g: &'a G,
}

impl<F, G> RadialFunction for Difference<'_, F, G>
where
    F: RadialFunction + ?Sized,
    G: RadialFunction + ?Sized,
{
    fn dim(&self) -> usize {
        self.f.dim()
    }
    fn eval(&self, r: f64) -> f64 {
        self.f.eval(r) - self.g.eval(r)
    }
    fn breakpoints(&self) -> Vec<f64> {
        let mut v = self.f.breakpoints();
        v.extend(self.g.breakpoints());
        v
    }
    fn singular_radii(&self) -> Vec<f64> {
        let mut v = self.f.singular_radii();
        v.extend(self.g.singular_radii());
        v
    }
}

fn weighted_integral<F, H>(f: &F, region: Region, h: H, cfg: &QuadratureConfig) -> Result<f64>
where
    F: RadialFunction + ?Sized,
    H: Fn(f64) -> f64,
{
    let n = f.dim();
    let power = (n - 1) as i32;
    let integrand = |r: f64| h(f.eval(r)) * r.powi(power);
    match integrate_split(&integrand, region.a, region.b, &f.breakpoints(), &f.singular_radii(), cfg) {
        Ok(e) if e.value.is_finite() => Ok(sphere_area(n) * e.value),
        Ok(e) => Err(Error::InfiniteNorm { estimate: e.value }),
        Err(Error::Divergent { estimate, .. }) => Err(Error::InfiniteNorm { estimate }),
        Err(e) => Err(e),
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::InvalidInput(format!("norm exponent must be a finite p >= 1, got {p}")));
    }
    Ok(())
}

/// `(n ω_n ∫_a^b |f|^p r^{n-1} dr)^{1/p}`.
pub fn lp_norm<F: RadialFunction + ?Sized>(f: &F, p: f64, region: Region, cfg: &QuadratureConfig) -> Result<NormReport> {
    check_p(p)?;
    let integral = weighted_integral(f, region, |v| v.abs().powf(p), cfg)?;
    Ok(NormReport {
        space: Space::Lp { p },
        region,
        value: integral.powf(1.0 / p),
        l1_mass: None,
    })
}

/// `n ω_n ∫ |f| log(e + |f|/m) r^{n-1} dr` with `m = ‖f‖_{L^1(region)}`.
pub fn llogl_norm<F: RadialFunction + ?Sized>(f: &F, region: Region, cfg: &QuadratureConfig) -> Result<NormReport> {
    let m = weighted_integral(f, region, f64::abs, cfg)?;
    llogl_norm_with_mass(f, region, m, cfg)
}

/// Second pass of [`llogl_norm`] with the normalizing mass supplied.
pub fn llogl_norm_with_mass<F: RadialFunction + ?Sized>(
    f: &F,
    region: Region,
    m: f64,
    cfg: &QuadratureConfig,
) -> Result<NormReport> {
    let value = if m == 0.0 {
        0.0
    } else {
        weighted_integral(f, region, |v| v.abs() * (std::f64::consts::E + v.abs() / m).ln(), cfg)?
    };
    Ok(NormReport {
        space: Space::Llogl,
        region,
        value,
        l1_mass: Some(m),
    })
}

/// The distance between data: `‖f - g‖_{L^p}` for `p > 1`, `‖f - g‖_{L log L}`
/// for `p = 1`, both over the ball.
pub fn dist<F, G>(f: &F, g: &G, p: f64, cfg: &QuadratureConfig) -> Result<f64>
where
    F: RadialFunction + ?Sized,
    G: RadialFunction + ?Sized,
{
    check_p(p)?;
    if f.dim() != g.dim() {
        return Err(Error::DimensionMismatch(f.dim(), g.dim()));
    }
    let d = Difference { f, g };
    if p == 1.0 {
        Ok(llogl_norm(&d, Region::BALL, cfg)?.value)
    } else {
        Ok(lp_norm(&d, p, Region::BALL, cfg)?.value)
    }
}

/// Jacobian of a radial stretching, as a radial function.
struct JacobianOf<'a>(&'a RadialProfile);

impl RadialFunction for JacobianOf<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn eval(&self, r: f64) -> f64 {
        jacobian(self.0, r).unwrap_or(f64::NAN)
    }
    fn breakpoints(&self) -> Vec<f64> {
        self.0.breakpoints().0
    }
    fn singular_radii(&self) -> Vec<f64> {
        self.0.breakpoints().1
    }
}

pub const BOUND_RATIO_CONVENTION: &str =
    "denominator = 1 + sobolev_energy(profile, n, [0, 1]); the unit term stands for the identity boundary data";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundRatio {
    pub llogl_jacobian: f64,
    pub energy_n: f64,
    pub ratio: f64,
    pub convention: String,
}

/// `‖Ju‖_{L log L(B_1)} / (1 + ∫ (|ρ̇|^n + (ρ/r)^n) r^{n-1} dr)`.
///
/// A diagnostic only: no constant is asserted.
pub fn llogl_bound_ratio(p: &RadialProfile, cfg: &QuadratureConfig) -> Result<BoundRatio> {
    if p.domain() != (0.0, 1.0) {
        return Err(Error::InvalidInput("bound ratio needs a profile on the whole ball".into()));
    }
    let rho1 = p.rho(1.0)?;
    if (rho1 - 1.0).abs() > 1e-8 {
        return Err(Error::BoundaryViolation(format!("rho(1) = {rho1}, identity boundary values need 1")));
    }
    let region = Region {
        a: p.min_radius(),
        b: 1.0,
    };
    let llogl = llogl_norm(&JacobianOf(p), region, cfg)?.value;
    let energy = sobolev_energy(p, p.dim() as f64, (0.0, 1.0), cfg)?;
    Ok(BoundRatio {
        llogl_jacobian: llogl,
        energy_n: energy,
        ratio: llogl / (1.0 + energy),
        convention: BOUND_RATIO_CONVENTION.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radial::{ClosedForm, RadialDensity};
    use std::f64::consts::PI;

    fn cfg() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    #[test]
    fn constant_norms() {
        let one = RadialDensity::constant(2, 1.0).unwrap();
        let r = lp_norm(&one, 2.0, Region::BALL, &cfg()).unwrap();
        assert!((r.value - PI.sqrt()).abs() < 1e-12);
        let l = llogl_norm(&one, Region::BALL, &cfg()).unwrap();
        assert!((l.value - 3.489_479_240_751_099_2).abs() < 1e-12);
        assert!((l.l1_mass.unwrap() - PI).abs() < 1e-12);
        let zero = RadialDensity::constant(2, 0.0).unwrap();
        assert_eq!(llogl_norm(&zero, Region::BALL, &cfg()).unwrap().value, 0.0);
    }

    #[test]
    fn beta_integral_norm() {
        // 2π ∫_0^1 (1-r)^{-2/3} r dr = 2π B(2, 1/3) = 2π · 9/4
        let f = RadialDensity::closed_form(
            2,
            ClosedForm::Spike {
                base: 0.0,
                coefficient: 1.0,
                center: 1.0,
                half_width: 2.0,
                exponent: 1.0 / 3.0,
            },
        )
        .unwrap();
        let r = lp_norm(&f, 2.0, Region::BALL, &cfg()).unwrap();
        assert!((r.value - 3.759_942_411_946_500_8).abs() < 1e-9, "{}", r.value);
    }

    #[test]
    fn distance_of_constants() {
        let a = RadialDensity::constant(2, 0.3).unwrap();
        let b = RadialDensity::constant(2, 1.7).unwrap();
        assert!((dist(&a, &b, 2.0, &cfg()).unwrap() - 1.4 * PI.sqrt()).abs() < 1e-12);
        assert_eq!(dist(&a, &a, 2.0, &cfg()).unwrap(), 0.0);
        assert_eq!(dist(&a, &a, 1.0, &cfg()).unwrap(), 0.0);
        let c = RadialDensity::constant(3, 1.0).unwrap();
        assert!(matches!(dist(&a, &c, 2.0, &cfg()), Err(Error::DimensionMismatch(2, 3))));
    }

    #[test]
    fn divergent_norm_is_reported() {
        let f = RadialDensity::closed_form(
            2,
            ClosedForm::Spike {
                base: 1.0,
                coefficient: 1.0,
                center: 0.5,
                half_width: 0.1,
                exponent: 0.6,
            },
        )
        .unwrap();
        let r = lp_norm(&f, 1.0, Region::BALL, &cfg()); assert!(r.is_ok(), "{r:?}");
        assert!(matches!(
            lp_norm(&f, 2.0, Region::BALL, &cfg()),
            Err(Error::InfiniteNorm { .. })
        ));
    }

    #[test]
    fn identity_bound_ratio() {
        let r = llogl_bound_ratio(&RadialProfile::identity(2), &cfg()).unwrap();
        assert!((r.ratio - PI * (std::f64::consts::E + 1.0 / PI).ln() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn report_serialization() {
        let rep = NormReport {
            space: Space::Lp { p: 2.0 },
            region: Region::annulus(0.5, 1.0).unwrap(),
            value: 1.5,
            l1_mass: None,
        };
        let json = serde_json::to_string(&rep).unwrap();
        assert_eq!(
            json,
            r#"{"space":{"kind":"lp","p":2.0},"region":[0.5,1.0],"value":1.5,"l1_mass":null}"#
        );
        let back: NormReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rep);
        let ball: Region = serde_json::from_str(r#""ball""#).unwrap();
        assert!(ball.is_ball());
    }
}
