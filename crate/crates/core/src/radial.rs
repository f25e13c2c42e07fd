//! Radial data, radial stretchings `u(x) = ρ(|x|) x/|x|` and the exact
//! radial solution of `det Du = f`.
//!
//! For radial `f` the profile solves `ρ(r)^n = ∫_0^r n f(s) s^{n-1} ds`, and
//! the Jacobian of the stretching is `ρ̇ ρ^{n-1} / r^{n-1}`. The derivative
//! `ρ̇` is always taken from that identity, never from differencing `ρ`.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pchip::Pchip;
use crate::quadrature::{integrate_split, QuadratureConfig};

/// Smallest radius at which `ρ̇` is evaluated when the density has no
/// positive lower bound.
pub const DEFAULT_R_MIN: f64 = 1e-6;

/// Uniform knots used to tabulate the cumulative mass of a solved profile.
const PROFILE_KNOTS: usize = 64;

/// Volume of the unit ball in `R^n`.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * std::f64::consts::PI / n as f64 * unit_ball_volume(n - 2),
    }
}

/// `H^{n-1}` measure of the unit sphere, `n ω_n`.
pub fn sphere_area(n: usize) -> f64 {
    n as f64 * unit_ball_volume(n)
}

/// A scalar function of the radius on the unit ball of `R^n`.
pub trait RadialFunction: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, r: f64) -> f64;

    /// Radii in `(0, 1)` where the function jumps; integrals are split there.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }

    /// Radii in `[0, 1]` where the function may blow up (integrably).
    fn singular_radii(&self) -> Vec<f64> {
        Vec::new()
    }

    /// A constant `c` with `f ≥ c` everywhere.
    fn lower_bound(&self) -> f64 {
        0.0
    }
}

impl<T: RadialFunction + ?Sized> RadialFunction for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, r: f64) -> f64 {
        (**self).eval(r)
    }
    fn breakpoints(&self) -> Vec<f64> {
        (**self).breakpoints()
    }
    fn singular_radii(&self) -> Vec<f64> {
        (**self).singular_radii()
    }
    fn lower_bound(&self) -> f64 {
        (**self).lower_bound()
    }
}

impl<T: RadialFunction + ?Sized> RadialFunction for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, r: f64) -> f64 {
        (**self).eval(r)
    }
    fn breakpoints(&self) -> Vec<f64> {
        (**self).breakpoints()
    }
    fn singular_radii(&self) -> Vec<f64> {
        (**self).singular_radii()
    }
    fn lower_bound(&self) -> f64 {
        (**self).lower_bound()
    }
}

/// `∫_a^b g(r, f(r)) r^{n-1} dr`, split at the break points of `f` and
/// flagged singular at its singular radii.
pub fn integrate_against<F, G>(f: &F, a: f64, b: f64, g: G, cfg: &QuadratureConfig) -> Result<f64>
where
    F: RadialFunction + ?Sized,
    G: Fn(f64, f64) -> f64,
{
    let power = (f.dim() - 1) as i32;
    let integrand = |r: f64| g(r, f.eval(r)) * r.powi(power);
    let est = integrate_split(&integrand, a, b, &f.breakpoints(), &f.singular_radii(), cfg)?;
    Ok(est.value)
}

/// Mean of `f` over the unit ball, `n ∫_0^1 f r^{n-1} dr`.
pub fn ball_mean<F: RadialFunction + ?Sized>(f: &F, cfg: &QuadratureConfig) -> Result<f64> {
    Ok(f.dim() as f64 * integrate_against(f, 0.0, 1.0, |_, v| v, cfg)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClosedForm {
    Constant {
        value: f64,
    },
    /// `coefficient · r^exponent`
    Power { coefficient: f64, exponent: f64 },
    /// `base + coefficient · |r - center|^(-exponent)` for
    /// `|r - center| < half_width`, `base` elsewhere.
    Spike {
        base: f64,
        coefficient: f64,
        center: f64,
        half_width: f64,
        exponent: f64,
    },
}

impl ClosedForm {
    fn eval(&self, r: f64) -> f64 {
        match *self {
            ClosedForm::Constant { value } => value,
            ClosedForm::Power {
                coefficient,
                exponent,
            } => coefficient * r.powf(exponent),
            ClosedForm::Spike {
                center, half_width, ..
            } => {
                let t = (r - center).abs();
                if t < half_width {
                    self.eval_offset(t)
                } else {
                    self.eval_offset(f64::INFINITY)
                }
            }
        }
    }

    /// Spike value at distance `t` from its center, computed from `t`
    /// directly so that offsets far below the resolution of `r` stay exact.
    pub fn eval_offset(&self, t: f64) -> f64 {
        match *self {
            ClosedForm::Spike {
                base,
                coefficient,
                half_width,
                exponent,
                ..
            } => {
                if t < half_width {
                    base + coefficient * t.powf(-exponent)
                } else {
                    base
                }
            }
            _ => f64::NAN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Form {
    Closed(ClosedForm),
    /// Constant `values[i]` on `[breaks[i-1], breaks[i])`.
    Piecewise { breaks: Vec<f64>, values: Vec<f64> },
    Sampled(Pchip),
}

/// A radial datum `f(r)` on the unit ball of `R^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialDensity {
    n: usize,
    form: Form,
    lower_bound: f64,
}

/// Storage tag of a density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityKind {
    ClosedForm,
    SampledTable,
    Piecewise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiecewiseParams {
    pub breaks: Vec<f64>,
    pub values: Vec<f64>,
}

/// JSON form `{kind, n, params | samples}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityRecord {
    ClosedForm { n: usize, params: ClosedForm },
    Piecewise { n: usize, params: PiecewiseParams },
    SampledTable { n: usize, samples: Vec<[f64; 2]> },
}

fn check_dim(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidDensity(format!("dimension must be >= 2, got {n}")));
    }
    Ok(())
}

fn check_values(values: &[f64]) -> Result<()> {
    if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::InvalidDensity(format!("negative or non-finite value {v}")));
    }
    Ok(())
}

fn check_increasing(xs: &[f64], lo: f64, hi: f64, what: &str) -> Result<()> {
    if xs.iter().any(|x| !(lo..=hi).contains(x)) {
        return Err(Error::InvalidDensity(format!("{what} must lie in [{lo}, {hi}]")));
    }
    if xs.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidDensity(format!("{what} must be strictly increasing")));
    }
    Ok(())
}

impl RadialDensity {
    pub fn constant(n: usize, value: f64) -> Result<Self> {
        Self::closed_form(n, ClosedForm::Constant { value })
    }

    /// `coefficient · r^exponent`.
    pub fn power(n: usize, coefficient: f64, exponent: f64) -> Result<Self> {
        Self::closed_form(
            n,
            ClosedForm::Power {
                coefficient,
                exponent,
            },
        )
    }

    pub fn closed_form(n: usize, form: ClosedForm) -> Result<Self> {
        check_dim(n)?;
        let lower_bound = match form {
            ClosedForm::Constant { value } => {
                check_values(&[value])?;
                value
            }
            ClosedForm::Power {
                coefficient,
                exponent,
            } => {
                check_values(&[coefficient])?;
                if !exponent.is_finite() || exponent <= -(n as f64) {
                    return Err(Error::InvalidDensity(format!(
                        "power exponent {exponent} is not integrable against r^(n-1)"
                    )));
                }
                if exponent > 0.0 {
                    0.0
                } else {
                    coefficient
                }
            }
            ClosedForm::Spike {
                base,
                coefficient,
                center,
                half_width,
                exponent,
            } => {
                check_values(&[base, coefficient])?;
                if !(0.0..=1.0).contains(&center) || !(half_width > 0.0) {
                    return Err(Error::InvalidDensity(
                        "spike center must lie in [0, 1] with positive half width".into(),
                    ));
                }
                if !(0.0..1.0).contains(&exponent) {
                    return Err(Error::InvalidDensity(format!(
                        "spike exponent {exponent} must lie in [0, 1)"
                    )));
                }
                base
            }
        };
        Ok(Self {
            n,
            form: Form::Closed(form),
            lower_bound,
        })
    }

    /// Piecewise constant: `values[0]` on `[0, breaks[0])`, …, `values[k]` on
    /// `[breaks[k-1], 1]`.
    pub fn piecewise(n: usize, breaks: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        check_dim(n)?;
        check_values(&values)?;
        if values.len() != breaks.len() + 1 {
            return Err(Error::InvalidDensity(
                "piecewise density needs one more value than break points".into(),
            ));
        }
        check_increasing(&breaks, f64::MIN_POSITIVE, 1.0 - f64::EPSILON, "break points")?;
        let lower_bound = values.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Self {
            n,
            form: Form::Piecewise { breaks, values },
            lower_bound,
        })
    }

    /// Monotone piecewise-cubic interpolation of `(r, value)` samples with
    /// strictly increasing `r`; constant beyond the first and last sample.
    pub fn sampled(n: usize, samples: &[[f64; 2]]) -> Result<Self> {
        check_dim(n)?;
        if samples.len() < 2 {
            return Err(Error::InvalidDensity("sample table needs at least two rows".into()));
        }
        let (x, y): (Vec<f64>, Vec<f64>) = samples.iter().map(|s| (s[0], s[1])).unzip();
        check_increasing(&x, 0.0, 1.0, "sample radii")?;
        check_values(&y)?;
        let lower_bound = y.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Self {
            n,
            form: Form::Sampled(Pchip::new(x, y)),
            lower_bound,
        })
    }

    /// A random unit-mean piecewise-constant density with `f ≥ c`.
    pub fn random_piecewise<R: Rng + ?Sized>(rng: &mut R, n: usize, pieces: usize, c: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&c) || pieces == 0 {
            return Err(Error::InvalidInput(format!("need c in [0, 1) and pieces >= 1, got c = {c}")));
        }
        let mut breaks: Vec<f64> = (0..pieces - 1).map(|_| rng.gen_range(0.02..0.98)).collect();
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let raw: Vec<f64> = (0..=breaks.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let nf = n as i32;
        let mut edges = vec![0.0];
        edges.extend(&breaks);
        edges.push(1.0);
        let raw_mean: f64 = raw
            .iter()
            .zip(edges.windows(2))
            .map(|(u, w)| u * (w[1].powi(nf) - w[0].powi(nf)))
            .sum();
        let values = raw.iter().map(|u| c + (1.0 - c) * u / raw_mean).collect();
        Self::piecewise(n, breaks, values)
    }

    pub fn from_record(record: &DensityRecord) -> Result<Self> {
        match record {
            DensityRecord::ClosedForm { n, params } => Self::closed_form(*n, params.clone()),
            DensityRecord::Piecewise { n, params } => {
                Self::piecewise(*n, params.breaks.clone(), params.values.clone())
            }
            DensityRecord::SampledTable { n, samples } => Self::sampled(*n, samples),
        }
    }

    pub fn to_record(&self) -> DensityRecord {
        match &self.form {
            Form::Closed(c) => DensityRecord::ClosedForm {
                n: self.n,
                params: c.clone(),
            },
            Form::Piecewise { breaks, values } => DensityRecord::Piecewise {
                n: self.n,
                params: PiecewiseParams {
                    breaks: breaks.clone(),
                    values: values.clone(),
                },
            },
            Form::Sampled(p) => DensityRecord::SampledTable {
                n: self.n,
                samples: p.points().map(|(x, y)| [x, y]).collect(),
            },
        }
    }

    pub fn kind(&self) -> DensityKind {
        match self.form {
            Form::Closed(_) => DensityKind::ClosedForm,
            Form::Piecewise { .. } => DensityKind::Piecewise,
            Form::Sampled(_) => DensityKind::SampledTable,
        }
    }

    pub fn closed(&self) -> Option<&ClosedForm> {
        match &self.form {
            Form::Closed(c) => Some(c),
            _ => None,
        }
    }

    /// `t · f`.
    pub fn scaled(&self, t: f64) -> Result<Self> {
        let form = match &self.form {
            Form::Closed(ClosedForm::Constant { value }) => ClosedForm::Constant { value: t * value },
            Form::Closed(ClosedForm::Power {
                coefficient,
                exponent,
            }) => ClosedForm::Power {
                coefficient: t * coefficient,
                exponent: *exponent,
            },
            Form::Closed(ClosedForm::Spike {
                base,
                coefficient,
                center,
                half_width,
                exponent,
            }) => ClosedForm::Spike {
                base: t * base,
                coefficient: t * coefficient,
                center: *center,
                half_width: *half_width,
                exponent: *exponent,
            },
            Form::Piecewise { breaks, values } => {
                return Self::piecewise(self.n, breaks.clone(), values.iter().map(|v| t * v).collect())
            }
            Form::Sampled(p) => {
                let samples: Vec<[f64; 2]> = p.points().map(|(x, y)| [x, t * y]).collect();
                return Self::sampled(self.n, &samples);
            }
        };
        Self::closed_form(self.n, form)
    }

    /// Mean over the unit ball.
    pub fn mean(&self, cfg: &QuadratureConfig) -> Result<f64> {
        ball_mean(self, cfg)
    }

    /// Rescaled to unit mean over the unit ball.
    pub fn normalized(&self, cfg: &QuadratureConfig) -> Result<Self> {
        let m = self.mean(cfg)?;
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::InvalidDensity(format!("cannot normalize a density with mean {m}")));
        }
        self.scaled(1.0 / m)
    }

    /// Spot-checks `eval(r) ≥ lower_bound` on a uniform grid of `samples`
    /// interior radii; returns the worst violation (zero when none).
    pub fn lower_bound_violation(&self, samples: usize) -> f64 {
        (1..=samples)
            .map(|i| i as f64 / (samples + 1) as f64)
            .map(|r| self.lower_bound - self.eval(r))
            .fold(0.0, f64::max)
    }
}

impl RadialFunction for RadialDensity {
    fn dim(&self) -> usize {
        self.n
    }

    fn eval(&self, r: f64) -> f64 {
        match &self.form {
            Form::Closed(c) => c.eval(r),
            Form::Piecewise { breaks, values } => values[breaks.partition_point(|&b| b <= r)],
            Form::Sampled(p) => p.eval(r),
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        match &self.form {
            Form::Piecewise { breaks, .. } => breaks.clone(),
            Form::Closed(ClosedForm::Spike {
                center, half_width, ..
            }) => [center - half_width, center + half_width]
                .into_iter()
                .filter(|&x| x > 0.0 && x < 1.0)
                .collect(),
            _ => Vec::new(),
        }
    }

    fn singular_radii(&self) -> Vec<f64> {
        match &self.form {
            Form::Closed(ClosedForm::Spike {
                center, exponent, ..
            }) if *exponent > 0.0 => vec![*center],
            Form::Closed(ClosedForm::Power { exponent, .. }) if *exponent < 0.0 => vec![0.0],
            _ => Vec::new(),
        }
    }

    fn lower_bound(&self) -> f64 {
        self.lower_bound
    }
}

/// Cumulative-mass table of a profile solved from a density.
struct Solved {
    density: Arc<dyn RadialFunction>,
    knots: Vec<f64>,
    /// `n ∫_0^{knot} f s^{n-1} ds`
    cumulative: Vec<f64>,
    breaks: Vec<f64>,
    singular: Vec<f64>,
    cfg: QuadratureConfig,
    r_min: f64,
}

impl Solved {
    fn mass(&self, r: f64) -> Result<f64> {
        let mut k = self.knots.partition_point(|&x| x <= r).saturating_sub(1);
        if k + 1 < self.knots.len() && self.knots[k + 1] - r < r - self.knots[k] {
            k += 1;
        }
        let knot = self.knots[k];
        if r == knot {
            return Ok(self.cumulative[k]);
        }
        let (lo, hi, sign) = if r > knot { (knot, r, 1.0) } else { (r, knot, -1.0) };
        let n = self.density.dim();
        let power = (n - 1) as i32;
        let f = &self.density;
        let g = |s: f64| f.eval(s) * s.powi(power);
        let rest = if hi - lo <= TINY_WIDTH * hi {
            let singular_at = self.singular.iter().find(|&&x| x == lo || x == hi).copied();
            short_interval(&g, lo, hi, singular_at)
        } else {
            let local = QuadratureConfig {
                abs_tol: (self.cfg.abs_tol * hi.powi(n as i32)).max(1e-300),
                ..self.cfg
            };
            integrate_split(&g, lo, hi, &self.breaks, &self.singular, &local)?.value
        };
        Ok(self.cumulative[k] + sign * n as f64 * rest)
    }
}

/// Relative width below which a remainder interval is integrated in closed
/// form instead of adaptively.
const TINY_WIDTH: f64 = 1e-8;

/// `∫_lo^hi g` over a very short interval. Next to a singular end the
/// integrand is modelled as `C t^{-e}` with `e` read off two samples; otherwise
/// a single 3-point Gauss rule is used.
fn short_interval<G: Fn(f64) -> f64>(g: &G, lo: f64, hi: f64, singular_at: Option<f64>) -> f64 {
    let w = hi - lo;
    match singular_at {
        Some(end) => {
            let at = |t: f64| if end == lo { lo + t } else { hi - t };
            let (g1, g2) = (g(at(w)), g(at(0.5 * w)));
            if !(g1 > 0.0 && g2 > 0.0) {
                return 0.5 * w * (g1 + g2);
            }
            let e = (g2 / g1).log2().min(0.999);
            w * g1 / (1.0 - e)
        }
        None => {
            let m = 0.5 * (lo + hi);
            let h = 0.5 * w * (0.6f64).sqrt();
            w * (5.0 * g(m - h) + 8.0 * g(m) + 5.0 * g(m + h)) / 18.0
        }
    }
}

#[derive(Clone)]
enum Repr {
    /// `scale · r^exponent`
    Power { scale: f64, exponent: f64 },
    /// `value + slope (r - anchor)`
    Affine { anchor: f64, value: f64, slope: f64 },
    Solved(Arc<Solved>),
    Sampled(Pchip),
}

/// A radial profile `ρ` with access to its derivative `ρ̇`.
#[derive(Clone)]
pub struct RadialProfile {
    n: usize,
    domain: (f64, f64),
    repr: Repr,
}

impl std::fmt::Debug for RadialProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match &self.repr {
            Repr::Power { .. } => "power",
            Repr::Affine { .. } => "affine",
            Repr::Solved(_) => "solved",
            Repr::Sampled(_) => "sampled",
        };
        f.debug_struct("RadialProfile")
            .field("n", &self.n)
            .field("domain", &self.domain)
            .field("kind", &kind)
            .finish()
    }
}

/// JSON form of a profile; solved profiles are exported as sample tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileRecord {
    Power {
        n: usize,
        scale: f64,
        exponent: f64,
    },
    Affine {
        n: usize,
        domain: [f64; 2],
        anchor: f64,
        value: f64,
        slope: f64,
    },
    Sampled {
        n: usize,
        samples: Vec<[f64; 2]>,
    },
}

impl RadialProfile {
    pub fn identity(n: usize) -> Self {
        Self::power(n, 1.0, 1.0)
    }

    /// `ρ(r) = scale · r^exponent` on `[0, 1]`.
    pub fn power(n: usize, scale: f64, exponent: f64) -> Self {
        Self {
            n,
            domain: (0.0, 1.0),
            repr: Repr::Power { scale, exponent },
        }
    }

    /// `ρ(r) = value + slope (r - anchor)` on `domain`.
    pub fn affine(n: usize, domain: (f64, f64), anchor: f64, value: f64, slope: f64) -> Self {
        Self {
            n,
            domain,
            repr: Repr::Affine { anchor, value, slope },
        }
    }

    pub fn from_samples(n: usize, samples: &[[f64; 2]]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidInput("profile table needs at least two rows".into()));
        }
        let (x, y): (Vec<f64>, Vec<f64>) = samples.iter().map(|s| (s[0], s[1])).unzip();
        check_increasing(&x, 0.0, 1.0, "profile radii").map_err(|e| Error::InvalidInput(e.to_string()))?;
        let domain = (x[0], x[x.len() - 1]);
        Ok(Self {
            n,
            domain,
            repr: Repr::Sampled(Pchip::new(x, y)),
        })
    }

    pub fn from_record(record: &ProfileRecord) -> Result<Self> {
        Ok(match record {
            ProfileRecord::Power { n, scale, exponent } => Self::power(*n, *scale, *exponent),
            ProfileRecord::Affine {
                n,
                domain,
                anchor,
                value,
                slope,
            } => Self::affine(*n, (domain[0], domain[1]), *anchor, *value, *slope),
            ProfileRecord::Sampled { n, samples } => Self::from_samples(*n, samples)?,
        })
    }

    /// Closed forms export their parameters; other profiles are sampled at
    /// `samples` uniform radii over their domain.
    pub fn to_record(&self, samples: usize) -> Result<ProfileRecord> {
        Ok(match &self.repr {
            Repr::Power { scale, exponent } => ProfileRecord::Power {
                n: self.n,
                scale: *scale,
                exponent: *exponent,
            },
            Repr::Affine { anchor, value, slope } => ProfileRecord::Affine {
                n: self.n,
                domain: [self.domain.0, self.domain.1],
                anchor: *anchor,
                value: *value,
                slope: *slope,
            },
            _ => {
                let (lo, hi) = self.domain;
                let k = samples.max(2);
                let rows = (0..k)
                    .map(|i| {
                        let r = lo + (hi - lo) * i as f64 / (k - 1) as f64;
                        self.rho(r).map(|v| [r, v])
                    })
                    .collect::<Result<Vec<_>>>()?;
                ProfileRecord::Sampled { n: self.n, samples: rows }
            }
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    /// The density this profile was solved from, if any.
    pub fn density(&self) -> Option<&Arc<dyn RadialFunction>> {
        match &self.repr {
            Repr::Solved(s) => Some(&s.density),
            _ => None,
        }
    }

    /// Radii where `ρ̇` jumps or blows up.
    pub fn breakpoints(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.repr {
            Repr::Solved(s) => (s.breaks.clone(), s.singular.clone()),
            _ => (Vec::new(), Vec::new()),
        }
    }

    fn check(&self, r: f64) -> Result<()> {
        let (lo, hi) = self.domain;
        if !(r >= lo && r <= hi) {
            return Err(Error::RadiusOutOfDomain { r, lo, hi });
        }
        Ok(())
    }

    pub fn rho(&self, r: f64) -> Result<f64> {
        self.check(r)?;
        Ok(match &self.repr {
            Repr::Power { scale, exponent } => scale * r.powf(*exponent),
            Repr::Affine { anchor, value, slope } => value + slope * (r - anchor),
            Repr::Solved(s) => s.mass(r)?.max(0.0).powf(1.0 / self.n as f64),
            Repr::Sampled(p) => p.eval(r),
        })
    }

    pub fn rho_dot(&self, r: f64) -> Result<f64> {
        self.check(r)?;
        if r == 0.0 {
            return Err(Error::UndefinedAtOrigin);
        }
        Ok(match &self.repr {
            Repr::Power { scale, exponent } => scale * exponent * r.powf(exponent - 1.0),
            Repr::Affine { slope, .. } => *slope,
            Repr::Sampled(p) => p.derivative(r),
            Repr::Solved(s) => {
                let f = &s.density;
                let c = f.lower_bound();
                if c <= 0.0 && r < s.r_min {
                    return Err(Error::BelowMinimumRadius { r, r_min: s.r_min });
                }
                let n = self.n as f64;
                let mut rho = s.mass(r)?.max(0.0).powf(1.0 / n);
                if c > 0.0 {
                    rho = rho.max(c.powf(1.0 / n) * r);
                }
                let power = (self.n - 1) as i32;
                (r / rho).powi(power) * f.eval(r)
            }
        })
    }

    /// Smallest radius at which `ρ̇` may be evaluated.
    pub fn min_radius(&self) -> f64 {
        match &self.repr {
            Repr::Solved(s) if s.density.lower_bound() <= 0.0 => s.r_min.max(self.domain.0),
            _ => self.domain.0,
        }
    }
}

/// The radial stretching `u(x) = ρ(|x|) x/|x|`.
#[derive(Debug, Clone)]
pub struct StretchMap {
    pub profile: RadialProfile,
}

impl StretchMap {
    pub fn new(profile: RadialProfile) -> Self {
        Self { profile }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.profile.dim() {
            return Err(Error::DimensionMismatch(x.len(), self.profile.dim()));
        }
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r == 0.0 {
            return Ok(vec![0.0; x.len()]);
        }
        let scale = self.profile.rho(r)? / r;
        Ok(x.iter().map(|v| v * scale).collect())
    }
}

/// Options for [`solve_radial_with`].
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub r_min: f64,
    /// Grid size for the nonnegativity spot check.
    pub check_samples: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            r_min: DEFAULT_R_MIN,
            check_samples: 1024,
        }
    }
}

/// Radial solution of `det Du = f`: `ρ(r) = (∫_0^r n f(s) s^{n-1} ds)^{1/n}`.
pub fn solve_radial<F>(f: &F, cfg: &QuadratureConfig) -> Result<RadialProfile>
where
    F: RadialFunction + Clone + 'static,
{
    solve_radial_with(Arc::new(f.clone()), cfg, SolveOptions::default())
}

pub fn solve_radial_with(
    f: Arc<dyn RadialFunction>,
    cfg: &QuadratureConfig,
    opts: SolveOptions,
) -> Result<RadialProfile> {
    cfg.validate()?;
    let n = f.dim();
    check_dim(n)?;
    let singular = f.singular_radii();
    let breaks = f.breakpoints();
    for i in 1..=opts.check_samples {
        let r = i as f64 / opts.check_samples as f64;
        if singular.contains(&r) {
            continue;
        }
        let v = f.eval(r);
        if v < 0.0 || v.is_nan() {
            return Err(Error::InvalidDensity(format!("f({r}) = {v} is negative")));
        }
    }

    let mut knots: Vec<f64> = (0..=PROFILE_KNOTS).map(|i| i as f64 / PROFILE_KNOTS as f64).collect();
    knots.extend(breaks.iter().chain(&singular).filter(|&&x| x > 0.0 && x < 1.0));
    knots.sort_by(f64::total_cmp);
    knots.dedup();

    let power = (n - 1) as i32;
    let integrand = |s: f64| f.eval(s) * s.powi(power);
    let mut cumulative = Vec::with_capacity(knots.len());
    let mut acc = 0.0;
    cumulative.push(0.0);
    for w in knots.windows(2) {
        let local = QuadratureConfig {
            abs_tol: (cfg.abs_tol * w[1].powi(n as i32)).max(1e-300),
            ..*cfg
        };
        let piece = integrate_split(&integrand, w[0], w[1], &breaks, &singular, &local)?;
        acc += n as f64 * piece.value;
        cumulative.push(acc);
    }
    if !acc.is_finite() {
        return Err(Error::InvalidDensity("total mass is not finite".into()));
    }

    Ok(RadialProfile {
        n,
        domain: (0.0, 1.0),
        repr: Repr::Solved(Arc::new(Solved {
            density: f,
            knots,
            cumulative,
            breaks,
            singular,
            cfg: *cfg,
            r_min: opts.r_min,
        })),
    })
}

/// `Ju = ρ̇ ρ^{n-1} / r^{n-1}`.
pub fn jacobian(p: &RadialProfile, r: f64) -> Result<f64> {
    let rho_dot = p.rho_dot(r)?;
    let power = (p.dim() - 1) as i32;
    Ok(rho_dot * (p.rho(r)? / r).powi(power))
}

/// Operator norm of `Du`: the larger of `|ρ̇|` (radial) and `ρ/r`
/// (tangential, multiplicity `n - 1`).
pub fn du_operator_norm(p: &RadialProfile, r: f64) -> Result<f64> {
    let rho_dot = p.rho_dot(r)?;
    Ok(rho_dot.abs().max(p.rho(r)? / r))
}

/// `|∂_r u| = |ρ̇|`.
pub fn radial_derivative_norm(p: &RadialProfile, r: f64) -> Result<f64> {
    Ok(p.rho_dot(r)?.abs())
}

/// `∫_a^b (|ρ̇|^p + (ρ/r)^p) r^{n-1} dr`.
///
/// For profiles of densities without a positive lower bound the lower limit
/// is raised to the profile's minimum radius.
pub fn sobolev_energy(p: &RadialProfile, exponent: f64, interval: (f64, f64), cfg: &QuadratureConfig) -> Result<f64> {
    let (a, b) = interval;
    if !(exponent >= 1.0) {
        return Err(Error::InvalidInput(format!("energy exponent must be >= 1, got {exponent}")));
    }
    let (lo, hi) = p.domain();
    if !(a >= lo && b <= hi && a < b) {
        return Err(Error::InvalidInput(format!(
            "energy interval [{a}, {b}] must be a proper subinterval of [{lo}, {hi}]"
        )));
    }
    let a = a.max(p.min_radius());
    let power = (p.dim() - 1) as i32;
    let integrand = |r: f64| match (p.rho_dot(r), p.rho(r)) {
        (Ok(d), Ok(rho)) => (d.abs().powf(exponent) + (rho / r).powf(exponent)) * r.powi(power),
        _ => f64::NAN,
    };
    let (breaks, singular) = p.breakpoints();
    match integrate_split(&integrand, a, b, &breaks, &singular, cfg) {
        Ok(e) if e.value.is_finite() && e.value < 1e300 => Ok(e.value),
        Ok(e) => Err(Error::InfiniteEnergy { estimate: e.value }),
        Err(Error::Divergent { estimate, .. }) => Err(Error::InfiniteEnergy { estimate }),
        Err(e) => Err(e),
    }
}

/// `ω_n (ρ(b)^n - ρ(a)^n)`, the volume of `u(A(a, b))`.
pub fn image_volume(p: &RadialProfile, annulus: (f64, f64)) -> Result<f64> {
    let (a, b) = annulus;
    if !(a < b) {
        return Err(Error::InvalidInput(format!("annulus [{a}, {b}] is empty")));
    }
    let n = p.dim() as i32;
    Ok(unit_ball_volume(p.dim()) * (p.rho(b)?.powi(n) - p.rho(a)?.powi(n)))
}
