//! Discrete competitors on the annulus `A(R, 1)` and the quasiminimality
//! inequality chain for the perturbation family.
//!
//! A competitor `v` is sampled on a polar grid: directions `θ_i` on the unit
//! sphere times uniform radii `r_j ∈ [R, 1]`. The checker compares the radial
//! `q`-energy of the annulus solution `u` with the discrete radial `q`-energy
//! of `v`, and reports every intermediate inequality of the argument that
//! bounds the former by a constant times the latter: the Hölder step, the
//! split of the directions into short rays `Θ₁` (radial variation at most `λ`)
//! and long rays `Θ₂`, the Markov bound on `Θ₂`, and the first-moment
//! inequality. Image volumes are checked by rasterizing the image of the grid.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perturbation::{annulus_energy, annulus_profile, PerturbationParams};
use crate::radial::{sphere_area, unit_ball_volume};

/// Smallest number of radii per ray.
pub const MIN_RADII: usize = 64;

/// Default polar grid size (directions × radii).
pub const DEFAULT_GRID: (usize, usize) = (256, 256);

/// Default relative Jacobian residual above which a competitor is inexact.
pub const DEFAULT_JACOBIAN_GATE: f64 = 1e-2;

/// Largest number of cells of the target-space raster.
pub const MAX_RASTER_CELLS: usize = 1 << 24;

const BOUNDARY_TOL: f64 = 1e-9;

/// `2^{n-1} (4n²)^q`: with this constant the radial energy of the annulus
/// solution is at most `C` times the radial energy of any competitor whose
/// radial variation obeys the first-moment inequality.
pub fn quasimin_constant(n: usize, q: f64) -> f64 {
    let n = n as f64;
    2f64.powf(n - 1.0) * (4.0 * n * n).powf(q)
}

/// Boundary condition on the outer sphere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    /// `v(θ) = θ` for `|θ| = 1`.
    #[default]
    Identity,
    /// Only `|v(θ)| = 1` for `|θ| = 1`.
    UnitSphere,
}

/// `count` directions on the unit sphere of `R^n`: uniform angles for `n = 2`,
/// a Fibonacci lattice for `n = 3`, scrambled Halton points pushed through the
/// Box-Muller map for `n > 3`.
pub fn sphere_directions(n: usize, count: usize) -> Vec<Vec<f64>> {
    use std::f64::consts::PI;
    match n {
        2 => (0..count)
            .map(|i| {
                let phi = 2.0 * PI * i as f64 / count as f64;
                vec![phi.cos(), phi.sin()]
            })
            .collect(),
        3 => {
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|i| {
                    let z = 1.0 - (2.0 * i as f64 + 1.0) / count as f64;
                    let s = (1.0 - z * z).sqrt();
                    let a = golden * i as f64;
                    vec![s * a.cos(), s * a.sin(), z]
                })
                .collect()
        }
        _ => {
            const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];
            let dims = n.div_ceil(2) * 2;
            (0..count)
                .map(|i| {
                    let u: Vec<f64> = (0..dims)
                        .map(|d| radical_inverse(i as u64 + 1, PRIMES[d % PRIMES.len()]))
                        .collect();
                    let mut x: Vec<f64> = u
                        .chunks(2)
                        .flat_map(|c| {
                            let rad = (-2.0 * c[0].ln()).sqrt();
                            let ang = 2.0 * PI * c[1];
                            [rad * ang.cos(), rad * ang.sin()]
                        })
                        .take(n)
                        .collect();
                    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    x.iter_mut().for_each(|v| *v /= norm);
                    x
                })
                .collect()
        }
    }
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * inv;
        i /= base;
        inv /= base as f64;
    }
    out
}

/// `count` uniform radii from `radius` to 1, endpoints exact.
pub fn uniform_radii(radius: f64, count: usize) -> Vec<f64> {
    let mut r: Vec<f64> = (0..count)
        .map(|j| radius + (1.0 - radius) * j as f64 / (count - 1) as f64)
        .collect();
    r[0] = radius;
    r[count - 1] = 1.0;
    r
}

/// A map sampled on the polar grid of the annulus `A(R, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnulusMap {
    n: usize,
    radius: f64,
    thetas: Vec<Vec<f64>>,
    radii: Vec<f64>,
    /// `values[(i * radii.len() + j) * n + k]`: coordinate `k` of `v(r_j θ_i)`.
    values: Vec<f64>,
    boundary: BoundaryMode,
}

/// JSON form: `values[i][j]` is the image of `r_j θ_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnulusMapRecord {
    pub n: usize,
    #[serde(rename = "R")]
    pub radius: f64,
    pub thetas: Vec<Vec<f64>>,
    pub radii: Vec<f64>,
    pub values: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub boundary: BoundaryMode,
}

impl AnnulusMap {
    /// Samples `v(θ, r)` on the grid, rays in parallel.
    pub fn from_fn<V>(
        n: usize,
        radius: f64,
        thetas: Vec<Vec<f64>>,
        radii: Vec<f64>,
        boundary: BoundaryMode,
        v: V,
    ) -> Result<Self>
    where
        V: Fn(&[f64], f64) -> Vec<f64> + Sync,
    {
        check_grid(n, radius, &thetas, &radii)?;
        let values: Vec<f64> = thetas
            .par_iter()
            .flat_map_iter(|theta| radii.iter().flat_map(|&r| v(theta, r)).collect::<Vec<_>>())
            .collect();
        if values.len() != thetas.len() * radii.len() * n {
            return Err(Error::DimensionMismatch(values.len(), thetas.len() * radii.len() * n));
        }
        Ok(Self {
            n,
            radius,
            thetas,
            radii,
            values,
            boundary,
        })
    }

    pub fn from_record(rec: &AnnulusMapRecord) -> Result<Self> {
        check_grid(rec.n, rec.radius, &rec.thetas, &rec.radii)?;
        if rec.values.len() != rec.thetas.len() {
            return Err(Error::DimensionMismatch(rec.values.len(), rec.thetas.len()));
        }
        let mut values = Vec::with_capacity(rec.thetas.len() * rec.radii.len() * rec.n);
        for ray in &rec.values {
            if ray.len() != rec.radii.len() {
                return Err(Error::DimensionMismatch(ray.len(), rec.radii.len()));
            }
            for point in ray {
                if point.len() != rec.n {
                    return Err(Error::DimensionMismatch(point.len(), rec.n));
                }
                values.extend(point);
            }
        }
        Ok(Self {
            n: rec.n,
            radius: rec.radius,
            thetas: rec.thetas.clone(),
            radii: rec.radii.clone(),
            values,
            boundary: rec.boundary,
        })
    }

    pub fn to_record(&self) -> AnnulusMapRecord {
        let values = (0..self.thetas.len())
            .map(|i| (0..self.radii.len()).map(|j| self.point(i, j).to_vec()).collect())
            .collect();
        AnnulusMapRecord {
            n: self.n,
            radius: self.radius,
            thetas: self.thetas.clone(),
            radii: self.radii.clone(),
            values,
            boundary: self.boundary,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }
    pub fn radius(&self) -> f64 {
        self.radius
    }
    pub fn thetas(&self) -> &[Vec<f64>] {
        &self.thetas
    }
    pub fn radii(&self) -> &[f64] {
        &self.radii
    }
    pub fn boundary_mode(&self) -> BoundaryMode {
        self.boundary
    }

    pub fn point(&self, i: usize, j: usize) -> &[f64] {
        let k = (i * self.radii.len() + j) * self.n;
        &self.values[k..k + self.n]
    }

    fn ray(&self, i: usize) -> &[f64] {
        let m = self.radii.len() * self.n;
        &self.values[i * m..(i + 1) * m]
    }

    fn dr(&self) -> f64 {
        (1.0 - self.radius) / (self.radii.len() - 1) as f64
    }

    /// Per direction: whether the outer-sphere value satisfies the boundary
    /// condition of the map's mode.
    pub fn boundary_flags(&self) -> Vec<bool> {
        let last = self.radii.len() - 1;
        (0..self.thetas.len())
            .map(|i| {
                let v = self.point(i, last);
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                let on_sphere = (norm - 1.0).abs() <= BOUNDARY_TOL;
                match self.boundary {
                    BoundaryMode::UnitSphere => on_sphere,
                    BoundaryMode::Identity => v.iter().zip(&self.thetas[i]).all(|(a, b)| (a - b).abs() <= BOUNDARY_TOL),
                }
            })
            .collect()
    }

    /// Whether every sample of ray `i` is finite.
    fn admissible(&self, i: usize) -> bool {
        self.ray(i).iter().all(|v| v.is_finite())
    }

    /// `∂_r v` along ray `i` by second-order differences: centered inside,
    /// one-sided at both ends.
    fn radial_derivative(&self, i: usize) -> Vec<f64> {
        let (n, m, h) = (self.n, self.radii.len(), self.dr());
        let ray = self.ray(i);
        let at = |j: usize, k: usize| ray[j * n + k];
        let mut out = vec![0.0; m * n];
        for k in 0..n {
            out[k] = (-3.0 * at(0, k) + 4.0 * at(1, k) - at(2, k)) / (2.0 * h);
            out[(m - 1) * n + k] = (3.0 * at(m - 1, k) - 4.0 * at(m - 2, k) + at(m - 3, k)) / (2.0 * h);
            for j in 1..m - 1 {
                out[j * n + k] = (at(j + 1, k) - at(j - 1, k)) / (2.0 * h);
            }
        }
        out
    }

    /// `|∂_r v|` at every node of ray `i`.
    fn radial_speed(&self, i: usize) -> Vec<f64> {
        self.radial_derivative(i)
            .chunks(self.n)
            .map(|d| d.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect()
    }

    /// Discrete Jacobian `(∂_r v × ∂_φ v)/r` for planar maps on uniform
    /// angles; `∂_φ` by periodic centered differences.
    pub fn discrete_jacobian(&self) -> Result<Vec<f64>> {
        if self.n != 2 {
            return Err(Error::InvalidInput("the discrete Jacobian is implemented for n = 2".into()));
        }
        let (nt, m) = (self.thetas.len(), self.radii.len());
        let dphi = 2.0 * std::f64::consts::PI / nt as f64;
        let rows: Vec<Vec<f64>> = (0..nt)
            .into_par_iter()
            .map(|i| {
                let dr = self.radial_derivative(i);
                let (prev, next) = ((i + nt - 1) % nt, (i + 1) % nt);
                (0..m)
                    .map(|j| {
                        let a = self.point(next, j);
                        let b = self.point(prev, j);
                        let dphi_v = [(a[0] - b[0]) / (2.0 * dphi), (a[1] - b[1]) / (2.0 * dphi)];
                        (dr[2 * j] * dphi_v[1] - dr[2 * j + 1] * dphi_v[0]) / self.radii[j]
                    })
                    .collect()
            })
            .collect();
        Ok(rows.concat())
    }
}

fn check_grid(n: usize, radius: f64, thetas: &[Vec<f64>], radii: &[f64]) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("dimension must be >= 2, got {n}")));
    }
    if !(radius > 0.0 && radius < 1.0) {
        return Err(Error::InvalidInput(format!("inner radius must lie in (0, 1), got {radius}")));
    }
    if thetas.is_empty() {
        return Err(Error::NoAdmissibleRays);
    }
    for t in thetas {
        if t.len() != n {
            return Err(Error::DimensionMismatch(t.len(), n));
        }
        let norm = t.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("direction {t:?} is not a unit vector")));
        }
    }
    if n == 2 {
        let count = thetas.len();
        let expected = sphere_directions(2, count);
        if thetas.iter().zip(&expected).any(|(a, b)| (a[0] - b[0]).abs() + (a[1] - b[1]).abs() > 1e-9) {
            return Err(Error::InvalidInput("planar directions must be uniform angles 2πi/N".into()));
        }
    }
    if radii.len() < MIN_RADII {
        return Err(Error::InvalidInput(format!(
            "need at least {MIN_RADII} radii per ray, got {}",
            radii.len()
        )));
    }
    let h = (1.0 - radius) / (radii.len() - 1) as f64;
    let uniform = radii
        .iter()
        .enumerate()
        .all(|(j, r)| (r - (radius + h * j as f64)).abs() <= 1e-9);
    if !uniform || radii[0] != radius || radii[radii.len() - 1] != 1.0 {
        return Err(Error::InvalidInput("radii must be uniform from R to 1".into()));
    }
    Ok(())
}

/// The annulus solution `v(rθ) = ρ(r) θ`.
pub fn radial_competitor(params: &PerturbationParams, grid: (usize, usize)) -> Result<AnnulusMap> {
    let profile = annulus_profile(params);
    let n = params.n();
    AnnulusMap::from_fn(
        n,
        params.radius(),
        sphere_directions(n, grid.0),
        uniform_radii(params.radius(), grid.1),
        BoundaryMode::Identity,
        |theta, r| {
            let rho = profile.rho(r).unwrap_or(f64::NAN);
            theta.iter().map(|t| rho * t).collect()
        },
    )
}

/// Twist angle `h(r)` of a planar competitor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TwistProfile {
    /// `Σ_k c_k (1 - r)^{k+1}`.
    Polynomial { coefficients: Vec<f64> },
    /// `a · sin(2π m (1 - r)/(1 - R))`.
    Sine {
        amplitude: f64,
        cycles: f64,
        inner_radius: f64,
    },
    /// `h₀(r) + angle`: a rigid rotation on top of another twist. Violates
    /// identity boundary values unless `angle = 0`.
    Rotated { inner: Box<TwistProfile>, angle: f64 },
}

impl TwistProfile {
    pub fn zero() -> Self {
        Self::Polynomial { coefficients: vec![] }
    }

    /// `h(r) = 1 - r`.
    pub fn linear() -> Self {
        Self::Polynomial {
            coefficients: vec![1.0],
        }
    }

    pub fn h(&self, r: f64) -> f64 {
        match self {
            Self::Polynomial { coefficients } => {
                let s = 1.0 - r;
                coefficients.iter().rev().fold(0.0, |acc, c| (acc + c) * s)
            }
            Self::Sine {
                amplitude,
                cycles,
                inner_radius,
            } => amplitude * (2.0 * std::f64::consts::PI * cycles * (1.0 - r) / (1.0 - inner_radius)).sin(),
            Self::Rotated { inner, angle } => inner.h(r) + angle,
        }
    }

    pub fn h_prime(&self, r: f64) -> f64 {
        match self {
            Self::Polynomial { coefficients } => {
                let s = 1.0 - r;
                -coefficients
                    .iter()
                    .enumerate()
                    .map(|(k, c)| (k + 1) as f64 * c * s.powi(k as i32))
                    .sum::<f64>()
            }
            Self::Sine {
                amplitude,
                cycles,
                inner_radius,
            } => {
                let w = 2.0 * std::f64::consts::PI * cycles / (1.0 - inner_radius);
                -amplitude * w * (w * (1.0 - r)).cos()
            }
            Self::Rotated { inner, .. } => inner.h_prime(r),
        }
    }

    /// Same profile with `h'` multiplied by `t`.
    pub fn scaled(&self, t: f64) -> Self {
        match self {
            Self::Polynomial { coefficients } => Self::Polynomial {
                coefficients: coefficients.iter().map(|c| t * c).collect(),
            },
            Self::Sine {
                amplitude,
                cycles,
                inner_radius,
            } => Self::Sine {
                amplitude: t * amplitude,
                cycles: *cycles,
                inner_radius: *inner_radius,
            },
            Self::Rotated { inner, angle } => Self::Rotated {
                inner: Box::new(inner.scaled(t)),
                angle: *angle,
            },
        }
    }

    /// A random twist with `h(1) = 0`: a polynomial of degree 1 to 3 or a
    /// sine with 1 or 2 cycles and amplitude below 0.3, mild enough for the
    /// default grid to resolve.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, inner_radius: f64) -> Self {
        if rng.gen_bool(0.5) {
            let degree = rng.gen_range(1..=3);
            let scale = 1.0 / (1.0 - inner_radius);
            Self::Polynomial {
                coefficients: (0..degree)
                    .map(|k| rng.gen_range(-1.0..1.0) * scale.powi(k))
                    .collect(),
            }
        } else {
            Self::Sine {
                amplitude: rng.gen_range(-0.3..0.3),
                cycles: rng.gen_range(1..=2) as f64,
                inner_radius,
            }
        }
    }
}

/// `v(r, φ) = ρ(r) e^{i(φ + h(r))}` for the annulus profile `ρ`. Rotating
/// each circle leaves the Jacobian `Mρ/r` unchanged.
pub fn twist_competitor(
    params: &PerturbationParams,
    h: &TwistProfile,
    grid: (usize, usize),
    boundary: BoundaryMode,
) -> Result<AnnulusMap> {
    if params.n() != 2 {
        return Err(Error::InvalidInput("twist competitors are planar (n = 2)".into()));
    }
    let h1 = h.h(1.0);
    if boundary == BoundaryMode::Identity && h1.abs() > 1e-14 {
        return Err(Error::BoundaryViolation(format!("h(1) = {h1}, identity boundary values need 0")));
    }
    let profile = annulus_profile(params);
    AnnulusMap::from_fn(
        2,
        params.radius(),
        sphere_directions(2, grid.0),
        uniform_radii(params.radius(), grid.1),
        boundary,
        |theta, r| {
            let rho = profile.rho(r).unwrap_or(f64::NAN);
            let (s, c) = h.h(r).sin_cos();
            vec![rho * (c * theta[0] - s * theta[1]), rho * (s * theta[0] + c * theta[1])]
        },
    )
}

/// Trapezoid rule on a uniform grid of spacing `h`.
fn trapezoid(values: &[f64], h: f64) -> f64 {
    let k = values.len();
    h * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[k - 1]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RayVariation {
    /// `∫_R^1 |∂_r v(sθ_i)| ds`, `None` for inadmissible rays.
    pub per_ray: Vec<Option<f64>>,
    pub admissible: usize,
}

/// Radial variation of every ray; rays with non-finite samples are excluded.
pub fn ray_variation(v: &AnnulusMap) -> Result<RayVariation> {
    let h = v.dr();
    let per_ray: Vec<Option<f64>> = (0..v.thetas.len())
        .into_par_iter()
        .map(|i| v.admissible(i).then(|| trapezoid(&v.radial_speed(i), h)))
        .collect();
    let admissible = per_ray.iter().flatten().count();
    if admissible == 0 {
        return Err(Error::NoAdmissibleRays);
    }
    Ok(RayVariation { per_ray, admissible })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaPartition {
    pub lambda: f64,
    /// Rays with variation at most `λ`.
    pub theta1: Vec<usize>,
    pub theta2: Vec<usize>,
    pub excluded: Vec<usize>,
    pub per_ray_variation: Vec<Option<f64>>,
}

/// Splits the admissible rays by `λ = (1 - γ^n R^n)/(2n)`.
pub fn partition(v: &AnnulusMap, params: &PerturbationParams) -> Result<ThetaPartition> {
    let var = ray_variation(v)?;
    let lambda = params.lambda();
    let (mut theta1, mut theta2, mut excluded) = (Vec::new(), Vec::new(), Vec::new());
    for (i, x) in var.per_ray.iter().enumerate() {
        match x {
            None => excluded.push(i),
            Some(x) if *x <= lambda => theta1.push(i),
            Some(_) => theta2.push(i),
        }
    }
    Ok(ThetaPartition {
        lambda,
        theta1,
        theta2,
        excluded,
        per_ray_variation: var.per_ray,
    })
}

/// Two sides of an inequality `lhs ≤ rhs` (or `≥`, as named) and its margin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inequality {
    pub lhs: f64,
    pub rhs: f64,
    /// Nonnegative iff the inequality holds.
    pub margin: f64,
    pub holds: bool,
}

impl Inequality {
    fn at_most(lhs: f64, rhs: f64) -> Self {
        Self {
            lhs,
            rhs,
            margin: rhs - lhs,
            holds: lhs <= rhs,
        }
    }

    fn at_least(lhs: f64, rhs: f64) -> Self {
        Self {
            lhs,
            rhs,
            margin: lhs - rhs,
            holds: lhs >= rhs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompetitorStatus {
    Exact,
    InexactCompetitor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasiminReport {
    pub q: f64,
    /// `∫_{A(R,1)} |∂_r u|^q dx` for the annulus solution `u`.
    pub lhs: f64,
    /// Discrete `∫_{A(R,1)} |∂_r v|^q dx`.
    pub rhs: f64,
    pub energy_ratio: f64,
    /// `2^{n-1} ⨍⨍ |∂_r v|^q r^{n-1} ≥ (⨍⨍ |∂_r v|)^q`.
    pub holder_step: Inequality,
    /// `H^{n-1}(Θ₂) ≤ λ^{-1} ∫∫ |∂_r v|`.
    pub markov_step: Inequality,
    /// `∫∫ |∂_r v| ≥ (1/(4n²)) ∫∫ |∂_r u|`.
    pub first_moment: Inequality,
    /// `lhs ≤ C(n, q) · rhs`.
    pub chain_bound: Inequality,
    pub constant: f64,
    pub partition_sizes: [usize; 3],
    pub jacobian_residual: Option<f64>,
    pub jacobian_gate: f64,
    pub status: CompetitorStatus,
    pub boundary_ok: bool,
    pub note: String,
}

const INTERIOR_NOTE: &str = "checked on the annulus only; admissibility of the competitor inside B_R is not decidable at grid scale";

/// Relative deviation of the discrete Jacobian from the outer branch of the
/// perturbed datum; `None` when no exact discrete Jacobian is available.
pub fn jacobian_residual(v: &AnnulusMap, params: &PerturbationParams) -> Result<Option<f64>> {
    if v.dim() != 2 {
        return Ok(None);
    }
    let jac = v.discrete_jacobian()?;
    let m = v.radii.len();
    let worst = jac
        .iter()
        .enumerate()
        .map(|(k, j)| {
            let expected = params.outer_branch(v.radii[k % m]);
            (j - expected).abs() / expected
        })
        .fold(0.0, f64::max);
    Ok(Some(worst))
}

/// Evaluates both sides of the quasiminimality inequality for `v` and every
/// step of the chain between them.
pub fn quasimin_ratio(v: &AnnulusMap, params: &PerturbationParams, q: f64, gate: f64) -> Result<QuasiminReport> {
    if v.dim() != params.n() {
        return Err(Error::DimensionMismatch(v.dim(), params.n()));
    }
    if (v.radius - params.radius()).abs() > 1e-15 {
        return Err(Error::InvalidInput("map and parameters use different inner radii".into()));
    }
    let n = v.n;
    let part = partition(v, params)?;
    let h = v.dr();
    let weight = sphere_area(n) / v.thetas.len() as f64;
    let power = (n - 1) as i32;
    let admissible: Vec<usize> = part.theta1.iter().chain(&part.theta2).copied().collect();

    // per-ray ∫|∂_r v|^q r^{n-1} dr and ∫|∂_r v|^q dr
    let per_ray: Vec<(f64, f64)> = admissible
        .par_iter()
        .map(|&i| {
            let speed = v.radial_speed(i);
            let weighted: Vec<f64> = speed
                .iter()
                .zip(&v.radii)
                .map(|(s, r)| s.powf(q) * r.powi(power))
                .collect();
            let plain: Vec<f64> = speed.iter().map(|s| s.powf(q)).collect();
            (trapezoid(&weighted, h), trapezoid(&plain, h))
        })
        .collect();
    let rhs = weight * per_ray.iter().map(|p| p.0).sum::<f64>();
    let lhs = annulus_energy(params)?.exact;

    let sphere = weight * admissible.len() as f64;
    let measure = sphere * (1.0 - v.radius);
    let first_v: f64 = weight * admissible.iter().map(|&i| part.per_ray_variation[i].unwrap_or(0.0)).sum::<f64>();
    let first_u = sphere_area(n) * (1.0 - v.radius) * params.m();
    let holder = Inequality::at_least(
        2f64.powi(power) * rhs / measure,
        (first_v / measure).powf(q),
    );
    let markov = Inequality::at_most(weight * part.theta2.len() as f64, first_v / part.lambda);
    let first_moment = Inequality::at_least(first_v, first_u / (4 * n * n) as f64);
    let constant = quasimin_constant(n, q);
    let chain_bound = Inequality::at_most(lhs, constant * rhs);

    let residual = jacobian_residual(v, params)?;
    let status = match residual {
        Some(r) if r <= gate => CompetitorStatus::Exact,
        _ => CompetitorStatus::InexactCompetitor,
    };
    Ok(QuasiminReport {
        q,
        lhs,
        rhs,
        energy_ratio: rhs / lhs,
        holder_step: holder,
        markov_step: markov,
        first_moment,
        chain_bound,
        constant,
        partition_sizes: [part.theta1.len(), part.theta2.len(), part.excluded.len()],
        jacobian_residual: residual,
        jacobian_gate: gate,
        status,
        boundary_ok: v.boundary_flags().iter().all(|b| *b),
        note: INTERIOR_NOTE.into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeVolume {
    /// Binned volume of the image of the tube.
    pub image_volume: f64,
    /// `∫_tube f_{γ,R} dx`.
    pub source_mass: f64,
    pub relative_error: f64,
    /// Binned volume at twice the raster resolution.
    pub refined_volume: f64,
    pub resolution_warning: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    /// Largest distance of a `Θ₁`-ray image point from the shell `A[1-λ, 1]`.
    pub shell_deviation: f64,
    pub shell_rays_checked: usize,
    pub annulus: TubeVolume,
    pub theta1: Option<TubeVolume>,
    pub theta2: Option<TubeVolume>,
    /// `H^{n-1}(Θ₂)(1 - γ^n R^n)/n ≤ λ^{-1}(1 - γ^n R^n)/n ∫∫ |∂_r v|`.
    pub markov: Inequality,
    pub max_multiplicity: u32,
    pub raster_cells_per_axis: usize,
    pub method: String,
}

/// Volume of the image of the rays `rays` (with the cells towards the next
/// direction for planar maps), by marking raster cells whose centers are
/// covered. Returns (volume, max multiplicity).
fn binned_volume(v: &AnnulusMap, rays: &[usize], cells: usize) -> (f64, u32) {
    let side = 2.0 / cells as f64;
    let index = |x: f64| (((x + 1.0) / side).floor().max(0.0) as usize).min(cells - 1);
    if v.n == 2 {
        let nt = v.thetas.len();
        let m = v.radii.len();
        let quads: Vec<[[f64; 2]; 4]> = rays
            .iter()
            .flat_map(|&i| {
                let next = (i + 1) % nt;
                (0..m - 1).map(move |j| {
                    let p = |a: usize, b: usize| {
                        let q = v.point(a, b);
                        [q[0], q[1]]
                    };
                    [p(i, j), p(i, j + 1), p(next, j + 1), p(next, j)]
                })
            })
            .filter(|q| q.iter().flatten().all(|x| x.is_finite()))
            .collect();
        let counts: Vec<u32> = quads
            .par_chunks(4096)
            .fold(
                || vec![0u32; cells * cells],
                |mut acc, chunk| {
                    for quad in chunk {
                        rasterize_quad(quad, cells, side, &mut acc);
                    }
                    acc
                },
            )
            .reduce(
                || vec![0u32; cells * cells],
                |mut a, b| {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                    a
                },
            );
        let occupied = counts.iter().filter(|c| **c > 0).count();
        let max = counts.iter().copied().max().unwrap_or(0);
        (occupied as f64 * side * side, max)
    } else {
        let mut counts = std::collections::BTreeMap::<Vec<usize>, u32>::new();
        for &i in rays {
            for j in 0..v.radii.len() {
                let p = v.point(i, j);
                if p.iter().all(|x| x.is_finite()) {
                    *counts.entry(p.iter().map(|x| index(*x)).collect()).or_default() += 1;
                }
            }
        }
        let max = counts.values().copied().max().unwrap_or(0);
        (counts.len() as f64 * side.powi(v.n as i32), max)
    }
}

/// Adds one to every cell whose center lies in the quadrilateral. The quad is
/// split into two triangles sharing its first diagonal; a center on the shared
/// edge is counted once.
fn rasterize_quad(q: &[[f64; 2]; 4], cells: usize, side: f64, counts: &mut [u32]) {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in q {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let first = |x: f64| (((x + 1.0) / side - 0.5).ceil().max(0.0)) as usize;
    let last = |x: f64| ((((x + 1.0) / side - 0.5).floor()) as isize).min(cells as isize - 1);
    let (ix0, ix1) = (first(lo[0]), last(hi[0]));
    let (iy0, iy1) = (first(lo[1]), last(hi[1]));
    if ix1 < 0 || iy1 < 0 {
        return;
    }
    for iy in iy0..=iy1 as usize {
        let y = -1.0 + (iy as f64 + 0.5) * side;
        for ix in ix0..=ix1 as usize {
            let x = -1.0 + (ix as f64 + 0.5) * side;
            if in_triangle([x, y], q[0], q[1], q[2], true) || in_triangle([x, y], q[0], q[2], q[3], false) {
                counts[iy * cells + ix] += 1;
            }
        }
    }
}

/// Point-in-triangle by edge signs, either orientation. The edge `a-c` is
/// closed only when `closed_ac` is set.
fn in_triangle(p: [f64; 2], a: [f64; 2], b: [f64; 2], c: [f64; 2], closed_ac: bool) -> bool {
    let cross = |u: [f64; 2], v: [f64; 2], w: [f64; 2]| (v[0] - u[0]) * (w[1] - u[1]) - (v[1] - u[1]) * (w[0] - u[0]);
    let orient = cross(a, b, c);
    if orient == 0.0 {
        return false;
    }
    let s = orient.signum();
    let d1 = s * cross(a, b, p);
    let d2 = s * cross(b, c, p);
    let d3 = s * cross(c, a, p);
    d1 >= 0.0 && d2 >= 0.0 && if closed_ac { d3 >= 0.0 } else { d3 > 0.0 }
}

fn raster_size(v: &AnnulusMap) -> usize {
    let per_axis = 2 * v.thetas.len().max(v.radii.len());
    let cap = (MAX_RASTER_CELLS as f64).powf(1.0 / v.n as f64).floor() as usize;
    per_axis.min(cap / 2).max(8)
}

fn tube(v: &AnnulusMap, rays: &[usize], params: &PerturbationParams, cells: usize) -> TubeVolume {
    let weight = sphere_area(v.n) / v.thetas.len() as f64;
    let mass_per_unit = (1.0 - params.inner_mass_fraction()) / params.n() as f64;
    let source_mass = weight * rays.len() as f64 * mass_per_unit;
    let (image_volume, _) = binned_volume(v, rays, cells);
    let (refined_volume, _) = binned_volume(v, rays, 2 * cells);
    TubeVolume {
        image_volume,
        source_mass,
        relative_error: (image_volume - source_mass).abs() / source_mass,
        refined_volume,
        resolution_warning: (image_volume - refined_volume).abs() > 0.1 * refined_volume,
    }
}

/// Grid-scale checks of the image bookkeeping: shell containment of the
/// short rays, image volume against source mass per tube, and the Markov
/// bound for the long rays.
pub fn image_accounting(v: &AnnulusMap, part: &ThetaPartition, params: &PerturbationParams) -> Result<ImageReport> {
    let lambda = part.lambda;
    let shell_deviation = part
        .theta1
        .iter()
        .flat_map(|&i| (0..v.radii.len()).map(move |j| (i, j)))
        .map(|(i, j)| {
            let norm = v.point(i, j).iter().map(|x| x * x).sum::<f64>().sqrt();
            (1.0 - lambda - norm).max(norm - 1.0).max(0.0)
        })
        .fold(0.0, f64::max);
    let cells = raster_size(v);
    let all: Vec<usize> = part.theta1.iter().chain(&part.theta2).copied().collect();
    let mut sorted = all.clone();
    sorted.sort_unstable();
    let annulus = tube(v, &sorted, params, cells);
    let theta1 = (!part.theta1.is_empty()).then(|| tube(v, &part.theta1, params, cells));
    let theta2 = (!part.theta2.is_empty()).then(|| tube(v, &part.theta2, params, cells));
    let (_, max_multiplicity) = binned_volume(v, &sorted, cells);

    let weight = sphere_area(v.n) / v.thetas.len() as f64;
    let first_v: f64 = weight * all.iter().map(|&i| part.per_ray_variation[i].unwrap_or(0.0)).sum::<f64>();
    let factor = (1.0 - params.inner_mass_fraction()) / params.n() as f64;
    let markov = Inequality::at_most(
        weight * part.theta2.len() as f64 * factor,
        factor * first_v / lambda,
    );
    Ok(ImageReport {
        shell_deviation,
        shell_rays_checked: part.theta1.len(),
        annulus,
        theta1,
        theta2,
        markov,
        max_multiplicity,
        raster_cells_per_axis: cells,
        method: if v.n == 2 {
            "quadrilateral rasterization, cell centers".into()
        } else {
            "sample point binning".into()
        },
    })
}

/// `π(1 - (γR)²)`-type closed form: volume of the image `A(γR, 1)` of the
/// annulus under the radial solution.
pub fn radial_image_volume(params: &PerturbationParams) -> f64 {
    unit_ball_volume(params.n()) * (1.0 - params.inner_mass_fraction())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{integrate, QuadratureConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> PerturbationParams {
        PerturbationParams::default_at(0.9).unwrap()
    }

    #[test]
    fn constant_value() {
        assert_eq!(quasimin_constant(2, 4.0), 131072.0);
    }

    #[test]
    fn directions_are_unit_vectors() {
        for n in 2..=5 {
            let d = sphere_directions(n, 100);
            assert_eq!(d.len(), 100);
            for t in &d {
                assert!((t.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        // Fibonacci points are spread: mean direction near zero
        let d = sphere_directions(3, 2000);
        let mean: Vec<f64> = (0..3).map(|k| d.iter().map(|t| t[k]).sum::<f64>() / 2000.0).collect();
        assert!(mean.iter().all(|m| m.abs() < 0.01));
    }

    #[test]
    fn radial_rays_have_constant_variation() {
        let p = params();
        let v = radial_competitor(&p, (64, 64)).unwrap();
        let var = ray_variation(&v).unwrap();
        for x in var.per_ray.iter().flatten() {
            assert!((x - 0.237_137_370_566_165_53).abs() < 1e-12);
        }
        let part = partition(&v, &p).unwrap();
        assert!(part.theta1.is_empty());
        assert_eq!(part.theta2.len(), 64);
        assert_eq!(part.lambda, p.lambda());
    }

    #[test]
    fn constant_map_has_zero_variation() {
        let p = params();
        let v = AnnulusMap::from_fn(
            2,
            0.9,
            sphere_directions(2, 16),
            uniform_radii(0.9, 64),
            BoundaryMode::Identity,
            |t, _| t.to_vec(),
        )
        .unwrap();
        let part = partition(&v, &p).unwrap();
        assert_eq!(part.theta1.len(), 16);
        assert!(part.per_ray_variation.iter().flatten().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn non_finite_rays_are_excluded() {
        let p = params();
        let v = AnnulusMap::from_fn(
            2,
            0.9,
            sphere_directions(2, 8),
            uniform_radii(0.9, 64),
            BoundaryMode::Identity,
            |t, r| if t[0] > 0.99 && r < 0.95 { vec![f64::NAN, 0.0] } else { t.to_vec() },
        )
        .unwrap();
        let part = partition(&v, &p).unwrap();
        assert_eq!(part.excluded, vec![0]);
        let none = AnnulusMap::from_fn(
            2,
            0.9,
            sphere_directions(2, 8),
            uniform_radii(0.9, 64),
            BoundaryMode::Identity,
            |_, _| vec![f64::NAN, f64::NAN],
        )
        .unwrap();
        assert_eq!(ray_variation(&none).unwrap_err(), Error::NoAdmissibleRays);
    }

    #[test]
    fn twist_variation_matches_quadrature() {
        let p = params();
        let v = twist_competitor(&p, &TwistProfile::linear(), (32, 512), BoundaryMode::Identity).unwrap();
        let m = p.m();
        let oracle = integrate(
            &|r: f64| {
                let rho = 1.0 - m * (1.0 - r);
                (m * m + rho * rho).sqrt()
            },
            0.9,
            1.0,
            &QuadratureConfig::default(),
        )
        .unwrap()
        .value;
        for x in ray_variation(&v).unwrap().per_ray.iter().flatten() {
            assert!((x - oracle).abs() < 1e-6, "{x} vs {oracle}");
        }
    }

    #[test]
    fn twist_must_vanish_on_the_boundary() {
        let p = params();
        let h = TwistProfile::Rotated {
            inner: Box::new(TwistProfile::linear()),
            angle: 0.3,
        };
        assert!(matches!(
            twist_competitor(&p, &h, (16, 64), BoundaryMode::Identity),
            Err(Error::BoundaryViolation(_))
        ));
        let v = twist_competitor(&p, &h, (16, 64), BoundaryMode::UnitSphere).unwrap();
        assert!(v.boundary_flags().iter().all(|b| *b));
    }

    #[test]
    fn radial_solution_is_its_own_competitor() {
        let p = params();
        let v = radial_competitor(&p, (128, 128)).unwrap();
        let rep = quasimin_ratio(&v, &p, 4.0, DEFAULT_JACOBIAN_GATE).unwrap();
        assert!((rep.rhs - rep.lhs).abs() < 1e-12 * rep.lhs);
        assert_eq!(rep.status, CompetitorStatus::Exact);
        assert!(rep.first_moment.holds);
        assert!((rep.first_moment.lhs / rep.first_moment.rhs - 16.0).abs() < 1e-9);
        assert!(rep.holder_step.holds && rep.markov_step.holds && rep.chain_bound.holds);
        assert!(rep.boundary_ok);
    }

    #[test]
    fn twists_only_add_energy() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..4 {
            let h = TwistProfile::random(&mut rng, 0.9);
            let v = twist_competitor(&p, &h, (64, 128), BoundaryMode::Identity).unwrap();
            let rep = quasimin_ratio(&v, &p, 4.0, DEFAULT_JACOBIAN_GATE).unwrap();
            assert!(rep.rhs >= rep.lhs * (1.0 - 1e-12), "{h:?}");
            assert!(rep.first_moment.holds);
        }
    }

    #[test]
    fn twist_energy_grows_with_the_twist_rate() {
        let p = params();
        let h = TwistProfile::linear();
        let energies: Vec<f64> = [0.0, 0.5, 1.0, 2.0]
            .iter()
            .map(|t| {
                let v = twist_competitor(&p, &h.scaled(*t), (16, 128), BoundaryMode::Identity).unwrap();
                quasimin_ratio(&v, &p, 4.0, DEFAULT_JACOBIAN_GATE).unwrap().rhs
            })
            .collect();
        assert!(energies.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn rotated_boundary_leaves_diagnostics_unchanged() {
        let p = params();
        let h = TwistProfile::Sine {
            amplitude: 0.3,
            cycles: 2.0,
            inner_radius: 0.9,
        };
        let rotated = TwistProfile::Rotated {
            inner: Box::new(h.clone()),
            angle: 0.7,
        };
        let a = twist_competitor(&p, &h, (64, 128), BoundaryMode::UnitSphere).unwrap();
        let b = twist_competitor(&p, &rotated, (64, 128), BoundaryMode::UnitSphere).unwrap();
        let ra = quasimin_ratio(&a, &p, 4.0, DEFAULT_JACOBIAN_GATE).unwrap();
        let rb = quasimin_ratio(&b, &p, 4.0, DEFAULT_JACOBIAN_GATE).unwrap();
        assert!((ra.rhs - rb.rhs).abs() < 1e-9 * ra.rhs);
        assert!((ra.first_moment.lhs - rb.first_moment.lhs).abs() < 1e-9);
        assert_eq!(ra.partition_sizes, rb.partition_sizes);
        assert!(rb.boundary_ok);
    }

    #[test]
    fn jacobian_residual_is_second_order() {
        let p = params();
        let h = TwistProfile::linear();
        let coarse = twist_competitor(&p, &h, (64, 64), BoundaryMode::Identity).unwrap();
        let fine = twist_competitor(&p, &h, (128, 127), BoundaryMode::Identity).unwrap();
        let e1 = jacobian_residual(&coarse, &p).unwrap().unwrap();
        let e2 = jacobian_residual(&fine, &p).unwrap().unwrap();
        let order = (e1 / e2).log2();
        assert!(order > 1.8 && order < 2.2, "{order}");
    }

    #[test]
    fn radial_image_volume_by_binning() {
        let p = params();
        let v = radial_competitor(&p, (128, 128)).unwrap();
        let part = partition(&v, &p).unwrap();
        let rep = image_accounting(&v, &part, &p).unwrap();
        let exact = radial_image_volume(&p);
        assert!((rep.annulus.image_volume - exact).abs() < 0.02 * exact);
        assert!(!rep.annulus.resolution_warning);
        assert_eq!(rep.shell_rays_checked, 0);
        assert_eq!(rep.shell_deviation, 0.0);
        assert!(rep.markov.holds);
    }

    #[test]
    fn damped_rays_land_in_the_shell() {
        let p = params();
        let lambda = p.lambda();
        let radial = annulus_profile(&p);
        let v = AnnulusMap::from_fn(
            2,
            0.9,
            sphere_directions(2, 64),
            uniform_radii(0.9, 64),
            BoundaryMode::Identity,
            |t, r| {
                let s = if t[1] > 1e-9 {
                    1.0 - 0.5 * lambda * (1.0 - r) / 0.1
                } else {
                    radial.rho(r).unwrap()
                };
                vec![s * t[0], s * t[1]]
            },
        )
        .unwrap();
        let part = partition(&v, &p).unwrap();
        assert_eq!(part.theta1.len(), 31);
        assert_eq!(part.theta2.len(), 33);
        let rep = image_accounting(&v, &part, &p).unwrap();
        assert!(rep.shell_deviation < 1e-12);
        assert_eq!(rep.shell_rays_checked, 31);
    }

    #[test]
    fn record_roundtrip() {
        let p = params();
        let v = radial_competitor(&p, (8, 64)).unwrap();
        let json = serde_json::to_string(&v.to_record()).unwrap();
        let back = AnnulusMap::from_record(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, v);
        let mut rec = v.to_record();
        rec.radii.pop();
        assert!(AnnulusMap::from_record(&rec).is_err());
    }

    #[test]
    fn three_dimensional_reports_are_inexact() {
        let p = PerturbationParams::new(3, 2.0, 4.0, -1.5, 0.9).unwrap();
        let v = radial_competitor(&p, (200, 64)).unwrap();
        let rep = quasimin_ratio(&v, &p, 4.0, DEFAULT_JACOBIAN_GATE).unwrap();
        assert_eq!(rep.status, CompetitorStatus::InexactCompetitor);
        assert!(rep.jacobian_residual.is_none());
        assert!(rep.first_moment.holds);
    }
}
