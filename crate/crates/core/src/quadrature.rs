//! Adaptive composite Gauss-Legendre quadrature for one-dimensional radial
//! integrands.
//!
//! Smooth intervals are handled by global adaptive bisection of 15-point
//! Gauss-Legendre panels; the error of a panel is estimated by comparing the
//! single-panel rule with the sum over its two halves. Endpoints flagged as
//! singular are resolved by a graded mesh of panels whose widths halve toward
//! the endpoint; the unresolved remainder next to the endpoint is estimated by
//! accelerating the partial sums with Wynn's epsilon algorithm, which is exact
//! when the panel contributions are a sum of a few geometric sequences, as
//! they are for a power singularity plus a smooth part.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ORDER: usize = 15;

/// Panels narrower than this many ulps of their location are not split again.
const MIN_WIDTH_ULPS: f64 = 1024.0;

/// Ratio of consecutive graded contributions treated as non-decaying.
const DIVERGENCE_RATIO: f64 = 0.999;
const DIVERGENCE_RUN: usize = 6;

/// Geometric components removed by the tail acceleration.
const WYNN_ORDER: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
    /// Integrable singularities at the (left, right) endpoint.
    pub singular_endpoints: (bool, bool),
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_subdivisions: 1 << 16,
            singular_endpoints: (false, false),
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidConfig(format!("rel_tol must be > 0, got {}", self.rel_tol)));
        }
        if !(self.abs_tol > 0.0) {
            return Err(Error::InvalidConfig(format!("abs_tol must be > 0, got {}", self.abs_tol)));
        }
        if self.max_subdivisions < 1 {
            return Err(Error::InvalidConfig("max_subdivisions must be >= 1".into()));
        }
        Ok(())
    }

    /// Same tolerances with the given endpoint flags.
    pub fn with_singular(self, left: bool, right: bool) -> Self {
        Self {
            singular_endpoints: (left, right),
            ..self
        }
    }

    fn tolerance(&self, value: f64) -> f64 {
        self.abs_tol.max(self.rel_tol * value.abs())
    }
}

/// Result of a successful integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    /// Achieved error estimate.
    pub error: f64,
    /// Panels created, summed over all sub-integrations.
    pub subdivisions: usize,
}

impl Estimate {
    fn zero() -> Self {
        Self {
            value: 0.0,
            error: 0.0,
            subdivisions: 0,
        }
    }

    fn add(self, other: Estimate) -> Self {
        Self {
            value: self.value + other.value,
            error: self.error + other.error,
            subdivisions: self.subdivisions + other.subdivisions,
        }
    }
}

fn legendre_rule() -> &'static ([f64; ORDER], [f64; ORDER]) {
    static RULE: OnceLock<([f64; ORDER], [f64; ORDER])> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = ORDER;
        let mut nodes = [0.0; ORDER];
        let mut weights = [0.0; ORDER];
        for i in 0..n {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            nodes[i] = x;
            weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        (nodes, weights)
    })
}

/// P_n(x) and P_n'(x) by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

fn panel<G: Fn(f64) -> f64 + ?Sized>(g: &G, a: f64, b: f64) -> Result<f64> {
    let (nodes, weights) = legendre_rule();
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut sum = 0.0;
    for (x, w) in nodes.iter().zip(weights) {
        let r = mid + half * x;
        let v = g(r);
        if !v.is_finite() {
            return Err(Error::InvalidIntegrand { at: r, value: v });
        }
        sum += w * v;
    }
    Ok(sum * half)
}

fn min_width(a: f64, b: f64) -> f64 {
    MIN_WIDTH_ULPS * f64::EPSILON * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

struct Panel {
    a: f64,
    b: f64,
    left: f64,
    right: f64,
    error: f64,
}

impl Panel {
    fn build<G: Fn(f64) -> f64 + ?Sized>(g: &G, a: f64, b: f64, whole: f64) -> Result<Self> {
        let m = 0.5 * (a + b);
        let left = panel(g, a, m)?;
        let right = panel(g, m, b)?;
        Ok(Self {
            a,
            b,
            left,
            right,
            error: (whole - left - right).abs(),
        })
    }

    fn value(&self) -> f64 {
        self.left + self.right
    }
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error.total_cmp(&other.error) == Ordering::Equal
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Global adaptive bisection on an interval without flagged endpoints.
fn adaptive<G: Fn(f64) -> f64 + ?Sized>(
    g: &G,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
    budget: usize,
) -> Result<Estimate> {
    let tol = |v: f64| abs_tol.max(rel_tol * v.abs());
    let whole = panel(g, a, b)?;
    let first = Panel::build(g, a, b, whole)?;
    let mut value = first.value();
    let mut error = first.error;
    let mut heap = BinaryHeap::new();
    let mut stalled: Vec<Panel> = Vec::new();
    heap.push(first);
    let mut subdivisions = 1usize;

    loop {
        if error <= tol(value) {
            // resum to shed accumulated rounding in the running totals
            value = heap.iter().chain(&stalled).map(Panel::value).sum();
            error = heap.iter().chain(&stalled).map(|p| p.error).sum();
            if error <= tol(value) {
                return Ok(Estimate {
                    value,
                    error,
                    subdivisions,
                });
            }
        }
        let Some(worst) = heap.pop() else {
            return Err(Error::ToleranceNotMet {
                estimate: value,
                error,
                subdivisions,
            });
        };
        if worst.b - worst.a <= 2.0 * min_width(worst.a, worst.b) {
            stalled.push(worst);
            continue;
        }
        if subdivisions >= budget {
            return Err(Error::ToleranceNotMet {
                estimate: value,
                error,
                subdivisions,
            });
        }
        let m = 0.5 * (worst.a + worst.b);
        let l = Panel::build(g, worst.a, m, worst.left)?;
        let r = Panel::build(g, m, worst.b, worst.right)?;
        value += l.value() + r.value() - worst.value();
        error += l.error + r.error - worst.error;
        subdivisions += 2;
        heap.push(l);
        heap.push(r);
    }
}

#[derive(Clone, Copy)]
enum Side {
    Left,
    Right,
}

/// Graded refinement toward one singular endpoint (ratio 1/2).
fn graded<G: Fn(f64) -> f64 + ?Sized>(
    g: &G,
    a: f64,
    b: f64,
    side: Side,
    cfg: &QuadratureConfig,
) -> Result<Estimate> {
    let len = b - a;
    let endpoint = match side {
        Side::Left => a,
        Side::Right => b,
    };
    let at = |t: f64| match side {
        Side::Left => a + t,
        Side::Right => b - t,
    };
    let piece_abs = cfg.abs_tol / 64.0;
    let mut acc = Estimate::zero();
    let mut contributions: Vec<f64> = Vec::new();
    let mut sums: Vec<f64> = Vec::new();
    let mut totals: Vec<f64> = Vec::new();
    let mut best: Option<(f64, f64)> = None;
    let mut non_decaying = 0usize;
    let mut hi = len;
    loop {
        let lo = 0.5 * hi;
        let (pa, pb) = match side {
            Side::Left => (at(lo), at(hi)),
            Side::Right => (at(hi), at(lo)),
        };
        let exhausted = || {
            let (estimate, error) = best.unwrap_or((acc.value, f64::INFINITY));
            Error::ToleranceNotMet {
                estimate,
                error,
                subdivisions: acc.subdivisions,
            }
        };
        if pb - pa <= min_width(pa, pb) || acc.subdivisions >= cfg.max_subdivisions {
            return Err(exhausted());
        }
        let piece = match adaptive(
            g,
            pa,
            pb,
            cfg.rel_tol,
            piece_abs.max(cfg.rel_tol * acc.value.abs() / 64.0),
            cfg.max_subdivisions - acc.subdivisions,
        ) {
            Err(Error::ToleranceNotMet { .. }) => return Err(exhausted()),
            other => other?,
        };
        acc = acc.add(piece);
        contributions.push(piece.value);
        sums.push(acc.value);
        hi = lo;

        let k = contributions.len();
        if k < 3 {
            continue;
        }
        let last = contributions[k - 1];
        let prev = contributions[k - 2];
        let ratio = if prev != 0.0 { last / prev } else { 0.0 };
        if last != 0.0 && ratio >= DIVERGENCE_RATIO {
            non_decaying += 1;
            if non_decaying >= DIVERGENCE_RUN {
                return Err(Error::Divergent {
                    at: endpoint,
                    estimate: acc.value,
                });
            }
            totals.clear();
            continue;
        }
        non_decaying = 0;
        let Some(total) = wynn_limit(&sums) else {
            continue;
        };
        totals.push(total);
        let j = totals.len();
        if j < 3 {
            continue;
        }
        let spread = (total - totals[j - 2]).abs().max((total - totals[j - 3]).abs());
        let error = spread + acc.error;
        if best.is_none_or(|(_, e)| error < e) {
            best = Some((total, error));
        }
        if error <= cfg.tolerance(total) {
            return Ok(Estimate {
                value: total,
                error,
                subdivisions: acc.subdivisions,
            });
        }
    }
}

/// Limit of a sequence of partial sums by Wynn's epsilon algorithm on its
/// last `2 * WYNN_ORDER + 1` terms; removes that many geometric components.
fn wynn_limit(sums: &[f64]) -> Option<f64> {
    let width = 2 * WYNN_ORDER + 1;
    if sums.len() < width {
        return None;
    }
    let window = &sums[sums.len() - width..];
    let mut prev: Vec<f64> = vec![0.0; width + 1];
    let mut cur: Vec<f64> = window.to_vec();
    for _ in 0..2 * WYNN_ORDER {
        let mut next = Vec::with_capacity(cur.len() - 1);
        for i in 0..cur.len() - 1 {
            let d = cur[i + 1] - cur[i];
            if d == 0.0 {
                return Some(cur[cur.len() - 1]);
            }
            next.push(prev[i + 1] + 1.0 / d);
        }
        prev = cur;
        cur = next;
    }
    let v = cur[cur.len() - 1];
    v.is_finite().then_some(v)
}

/// Integrates `g` over `[a, b]`.
///
/// Integrable singularities are allowed only at endpoints flagged in
/// `cfg.singular_endpoints`. A non-finite sample at an interior node fails
/// with [`Error::InvalidIntegrand`].
pub fn integrate<G: Fn(f64) -> f64 + ?Sized>(
    g: &G,
    a: f64,
    b: f64,
    cfg: &QuadratureConfig,
) -> Result<Estimate> {
    cfg.validate()?;
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(Error::InvalidInput(format!(
            "integration interval [{a}, {b}] must be finite with a < b"
        )));
    }
    match cfg.singular_endpoints {
        (false, false) => adaptive(g, a, b, cfg.rel_tol, cfg.abs_tol, cfg.max_subdivisions),
        (true, false) => graded(g, a, b, Side::Left, cfg),
        (false, true) => graded(g, a, b, Side::Right, cfg),
        (true, true) => {
            let m = 0.5 * (a + b);
            let half = QuadratureConfig {
                abs_tol: 0.5 * cfg.abs_tol,
                ..*cfg
            };
            let l = graded(g, a, m, Side::Left, &half)?;
            let r = graded(g, m, b, Side::Right, &half)?;
            Ok(l.add(r))
        }
    }
}

/// `∫_a^b g(r) r^{n-1} dr`.
pub fn integrate_weighted<G: Fn(f64) -> f64 + ?Sized>(
    g: &G,
    a: f64,
    b: f64,
    n: usize,
    cfg: &QuadratureConfig,
) -> Result<Estimate> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("dimension must be >= 2, got {n}")));
    }
    let power = (n - 1) as i32;
    integrate(&|r: f64| g(r) * r.powi(power), a, b, cfg)
}

/// Integrates over `[a, b]` split at every break point strictly inside it.
///
/// Pieces meeting a radius listed in `singular` are flagged singular at that
/// end; the outer endpoints also keep the flags from `cfg`.
pub fn integrate_split<G: Fn(f64) -> f64 + ?Sized>(
    g: &G,
    a: f64,
    b: f64,
    breaks: &[f64],
    singular: &[f64],
    cfg: &QuadratureConfig,
) -> Result<Estimate> {
    if a == b {
        return Ok(Estimate::zero());
    }
    let mut points = vec![a];
    let mut inner: Vec<f64> = breaks
        .iter()
        .chain(singular)
        .copied()
        .filter(|&x| x > a && x < b)
        .collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup();
    points.extend(inner);
    points.push(b);

    let is_singular = |x: f64| singular.contains(&x);
    let pieces = points.len() - 1;
    let piece_cfg = QuadratureConfig {
        abs_tol: cfg.abs_tol / pieces as f64,
        ..*cfg
    };
    let mut total = Estimate::zero();
    for (i, w) in points.windows(2).enumerate() {
        let left = is_singular(w[0]) || (i == 0 && cfg.singular_endpoints.0);
        let right = is_singular(w[1]) || (i + 1 == pieces && cfg.singular_endpoints.1);
        let est = integrate(g, w[0], w[1], &piece_cfg.with_singular(left, right))?;
        total = total.add(est);
    }
    Ok(total)
}
