//! Ordinary least squares for power laws.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    /// Exponent `k` in `y ≈ A x^k`.
    pub slope: f64,
    pub slope_stderr: f64,
    /// `log A`.
    pub intercept: f64,
    pub points: usize,
}

/// Least-squares line through `(log x, log y)`. Needs at least three points,
/// all positive.
pub fn fit_power_law(x: &[f64], y: &[f64]) -> Result<PowerFit> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(Error::FitRefused { successful: x.len() });
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput("power-law fit needs positive finite data".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidInput("power-law fit needs distinct abscissae".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    Ok(PowerFit {
        slope,
        slope_stderr: (ssr / (k - 2.0) / sxx).sqrt(),
        intercept,
        points: lx.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let x = [0.1, 0.01, 0.001, 1e-4];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.5)).collect();
        let f = fit_power_law(&x, &y).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
        assert!(f.slope_stderr < 1e-12);
    }

    #[test]
    fn noisy_fit_has_positive_stderr() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y = [1.0, 2.2, 3.9, 8.5];
        let f = fit_power_law(&x, &y).unwrap();
        assert!((f.slope - 1.0).abs() < 0.1);
        assert!(f.slope_stderr > 0.0);
    }

    #[test]
    fn refuses_short_input() {
        assert_eq!(
            fit_power_law(&[0.1, 0.01], &[1.0, 2.0]),
            Err(Error::FitRefused { successful: 2 })
        );
        assert!(fit_power_law(&[0.1, 0.01, 0.0], &[1.0, 2.0, 3.0]).is_err());
    }
}
