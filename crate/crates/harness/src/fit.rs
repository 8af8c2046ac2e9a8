//! Log-log slope fits with bootstrap standard errors.

use nnsp_core::langevin::linear_fit;
use nnsp_core::rng::stream_rng;
use nnsp_core::{Error, Result};
use rand::Rng;

const BOOTSTRAP_STREAM: u64 = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// OLS standard error of the slope.
    pub ols_se: f64,
    /// Standard deviation of the slope over bootstrap resamples of the
    /// test points.
    pub boot_se: f64,
    pub x_lo: f64,
    pub x_hi: f64,
    pub points: usize,
}

impl SlopeFit {
    pub fn within(&self, target: f64, tol: f64) -> bool {
        (self.slope - target).abs() <= tol
    }
}

/// OLS of `log10 y` on `log10 x`.
pub fn loglog(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    if let Some(v) = x.iter().chain(y).find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("log-log fit needs positive finite values, got {v}")));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.log10()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.log10()).collect();
    let f = linear_fit(&lx, &ly)?;
    Ok((f.slope, f.intercept, f.slope_se))
}

/// Fit `stat(k, all points)` against `x[k]`, and resample the shared test
/// points with replacement for the standard error.
///
/// `stat(k, idx)` evaluates the statistic at grid value `k` on the test
/// points `idx`; the same resample is used at every `k` because the test
/// set is shared across the grid. Resamples with a non-positive statistic
/// are skipped.
pub fn bootstrap_loglog<F>(x: &[f64], n_points: usize, stat: F, resamples: usize, seed: u64) -> Result<SlopeFit>
where
    F: Fn(usize, &[usize]) -> f64,
{
    let all: Vec<usize> = (0..n_points).collect();
    let y: Vec<f64> = (0..x.len()).map(|k| stat(k, &all)).collect();
    let (slope, intercept, ols_se) = loglog(x, &y)?;
    let mut rng = stream_rng(seed, BOOTSTRAP_STREAM);
    let mut slopes = Vec::with_capacity(resamples);
    let mut idx = vec![0; n_points];
    for _ in 0..resamples {
        idx.iter_mut().for_each(|i| *i = rng.random_range(0..n_points));
        let yb: Vec<f64> = (0..x.len()).map(|k| stat(k, &idx)).collect();
        if let Ok((s, _, _)) = loglog(x, &yb) {
            slopes.push(s);
        }
    }
    let boot_se = if slopes.len() > 1 {
        let m = slopes.iter().sum::<f64>() / slopes.len() as f64;
        (slopes.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (slopes.len() - 1) as f64).sqrt()
    } else {
        f64::NAN
    };
    let (x_lo, x_hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    Ok(SlopeFit { slope, intercept, ols_se, boot_se, x_lo, x_hi, points: x.len() })
}

/// Mean of `v[i]` over `idx`.
pub fn mean_at(v: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| v[i]).sum::<f64>() / idx.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let x = [10.0, 20.0, 40.0, 80.0];
        let fit = bootstrap_loglog(&x, 5, |k, _| 3.0 * x[k].powf(-2.0), 50, 1).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-12);
        assert!((fit.intercept - 3f64.log10()).abs() < 1e-12);
        assert!(fit.boot_se < 1e-12);
    }

    #[test]
    fn bootstrap_spread_reflects_point_noise() {
        let x = [1.0, 10.0, 100.0];
        // Per-point values scatter around x^-1.
        let vals: Vec<Vec<f64>> =
            x.iter().map(|xv| (0..40).map(|i| (1.0 + 0.5 * ((i * 7 + (*xv as usize)) as f64).sin()) / xv).collect()).collect();
        let fit = bootstrap_loglog(&x, 40, |k, idx| mean_at(&vals[k], idx), 200, 2).unwrap();
        assert!((fit.slope + 1.0).abs() < 0.1);
        assert!(fit.boot_se > 0.0 && fit.boot_se < 0.1);
    }

    #[test]
    fn non_positive_values_are_rejected() {
        assert!(loglog(&[1.0, 2.0], &[1.0, -1.0]).is_err());
    }
}
