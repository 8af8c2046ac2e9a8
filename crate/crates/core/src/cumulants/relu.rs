//! Fourth moment of ReLU features as a power series in the off-diagonal
//! correlations of the pre-activations.

use nalgebra::Matrix4;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Truncation of the six-fold moment series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesTruncation {
    /// Largest total order `ℓ+m+n+p+q+r` kept.
    pub t_max: usize,
    /// Off-diagonal correlations at or above this magnitude are rejected.
    pub offdiag_threshold: f64,
}

impl Default for SeriesTruncation {
    fn default() -> Self {
        Self { t_max: 8, offdiag_threshold: 0.6 }
    }
}

/// One-dimensional integrals `G_s` of the ReLU series.
#[derive(Debug, Clone)]
pub struct GTable {
    values: Vec<Complex64>,
}

impl GTable {
    /// Table for `s = 0..=max_s`.
    pub fn relu(max_s: usize) -> Self {
        let inv_sqrt_2pi = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        let values = (0..=max_s)
            .map(|s| match s {
                0 => Complex64::new(inv_sqrt_2pi, 0.0),
                1 => Complex64::new(0.0, -0.5),
                s if s % 2 == 1 => Complex64::new(0.0, 0.0),
                s => {
                    // s = 2k + 2: the z-integral is f^(2k)(0) = (-1)^k (2k-1)!! for
                    // f = exp(-z²/2), and (-i)^(2k+2) = (-1)^(k+1), so every even
                    // entry is negative.
                    let k = (s - 2) / 2;
                    let double_fact: f64 = (1..=k).map(|j| (2 * j - 1) as f64).product();
                    Complex64::new(-double_fact * inv_sqrt_2pi, 0.0)
                }
            })
            .collect();
        Self { values }
    }

    pub fn get(&self, s: usize) -> Complex64 {
        self.values[s]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Precomputed coefficients `A_{ℓmnpqr}` up to a total order.
#[derive(Debug, Clone)]
pub struct ReluSeries {
    t_max: usize,
    /// `(exponents, coefficient)` for every non-zero term.
    terms: Vec<([u8; 6], f64)>,
}

impl ReluSeries {
    pub fn new(t_max: usize) -> Self {
        assert!(t_max < 32, "series truncation order {t_max} is not supported");
        let g = GTable::relu(3 * t_max + 2);
        let fact: Vec<f64> = (0..=t_max)
            .scan(1.0, |acc, k| {
                if k > 0 {
                    *acc *= k as f64;
                }
                Some(*acc)
            })
            .collect();
        let mut terms = Vec::new();
        let mut e = [0usize; 6];
        loop {
            let total: usize = e.iter().sum();
            if total <= t_max {
                let [l, m, n, p, q, r] = e;
                let prod = g.get(l + m + n) * g.get(l + p + q) * g.get(m + p + r) * g.get(n + q + r);
                let scale = 1.0 / e.iter().map(|&k| fact[k]).product::<f64>();
                let sign = if total % 2 == 0 { 1.0 } else { -1.0 };
                assert!(prod.im.abs() < 1e-12, "G product has an imaginary part: {prod}");
                let c = sign * scale * prod.re;
                if c != 0.0 {
                    terms.push((e.map(|k| k as u8), c));
                }
            }
            // odometer over the simplex
            let mut i = 0;
            loop {
                if i == 6 {
                    return Self { t_max, terms };
                }
                e[i] += 1;
                if e.iter().sum::<usize>() <= t_max {
                    break;
                }
                e[i] = 0;
                i += 1;
            }
        }
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    /// Evaluate at correlations `[c12, c13, c14, c23, c24, c34]`.
    pub fn eval(&self, c: &[f64; 6]) -> f64 {
        let mut pows = [[1.0f64; 32]; 6];
        for (k, row) in pows.iter_mut().enumerate() {
            for j in 1..=self.t_max.min(31) {
                row[j] = row[j - 1] * c[k];
            }
        }
        self.terms
            .iter()
            .map(|(e, a)| a * (0..6).map(|k| pows[k][e[k] as usize]).product::<f64>())
            .sum()
    }
}

/// Off-diagonal index pairs in series order.
pub const PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

/// Correlations of a covariance block and the scale `Π √L_ii`.
pub fn correlations(l: &Matrix4<f64>) -> Result<([f64; 6], f64)> {
    let mut sd = [0.0; 4];
    for (i, s) in sd.iter_mut().enumerate() {
        let v = l[(i, i)];
        if !(v > 0.0) {
            return Err(Error::NonPositiveDiagonal { index: i, value: v });
        }
        *s = v.sqrt();
    }
    let c = PAIRS.map(|(a, b)| l[(a, b)] / (sd[a] * sd[b]));
    Ok((c, sd.iter().product()))
}

/// `⟨φ₁φ₂φ₃φ₄⟩` for ReLU by the truncated series.
///
/// Blocks with non-unit diagonal are reduced to correlations using the
/// positive homogeneity of ReLU.
pub fn relu_mu4_series(l: &Matrix4<f64>, trunc: &SeriesTruncation) -> Result<f64> {
    relu_mu4_with(&ReluSeries::new(trunc.t_max), l, trunc.offdiag_threshold)
}

/// As [`relu_mu4_series`] with precomputed coefficients.
pub fn relu_mu4_with(series: &ReluSeries, l: &Matrix4<f64>, threshold: f64) -> Result<f64> {
    let (c, scale) = correlations(l)?;
    for (k, &(a, b)) in PAIRS.iter().enumerate() {
        if c[k].abs() >= threshold {
            return Err(Error::NonConvergent { pair: (a, b), value: c[k].abs(), threshold });
        }
    }
    Ok(scale * series.eval(&c))
}
