//! Gaussian expectations by piecewise Gauss–Legendre quadrature.
//!
//! Expectations over a standard normal variable are integrated on
//! `[-R, R]`, split at zero and at a caller-supplied breakpoint. Splitting at the kink of
//! a piecewise-smooth integrand (ReLU at zero) restores the exponential
//! convergence that a single Gauss–Hermite rule loses there.

use std::f64::consts::PI;

/// Half-width of the integration window, in standard deviations.
pub const NORMAL_CUTOFF: f64 = 10.0;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Rule with `order` nodes, computed by Newton iteration on the Legendre
    /// polynomial from Chebyshev initial guesses.
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "quadrature order must be positive");
        let n = order;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..(n + 1) / 2 {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
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
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Nodes and weights mapped to `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Quadrature for `E[f(z)]`, `z ~ N(0, 1)`.
#[derive(Debug, Clone)]
pub struct NormalQuadrature {
    rule: GaussLegendre,
}

impl NormalQuadrature {
    pub fn new(order: usize) -> Self {
        Self { rule: GaussLegendre::new(order) }
    }

    pub fn order(&self) -> usize {
        self.rule.order()
    }

    /// Nodes `(z, weight·pdf(z))` covering `[-R, R]`. The window is always
    /// split at zero and additionally at `kink` when it lies inside; each
    /// piece carries `order` nodes.
    pub fn nodes(&self, kink: Option<f64>) -> Vec<(f64, f64)> {
        let r = NORMAL_CUTOFF;
        let mut breaks = vec![-r, 0.0, r];
        if let Some(k) = kink {
            if k > -r && k < r && k.abs() > 1e-9 {
                breaks.push(k);
            }
        }
        breaks.sort_by(f64::total_cmp);
        let mut out = Vec::with_capacity((breaks.len() - 1) * self.order());
        for w in breaks.windows(2) {
            out.extend(self.rule.mapped(w[0], w[1]).map(|(z, wt)| (z, wt * normal_pdf(z))));
        }
        out
    }

    pub fn expect(&self, kink: Option<f64>, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes(kink).into_iter().map(|(z, w)| w * f(z)).sum()
    }
}
