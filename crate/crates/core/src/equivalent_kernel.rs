//! Equivalent-Kernel predictions and their finite-width correction.
//!
//! The kernel's Mercer decomposition under the input measure is estimated
//! from `M` measure samples (Nyström). With filter factors
//! `f_i = λ_i / (λ_i + σ²/n)` the EK mean is `Σ_i f_i g_i ψ_i(x)` and the
//! discrepancy operator is `δ̃φ = φ − EK[φ]`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::NetworkSpec;
use crate::linalg::sym_eigen_desc;
use crate::rng::{stream, stream_rng};

/// Default number of measure samples.
pub const DEFAULT_SAMPLES: usize = 2048;
/// Default relative eigenvalue cut.
pub const DEFAULT_RANK_CUT: f64 = 1e-6;
/// Default number of node tuples for the four-point integrals.
pub const DEFAULT_MC_NODES: usize = 4096;

/// A kernel that can be evaluated at any pair of points.
pub trait PairKernel: Sync {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64;
}

impl PairKernel for NetworkSpec {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        self.kernel(x, y)
    }
}

impl<F: Fn(&[f64], &[f64]) -> f64 + Sync> PairKernel for F {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        self(x, y)
    }
}

/// A four-point function such as the fourth cumulant.
pub trait QuadKernel: Sync {
    fn eval4(&self, pts: [&[f64]; 4]) -> f64;
}

impl QuadKernel for crate::cumulants::PointCumulant {
    fn eval4(&self, pts: [&[f64]; 4]) -> f64 {
        self.eval(pts)
    }
}

/// Draws one point from the input measure.
pub trait MeasureSampler: Sync {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64>;
}

/// Uniform measure on the sphere of radius `√d`.
#[derive(Debug, Clone, Copy)]
pub struct SphereMeasure {
    pub d: usize,
}

impl MeasureSampler for SphereMeasure {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut v: Vec<f64> = (0..self.d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let r = (self.d as f64).sqrt();
        v.iter_mut().for_each(|a| *a *= r / norm);
        v
    }
}

/// Draw `count` points, each from its own stream, so the draw is
/// independent of scheduling.
pub fn draw_points<S: MeasureSampler + ?Sized>(sampler: &S, count: usize, seed: u64, stream_base: u64) -> Vec<Vec<f64>> {
    const CHUNK: usize = 256;
    (0..count.div_ceil(CHUNK))
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = stream_rng(seed, stream_base + c as u64);
            let len = CHUNK.min(count - c * CHUNK);
            (0..len).map(|_| sampler.sample(&mut rng)).collect::<Vec<_>>()
        })
        .collect()
}

/// Sample-based spectral decomposition of a kernel.
#[derive(Debug, Clone)]
pub struct SpectralModel<K: PairKernel> {
    kernel: K,
    samples: Vec<Vec<f64>>,
    eigenvalues: Vec<f64>,
    /// `ψ_i(x_s) = √M v_i(s)`, one column per retained mode.
    psi_samples: DMatrix<f64>,
    /// Eigenvalues dropped by the cut, including clipped negatives.
    dropped: usize,
}

/// Eigendecompose `K_M / M` on `m` measure samples and keep modes above
/// `rank_cut · λ_max`.
pub fn build_spectrum<K: PairKernel, S: MeasureSampler + ?Sized>(
    kernel: K,
    sampler: &S,
    m: usize,
    seed: u64,
    rank_cut: f64,
) -> Result<SpectralModel<K>> {
    if m < 256 {
        return Err(Error::InvalidArgument(format!("spectral sample size {m} < 256")));
    }
    let samples = draw_points(sampler, m, seed, stream::SPECTRUM);
    build_spectrum_from(kernel, samples, rank_cut)
}

/// As [`build_spectrum`] on given samples.
pub fn build_spectrum_from<K: PairKernel>(kernel: K, samples: Vec<Vec<f64>>, rank_cut: f64) -> Result<SpectralModel<K>> {
    let m = samples.len();
    if m == 0 {
        return Err(Error::InvalidArgument("no spectral samples".into()));
    }
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| (0..=i).map(|j| kernel.eval(&samples[i], &samples[j])).collect())
        .collect();
    let mut km = DMatrix::zeros(m, m);
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            km[(i, j)] = v / m as f64;
            km[(j, i)] = v / m as f64;
        }
    }
    let (vals, vecs) = sym_eigen_desc(&km);
    let lmax = vals[0];
    if !(lmax > 0.0) {
        return Err(Error::NotPsd { eigenvalue: lmax });
    }
    let lmin = vals[m - 1];
    if lmin < -1e-8 * lmax {
        return Err(Error::NotPsd { eigenvalue: lmin });
    }
    let r = vals.iter().take_while(|&&v| v > rank_cut * lmax).count();
    let scale = (m as f64).sqrt();
    let psi_samples = vecs.columns(0, r) * scale;
    Ok(SpectralModel { kernel, samples, eigenvalues: vals.iter().take(r).copied().collect(), psi_samples, dropped: m - r })
}

impl<K: PairKernel> SpectralModel<K> {
    pub fn m(&self) -> usize {
        self.samples.len()
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn kernel(&self) -> &K {
        &self.kernel
    }

    /// `ψ_i(x_s)` at the spectral samples.
    pub fn psi_samples(&self) -> &DMatrix<f64> {
        &self.psi_samples
    }

    /// `ψ_i(x) = (1/(λ_i M)) Σ_s K(x, x_s) ψ_i(x_s)` for every retained mode.
    pub fn psi(&self, x: &[f64]) -> DVector<f64> {
        let m = self.m() as f64;
        let kx = DVector::from_iterator(self.m(), self.samples.iter().map(|s| self.kernel.eval(x, s)));
        let mut out = self.psi_samples.tr_mul(&kx);
        for (i, v) in out.iter_mut().enumerate() {
            *v /= self.eigenvalues[i] * m;
        }
        out
    }

    /// Rows of `ψ_i(x)` for many points, in parallel.
    pub fn psi_many(&self, xs: &[Vec<f64>]) -> DMatrix<f64> {
        let rows: Vec<DVector<f64>> = xs.par_iter().map(|x| self.psi(x)).collect();
        DMatrix::from_fn(xs.len(), self.rank(), |i, j| rows[i][j])
    }

    /// Mercer reconstruction `Σ λ_i ψ_i(x) ψ_i(y)`.
    pub fn reconstruct(&self, x: &[f64], y: &[f64]) -> f64 {
        let (px, py) = (self.psi(x), self.psi(y));
        (0..self.rank()).map(|i| self.eigenvalues[i] * px[i] * py[i]).sum()
    }

    /// Filter factors `λ_i / (λ_i + σ²/n)`.
    pub fn filter(&self, n: f64, noise: f64) -> Vec<f64> {
        let s = noise / n;
        self.eigenvalues.iter().map(|l| l / (l + s)).collect()
    }

    /// Coefficients `g_i = (1/M) Σ_s ψ_i(x_s) g(x_s)`.
    pub fn project_values(&self, g_samples: &[f64]) -> DVector<f64> {
        let g = DVector::from_column_slice(g_samples);
        self.psi_samples.tr_mul(&g) / self.m() as f64
    }

    pub fn project<G: Fn(&[f64]) -> f64 + Sync>(&self, g: &G) -> DVector<f64> {
        let vals: Vec<f64> = self.samples.par_iter().map(|x| g(x)).collect();
        self.project_values(&vals)
    }

    /// Largest deviation of the empirical Gram matrix of retained modes
    /// from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.psi_samples.tr_mul(&self.psi_samples) / self.m() as f64;
        (g - DMatrix::identity(self.rank(), self.rank())).amax()
    }
}

/// EK predictor for one target, training-set size and noise level.
#[derive(Debug, Clone)]
pub struct EkPredictor<'a, K: PairKernel> {
    pub model: &'a SpectralModel<K>,
    pub coeffs: DVector<f64>,
    pub filter: Vec<f64>,
    pub n: f64,
    pub noise: f64,
}

impl<'a, K: PairKernel> EkPredictor<'a, K> {
    pub fn new<G: Fn(&[f64]) -> f64 + Sync>(model: &'a SpectralModel<K>, g: &G, n: f64, noise: f64) -> Self {
        Self::from_coeffs(model, model.project(g), n, noise)
    }

    pub fn from_coeffs(model: &'a SpectralModel<K>, coeffs: DVector<f64>, n: f64, noise: f64) -> Self {
        assert!(n >= 1.0, "training-set size must be at least 1");
        Self { model, coeffs, filter: model.filter(n, noise), n, noise }
    }

    /// EK mean from precomputed `ψ(x)`.
    pub fn mean_from_psi(&self, psi: &[f64]) -> f64 {
        psi.iter().zip(&self.filter).zip(self.coeffs.iter()).map(|((p, f), g)| p * f * g).sum()
    }

    pub fn mean(&self, x: &[f64]) -> f64 {
        self.mean_from_psi(self.model.psi(x).as_slice())
    }
}

/// EK mean at `x*`.
pub fn ek_mean<K: PairKernel, G: Fn(&[f64]) -> f64 + Sync>(
    model: &SpectralModel<K>,
    g: &G,
    n: f64,
    noise: f64,
    x: &[f64],
) -> f64 {
    EkPredictor::new(model, g, n, noise).mean(x)
}

/// `g(x) − EK mean(x)`.
pub fn discrepancy<K: PairKernel, G: Fn(&[f64]) -> f64 + Sync>(
    model: &SpectralModel<K>,
    g: &G,
    n: f64,
    noise: f64,
    x: &[f64],
) -> f64 {
    g(x) - ek_mean(model, g, n, noise, x)
}

/// Node tuples `(x₂, x₃, x₄)` with the spectral projections of `U` in its
/// first slot, shared by every target, `n` and `σ²`.
#[derive(Debug, Clone)]
pub struct EkFwcNodes {
    nodes: Vec<[Vec<f64>; 3]>,
    /// `Q_si = (1/M) Σ_m ψ_i(x_m) U(x_m, x₂ˢ, x₃ˢ, x₄ˢ)`.
    q: DMatrix<f64>,
    /// `ψ_i` at each of the three node coordinates.
    psi: [DMatrix<f64>; 3],
}

impl EkFwcNodes {
    pub fn prepare<K: PairKernel, U: QuadKernel, S: MeasureSampler + ?Sized>(
        model: &SpectralModel<K>,
        u: &U,
        sampler: &S,
        mc_nodes: usize,
        seed: u64,
    ) -> Self {
        let flat = draw_points(sampler, 3 * mc_nodes, seed, stream::NODES);
        let nodes: Vec<[Vec<f64>; 3]> = flat.chunks(3).map(|c| [c[0].clone(), c[1].clone(), c[2].clone()]).collect();
        let m = model.m();
        let samples = model.samples();
        let rows: Vec<Vec<f64>> = nodes
            .par_iter()
            .map(|[a, b, c]| samples.iter().map(|x| u.eval4([x, a, b, c])).collect())
            .collect();
        let umat = DMatrix::from_fn(nodes.len(), m, |s, j| rows[s][j]);
        let q = umat * model.psi_samples() / m as f64;
        let psi = [0, 1, 2].map(|k| {
            let pts: Vec<Vec<f64>> = nodes.iter().map(|t| t[k].clone()).collect();
            model.psi_many(&pts)
        });
        Self { nodes, q, psi }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Scale the stored cumulant projections (equivalent to scaling `U`).
    pub fn scaled(&self, c: f64) -> Self {
        Self { nodes: self.nodes.clone(), q: &self.q * c, psi: self.psi.clone() }
    }
}

/// Values of `δ̃g` at the three node coordinates.
pub struct NodeDiscrepancy {
    h: [Vec<f64>; 3],
}

impl NodeDiscrepancy {
    pub fn new<K: PairKernel, G: Fn(&[f64]) -> f64 + Sync>(nodes: &EkFwcNodes, ek: &EkPredictor<'_, K>, g: &G) -> Self {
        let h = [0, 1, 2].map(|k| {
            (0..nodes.len())
                .into_par_iter()
                .map(|s| {
                    let psi: Vec<f64> = nodes.psi[k].row(s).iter().copied().collect();
                    g(&nodes.nodes[s][k]) - ek.mean_from_psi(&psi)
                })
                .collect()
        });
        Self { h }
    }
}

/// Leading finite-width correction to the EK mean at `x*`.
///
/// `δ̃` in the first slot of `U` is the residual of `U(x*, …)` after the
/// EK prediction from its spectral projection. The pair operator
/// `δ̃_{x₂,x₃}` acts on the retained spectral subspace,
/// `Σ_j (1 − f_j) ψ_j(x₂) ψ_j(x₃)`. Integrals over `x₂, x₃, x₄` are node
/// averages.
pub fn ek_fwc_mean<K: PairKernel, U: QuadKernel>(
    nodes: &EkFwcNodes,
    ek: &EkPredictor<'_, K>,
    h: &NodeDiscrepancy,
    u: &U,
    u_scale: f64,
    x_star: &[f64],
) -> f64 {
    let model = ek.model;
    let r = model.rank();
    let psi_star = model.psi(x_star);
    let damp: Vec<f64> = ek.filter.iter().map(|f| 1.0 - f).collect();
    let s_count = nodes.len();
    let (t1, t2) = (0..s_count)
        .into_par_iter()
        .map(|s| {
            let q = nodes.q.row(s);
            let [a, b, c] = &nodes.nodes[s];
            let proj: f64 = (0..r).map(|i| psi_star[i] * q[i]).sum();
            let filtered: f64 = (0..r).map(|i| damp[i] * psi_star[i] * q[i]).sum();
            let residual = u_scale * u.eval4([x_star, a, b, c]) - proj;
            let du = residual + filtered;
            let pair: f64 = (0..r).map(|j| damp[j] * nodes.psi[0][(s, j)] * nodes.psi[1][(s, j)]).sum();
            let (h2, h3, h4) = (h.h[0][s], h.h[1][s], h.h[2][s]);
            (du * h2 * h3 * h4, du * pair * h4)
        })
        .reduce(|| (0.0, 0.0), |x, y| (x.0 + y.0, x.1 + y.1));
    let (n, s2) = (ek.n, ek.noise);
    let sc = s_count as f64;
    (n.powi(3) / s2.powi(3) * t1 / sc - 3.0 * n * n / (s2 * s2) * t2 / sc) / 6.0
}
