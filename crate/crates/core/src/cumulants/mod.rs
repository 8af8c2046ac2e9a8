//! Fourth cumulant `U` of the network output prior.
//!
//! Values are stored at O(1): the `1/N` width factor is applied by the
//! consumer.

mod deep;
mod mc;
mod quadratic;
mod relu;
mod slices;
mod tensor;

pub use deep::{deep_u_recursion, DeepCumulant};
pub use mc::{mc_fourth_cumulant, mc_mu4, McEstimate};
pub use quadratic::quadratic_v;
pub use relu::{correlations, relu_mu4_series, relu_mu4_with, GTable, ReluSeries, SeriesTruncation, PAIRS};
pub use slices::{build_cumulant_slices, fold_train, CumulantSlices, CumulantSource, SliceMode, DEFAULT_MATERIALIZATION_CAP};
pub use tensor::{multiplicity3, multiplicity4, SymTensor3, SymTensor4};

use nalgebra::Matrix4;

use crate::error::{Error, Result};
use crate::kernels::{gaussian_product_expectation, quadratic_entry, relu_entry, Activation};
use crate::quadrature::NormalQuadrature;
use crate::rng::derive_seed;

/// Moments supplied to [`assemble_u`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PairingMoments {
    /// `[V_(12)(34), V_(13)(24), V_(14)(23)]`.
    Connected([f64; 3]),
    /// `⟨φ₁φ₂φ₃φ₄⟩` and the pair moments `⟨φ_aφ_b⟩` in [`PAIRS`] order.
    Raw { mu4: f64, pairs: [f64; 6] },
}

impl PairingMoments {
    pub fn connected(&self) -> [f64; 3] {
        match *self {
            PairingMoments::Connected(v) => v,
            PairingMoments::Raw { mu4, pairs: p } => {
                [mu4 - p[0] * p[5], mu4 - p[1] * p[4], mu4 - p[2] * p[3]]
            }
        }
    }
}

/// `U = ς_a⁴ (V_(12)(34) + V_(13)(24) + V_(14)(23))`.
pub fn assemble_u(moments: &PairingMoments, readout_var: f64) -> f64 {
    let v = moments.connected();
    readout_var * readout_var * (v[0] + v[1] + v[2])
}

/// Reorder a 4x4 block so that point `perm[i]` becomes point `i`.
pub fn permute_block(l: &Matrix4<f64>, perm: [usize; 4]) -> Matrix4<f64> {
    Matrix4::from_fn(|i, j| l[(perm[i], perm[j])])
}

/// The block reordered so its points are sorted by variance, then by their
/// sorted covariances with the other three points.
pub fn canonical_block(l: &Matrix4<f64>) -> Matrix4<f64> {
    let key = |i: usize| {
        let mut off: Vec<f64> = (0..4).filter(|&j| j != i).map(|j| l[(i, j)]).collect();
        off.sort_by(f64::total_cmp);
        (l[(i, i)], off)
    };
    let mut perm = [0, 1, 2, 3];
    perm.sort_by(|&a, &b| {
        let (ka, kb) = (key(a), key(b));
        ka.0.total_cmp(&kb.0).then_with(|| ka.1.iter().zip(&kb.1).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal))
    });
    permute_block(l, perm)
}

/// What to do with ReLU blocks the series cannot represent, such as
/// blocks with repeated points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FallbackPolicy {
    /// Monte Carlo estimate of `⟨φ₁φ₂φ₃φ₄⟩` with a seed derived from the block.
    MonteCarlo { samples: usize, seed: u64 },
    /// Nested Gaussian quadrature of the given order.
    Quadrature { order: usize },
    /// Treat the entry as zero.
    Drop,
}

impl Default for FallbackPolicy {
    fn default() -> Self {
        FallbackPolicy::MonteCarlo { samples: 200_000, seed: 0 }
    }
}

/// How `⟨φ₁φ₂φ₃φ₄⟩` is evaluated for a block.
#[derive(Debug, Clone, PartialEq)]
pub enum MomentMethod {
    /// Closed form (quadratic, linear) or truncated series with fallback (ReLU).
    Analytic { trunc: SeriesTruncation, fallback: FallbackPolicy },
    /// Nested Gaussian quadrature for every block.
    Quadrature { order: usize },
}

impl Default for MomentMethod {
    fn default() -> Self {
        MomentMethod::Analytic { trunc: SeriesTruncation::default(), fallback: FallbackPolicy::default() }
    }
}

/// Maps a 4x4 block of the last hidden pre-activation kernel to `U`.
#[derive(Debug, Clone)]
pub struct CumulantModel {
    pub activation: Activation,
    pub readout_var: f64,
    pub method: MomentMethod,
    series: Option<ReluSeries>,
    quad: Option<NormalQuadrature>,
}

impl CumulantModel {
    pub fn new(activation: Activation, readout_var: f64, method: MomentMethod) -> Self {
        let series = match (&method, activation) {
            (MomentMethod::Analytic { trunc, .. }, Activation::Relu) => Some(ReluSeries::new(trunc.t_max)),
            _ => None,
        };
        let quad = match &method {
            MomentMethod::Quadrature { order } => Some(NormalQuadrature::new(*order)),
            MomentMethod::Analytic { fallback: FallbackPolicy::Quadrature { order }, .. } => {
                Some(NormalQuadrature::new(*order))
            }
            _ => None,
        };
        Self { activation, readout_var, method, series, quad }
    }

    /// Closed form or series with the default truncation and fallback.
    pub fn analytic(activation: Activation, readout_var: f64) -> Self {
        Self::new(activation, readout_var, MomentMethod::default())
    }

    fn pair_moment(&self, l: &Matrix4<f64>, a: usize, b: usize) -> f64 {
        let (aa, bb, ab) = (l[(a, a)], l[(b, b)], l[(a, b)]);
        match self.activation {
            Activation::Linear => ab,
            Activation::Quadratic => quadratic_entry(aa, bb, ab),
            Activation::Relu => relu_entry(aa, bb, ab),
        }
    }

    fn raw_pairs(&self, l: &Matrix4<f64>) -> [f64; 6] {
        PAIRS.map(|(a, b)| self.pair_moment(l, a, b))
    }

    /// Pairing moments of a block, or `None` when the entry is dropped.
    pub fn moments(&self, l: &Matrix4<f64>) -> Result<Option<PairingMoments>> {
        match (&self.method, self.activation) {
            (MomentMethod::Quadrature { .. }, _) => {
                let quad = self.quad.as_ref().expect("quadrature rule");
                let (mu4, _) = gaussian_product_expectation(self.activation, l, 4, quad);
                Ok(Some(PairingMoments::Raw { mu4, pairs: self.raw_pairs(l) }))
            }
            (_, Activation::Linear) => {
                let g = |a: usize, b: usize| l[(a, b)];
                Ok(Some(PairingMoments::Connected([
                    g(0, 2) * g(1, 3) + g(0, 3) * g(1, 2),
                    g(0, 1) * g(2, 3) + g(0, 3) * g(1, 2),
                    g(0, 1) * g(2, 3) + g(0, 2) * g(1, 3),
                ])))
            }
            (_, Activation::Quadratic) => Ok(Some(PairingMoments::Connected([
                quadratic_v(l),
                quadratic_v(&permute_block(l, [0, 2, 1, 3])),
                quadratic_v(&permute_block(l, [0, 3, 1, 2])),
            ]))),
            (MomentMethod::Analytic { trunc, fallback }, Activation::Relu) => {
                let series = self.series.as_ref().expect("series coefficients");
                let mu4 = match relu_mu4_with(series, l, trunc.offdiag_threshold) {
                    Ok(v) => v,
                    Err(Error::NonConvergent { .. }) => match *fallback {
                        FallbackPolicy::Drop => return Ok(None),
                        FallbackPolicy::Quadrature { .. } => {
                            let quad = self.quad.as_ref().expect("quadrature rule");
                            gaussian_product_expectation(self.activation, l, 4, quad).0
                        }
                        FallbackPolicy::MonteCarlo { samples, seed } => {
                            // μ4 is symmetric, so estimate it on one ordering of the
                            // block; every permutation then gets the same draws.
                            let c = canonical_block(l);
                            let key = c.iter().fold(seed, |h, v| derive_seed(h, v.to_bits()));
                            mc_mu4(self.activation, &c, samples, key).mean
                        }
                    },
                    Err(e) => return Err(e),
                };
                Ok(Some(PairingMoments::Raw { mu4, pairs: self.raw_pairs(l) }))
            }
        }
    }

    /// `U` for a 4x4 pre-activation block; dropped entries are zero.
    pub fn u_block(&self, l: &Matrix4<f64>) -> Result<f64> {
        Ok(self.moments(l)?.map_or(0.0, |m| assemble_u(&m, self.readout_var)))
    }

    /// Whether a block would be routed to the fallback path.
    pub fn needs_fallback(&self, l: &Matrix4<f64>) -> bool {
        match (&self.method, self.activation) {
            (MomentMethod::Analytic { trunc, .. }, Activation::Relu) => correlations(l)
                .map(|(c, _)| c.iter().any(|v| v.abs() >= trunc.offdiag_threshold))
                .unwrap_or(true),
            _ => false,
        }
    }
}

/// `U` at arbitrary input points for a network, via the closed-form last
/// hidden kernel.
#[derive(Debug, Clone)]
pub struct PointCumulant {
    pub spec: crate::kernels::NetworkSpec,
    pub model: CumulantModel,
}

impl PointCumulant {
    pub fn new(spec: crate::kernels::NetworkSpec, model: CumulantModel) -> Self {
        Self { spec, model }
    }

    /// Last hidden pre-activation covariance of four points.
    pub fn block(&self, pts: [&[f64]; 4]) -> Matrix4<f64> {
        let mut l = Matrix4::zeros();
        for i in 0..4 {
            for j in i..4 {
                let v = self.spec.last_hidden_pair(pts[i], pts[j]).2;
                l[(i, j)] = v;
                l[(j, i)] = v;
            }
        }
        l
    }

    pub fn eval(&self, pts: [&[f64]; 4]) -> f64 {
        self.model.u_block(&self.block(pts)).unwrap_or(f64::NAN)
    }
}
