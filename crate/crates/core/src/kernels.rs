//! NNGP kernels of fully connected networks.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix4, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, SpdFactor};
use crate::quadrature::{normal_cdf, normal_pdf, NormalQuadrature};

/// Clamp margin for correlations fed to `arccos` and to the 2-point recursion.
pub const CORRELATION_EPS: f64 = 1e-12;

/// Pointwise nonlinearity of the hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Linear,
    Quadratic,
    Relu,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Quadratic => z * z,
            Activation::Relu => z.max(0.0),
        }
    }

    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Quadratic => 2.0 * z,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `E[φ(m + s·v)]` for `v ~ N(0, 1)` and `s ≥ 0`.
    pub fn gaussian_mean(self, m: f64, s: f64) -> f64 {
        match self {
            Activation::Linear => m,
            Activation::Quadratic => m * m + s * s,
            Activation::Relu => {
                if s <= 0.0 {
                    m.max(0.0)
                } else {
                    let t = m / s;
                    m * normal_cdf(t) + s * normal_pdf(t)
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Quadratic => "quadratic",
            Activation::Relu => "relu",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" | "identity" => Ok(Activation::Linear),
            "quadratic" | "square" => Ok(Activation::Quadratic),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::InvalidArgument(format!("unknown activation '{other}'"))),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A set of input points, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSet {
    points: DMatrix<f64>,
    sphere_radius: Option<f64>,
}

impl InputSet {
    pub fn new(points: DMatrix<f64>) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::DimensionMismatch("input set needs n >= 1 and d >= 1".into()));
        }
        Ok(Self { points, sphere_radius: None })
    }

    /// Build from rows, checking that all rows have the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != d) {
            return Err(Error::DimensionMismatch(format!(
                "row {i} has length {}, expected {d}",
                r.len()
            )));
        }
        Self::new(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
    }

    /// Mark the set as lying on the sphere of the given radius, verifying
    /// every row norm to 1e-9.
    pub fn normalized(mut self, radius: f64) -> Result<Self> {
        for i in 0..self.n() {
            let norm = self.points.row(i).norm();
            if (norm - radius).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "row {i} has norm {norm}, expected {radius}"
                )));
            }
        }
        self.sphere_radius = Some(radius);
        Ok(self)
    }

    /// `n` points uniform on the sphere of radius `√d`.
    pub fn sample_sphere<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Self {
        let radius = (d as f64).sqrt();
        let points = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut set = Self { points, sphere_radius: Some(radius) };
        for mut row in set.points.row_iter_mut() {
            let norm = row.norm();
            row *= radius / norm;
        }
        set
    }

    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn d(&self) -> usize {
        self.points.ncols()
    }

    pub fn sphere_radius(&self) -> Option<f64> {
        self.sphere_radius
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.points.row(i).iter().copied().collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n()).map(|i| self.row(i)).collect()
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &InputSet) -> Result<InputSet> {
        if self.d() != other.d() {
            return Err(Error::DimensionMismatch(format!(
                "cannot stack d={} with d={}",
                self.d(),
                other.d()
            )));
        }
        let n = self.n() + other.n();
        let points = DMatrix::from_fn(n, self.d(), |i, j| {
            if i < self.n() {
                self.points[(i, j)]
            } else {
                other.points[(i - self.n(), j)]
            }
        });
        let sphere_radius = match (self.sphere_radius, other.sphere_radius) {
            (Some(a), Some(b)) if a == b => Some(a),
            _ => None,
        };
        Ok(InputSet { points, sphere_radius })
    }

    pub fn select(&self, idx: &[usize]) -> InputSet {
        let points = DMatrix::from_fn(idx.len(), self.d(), |i, j| self.points[(idx[i], j)]);
        InputSet { points, sphere_radius: self.sphere_radius }
    }
}

/// A symmetric positive-semidefinite Gram matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    values: DMatrix<f64>,
    jitter: f64,
}

impl KernelMatrix {
    /// Wrap a square matrix, checking symmetry.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "kernel matrix must be square, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        let km = Self { values, jitter: crate::linalg::DEFAULT_JITTER };
        km.check_symmetric()?;
        Ok(km)
    }

    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn m(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, &b| a.max(b.abs()))
    }

    pub fn check_symmetric(&self) -> Result<()> {
        let tol = 1e-12 * self.max_abs();
        let m = self.m();
        for i in 0..m {
            for j in 0..i {
                if (self.values[(i, j)] - self.values[(j, i)]).abs() > tol {
                    return Err(Error::InvalidArgument(format!(
                        "kernel matrix not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Smallest eigenvalue must be at least `-1e-8 · max diagonal`.
    pub fn check_psd(&self) -> Result<()> {
        let max_diag = self.values.diagonal().iter().fold(0.0f64, |a, &b| a.max(b));
        let lo = min_eigenvalue(&self.values);
        if lo < -1e-8 * max_diag {
            return Err(Error::NotPsd { eigenvalue: lo });
        }
        Ok(())
    }

    /// Sub-matrix on the given indices.
    pub fn block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| self.values[(rows[i], cols[j])])
    }

    /// Factor `K + noise·I` with this matrix's jitter policy.
    pub fn factor_with_noise(&self, noise: f64) -> Result<SpdFactor> {
        let mut a = self.values.clone();
        for i in 0..self.m() {
            a[(i, i)] += noise;
        }
        SpdFactor::new(&a, self.jitter)
    }

    pub fn scaled(&self, c: f64) -> KernelMatrix {
        KernelMatrix { values: &self.values * c, jitter: self.jitter }
    }
}

fn map_entries(l: &KernelMatrix, f: impl Fn(f64, f64, f64) -> f64 + Sync) -> DMatrix<f64> {
    let m = l.m();
    let diag: Vec<f64> = (0..m).map(|i| l.get(i, i)).collect();
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| (0..=i).map(|j| f(diag[i], diag[j], l.get(i, j))).collect())
        .collect();
    let mut out = DMatrix::zeros(m, m);
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// First-layer kernel `ς_w² x·x'/d`.
pub fn linear_kernel(inputs: &InputSet, weight_var: f64) -> KernelMatrix {
    let x = inputs.points();
    let mut g = x * x.transpose();
    g *= weight_var / inputs.d() as f64;
    crate::linalg::symmetrize(&mut g);
    KernelMatrix { values: g, jitter: crate::linalg::DEFAULT_JITTER }
}

/// Output kernel of a quadratic hidden layer.
pub fn quadratic_entry(laa: f64, lbb: f64, lab: f64) -> f64 {
    laa * lbb + 2.0 * lab * lab
}

/// Output kernel of a ReLU hidden layer (arc-cosine kernel of degree one),
/// without the readout variance.
pub fn relu_entry(laa: f64, lbb: f64, lab: f64) -> f64 {
    let norm = (laa * lbb).sqrt();
    if norm == 0.0 {
        return 0.0;
    }
    let cos = (lab / norm).clamp(-1.0, 1.0);
    let theta = cos.acos();
    norm / (2.0 * PI) * (theta.sin() + (PI - theta) * cos)
}

pub fn quadratic_kernel(l: &KernelMatrix, readout_var: f64) -> KernelMatrix {
    let values = map_entries(l, |a, b, ab| readout_var * quadratic_entry(a, b, ab));
    KernelMatrix { values, jitter: l.jitter }
}

pub fn relu_kernel(l: &KernelMatrix, readout_var: f64) -> Result<KernelMatrix> {
    for i in 0..l.m() {
        let v = l.get(i, i);
        if !(v > 0.0) {
            return Err(Error::NonPositiveDiagonal { index: i, value: v });
        }
    }
    let values = map_entries(l, |a, b, ab| readout_var * relu_entry(a, b, ab));
    Ok(KernelMatrix { values, jitter: l.jitter })
}

/// Architecture and prior variances of a fully connected network with
/// `depth` hidden layers and a scalar readout.
///
/// Variances are scaled: the actual weight variance of a layer is
/// `weight_var[ℓ] / fan_in`. `bias_var` has one entry per hidden layer plus
/// one for the readout.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub depth: usize,
    pub activation: Activation,
    pub weight_var: Vec<f64>,
    pub readout_var: f64,
    pub bias_var: Vec<f64>,
}

impl NetworkSpec {
    /// Single hidden layer, no biases.
    pub fn two_layer(activation: Activation, weight_var: f64, readout_var: f64) -> Self {
        Self {
            depth: 1,
            activation,
            weight_var: vec![weight_var],
            readout_var,
            bias_var: vec![0.0, 0.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::InvalidArgument("depth must be at least 1".into()));
        }
        if self.weight_var.len() != self.depth || self.bias_var.len() != self.depth + 1 {
            return Err(Error::DimensionMismatch(format!(
                "depth {} needs {} weight variances and {} bias variances, got {} and {}",
                self.depth,
                self.depth,
                self.depth + 1,
                self.weight_var.len(),
                self.bias_var.len()
            )));
        }
        let ok = self.weight_var.iter().all(|v| v.is_finite() && *v > 0.0)
            && self.readout_var.is_finite()
            && self.readout_var > 0.0
            && self.bias_var.iter().all(|v| v.is_finite() && *v >= 0.0);
        if !ok {
            return Err(Error::InvalidArgument(
                "variances must be finite, weights positive and biases non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Variance multiplying the activations that feed hidden layer `l + 1`
    /// (or the readout when `l + 1 == depth`).
    pub fn next_weight_var(&self, l: usize) -> f64 {
        if l + 1 < self.depth {
            self.weight_var[l + 1]
        } else {
            self.readout_var
        }
    }

    fn closed_form_entry(&self, laa: f64, lbb: f64, lab: f64) -> f64 {
        match self.activation {
            Activation::Linear => lab,
            Activation::Quadratic => quadratic_entry(laa, lbb, lab),
            Activation::Relu => relu_entry(laa, lbb, lab),
        }
    }

    /// Pre-activation 2x2 kernel `(k_aa, k_bb, k_ab)` of the last hidden
    /// layer, by closed-form layer maps.
    pub fn last_hidden_pair(&self, x: &[f64], y: &[f64]) -> (f64, f64, f64) {
        let d = x.len() as f64;
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
        let w = self.weight_var[0] / d;
        let b = self.bias_var[0];
        let mut k = (w * dot(x, x) + b, w * dot(y, y) + b, w * dot(x, y) + b);
        for l in 1..self.depth {
            let (aa, bb, ab) = k;
            let w = self.weight_var[l];
            let b = self.bias_var[l];
            k = (
                w * self.closed_form_entry(aa, aa, aa) + b,
                w * self.closed_form_entry(bb, bb, bb) + b,
                w * self.closed_form_entry(aa, bb, ab) + b,
            );
        }
        k
    }

    /// Output kernel between two points by closed-form layer maps.
    pub fn kernel(&self, x: &[f64], y: &[f64]) -> f64 {
        let (aa, bb, ab) = self.last_hidden_pair(x, y);
        self.readout_var * self.closed_form_entry(aa, bb, ab) + self.bias_var[self.depth]
    }

    /// Output kernel matrix by closed-form layer maps.
    pub fn kernel_matrix(&self, inputs: &InputSet) -> KernelMatrix {
        self.cross_kernel(inputs, inputs).map_or_else(
            |_| unreachable!(),
            |values| {
                let mut v = values;
                crate::linalg::symmetrize(&mut v);
                KernelMatrix { values: v, jitter: crate::linalg::DEFAULT_JITTER }
            },
        )
    }

    /// Pre-activation kernel of the last hidden layer by closed-form layer
    /// maps; this is the covariance the fourth cumulant is built from.
    pub fn last_hidden_kernel(&self, inputs: &InputSet) -> KernelMatrix {
        let rows = inputs.rows();
        let entries: Vec<Vec<f64>> = rows
            .par_iter()
            .enumerate()
            .map(|(i, x)| (0..=i).map(|j| self.last_hidden_pair(x, &rows[j]).2).collect())
            .collect();
        let m = rows.len();
        let mut values = DMatrix::zeros(m, m);
        for (i, row) in entries.into_iter().enumerate() {
            for (j, v) in row.into_iter().enumerate() {
                values[(i, j)] = v;
                values[(j, i)] = v;
            }
        }
        KernelMatrix { values, jitter: crate::linalg::DEFAULT_JITTER }
    }

    /// Rectangular kernel block between two input sets.
    pub fn cross_kernel(&self, a: &InputSet, b: &InputSet) -> Result<DMatrix<f64>> {
        if a.d() != b.d() {
            return Err(Error::DimensionMismatch(format!("d={} vs d={}", a.d(), b.d())));
        }
        let ra = a.rows();
        let rb = b.rows();
        let rows: Vec<Vec<f64>> = ra
            .par_iter()
            .map(|x| rb.iter().map(|y| self.kernel(x, y)).collect())
            .collect();
        Ok(DMatrix::from_fn(ra.len(), rb.len(), |i, j| rows[i][j]))
    }
}

/// Cholesky factor of a small PSD matrix that tolerates zero pivots.
/// Returns `(factor, clipped)` where `clipped` reports that negative
/// eigenvalues had to be raised to zero first.
pub fn psd_cholesky4(cov: &Matrix4<f64>, k: usize) -> (Matrix4<f64>, bool) {
    let mut c = *cov;
    let scale = (0..k).map(|i| c[(i, i)].abs()).fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
    let mut clipped = false;
    let eig = SymmetricEigen::new(c);
    if (0..4).any(|i| eig.eigenvalues[i] < -1e-12 * scale) {
        clipped = true;
        let mut vals = eig.eigenvalues;
        vals.iter_mut().for_each(|v| *v = v.max(0.0));
        c = eig.eigenvectors * Matrix4::from_diagonal(&vals) * eig.eigenvectors.transpose();
    }
    let tiny = 1e-12 * scale;
    let mut l = Matrix4::zeros();
    for j in 0..k {
        let mut s = c[(j, j)];
        for p in 0..j {
            s -= l[(j, p)] * l[(j, p)];
        }
        if s <= tiny {
            continue;
        }
        let ljj = s.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..k {
            let mut t = c[(i, j)];
            for p in 0..j {
                t -= l[(i, p)] * l[(j, p)];
            }
            l[(i, j)] = t / ljj;
        }
    }
    (l, clipped)
}

/// `E[φ(h₁)···φ(h_k)]` for `h ~ N(0, C)` with `C` the leading `k×k` block
/// of `cov` (`1 ≤ k ≤ 4`).
///
/// After factoring `C = LLᵀ`, the first `k-1` standard variables are
/// integrated numerically, each split at the kink of its own factor; the
/// last one is integrated in closed form.
pub fn gaussian_product_expectation(
    act: Activation,
    cov: &Matrix4<f64>,
    k: usize,
    quad: &NormalQuadrature,
) -> (f64, bool) {
    assert!((1..=4).contains(&k));
    let (l, clipped) = psd_cholesky4(cov, k);
    let mut z = [0.0; 4];
    (nested(act, &l, k, 0, &mut z, quad), clipped)
}

fn nested(
    act: Activation,
    l: &Matrix4<f64>,
    k: usize,
    level: usize,
    z: &mut [f64; 4],
    quad: &NormalQuadrature,
) -> f64 {
    let m: f64 = (0..level).map(|j| l[(level, j)] * z[j]).sum();
    let s = l[(level, level)];
    if level + 1 == k {
        return act.gaussian_mean(m, s);
    }
    if s == 0.0 {
        z[level] = 0.0;
        let f = act.apply(m);
        return if f == 0.0 { 0.0 } else { f * nested(act, l, k, level + 1, z, quad) };
    }
    let mut acc = 0.0;
    for (zi, w) in quad.nodes(Some(-m / s)) {
        let f = act.apply(m + s * zi);
        if f == 0.0 {
            continue;
        }
        z[level] = zi;
        acc += w * f * nested(act, l, k, level + 1, z, quad);
    }
    acc
}

/// Kernels produced by [`deep_kernel_recursion`].
#[derive(Debug, Clone)]
pub struct LayerKernels {
    /// Pre-activation kernel of each hidden layer, then the output kernel.
    pub layers: Vec<KernelMatrix>,
    /// Number of 2x2 blocks whose correlation had to be clamped.
    pub clamp_warnings: usize,
}

impl LayerKernels {
    pub fn output(&self) -> &KernelMatrix {
        self.layers.last().expect("at least one layer")
    }
}

/// Layer-by-layer kernel recursion evaluated by 2-D Gaussian quadrature.
pub fn deep_kernel_recursion(
    spec: &NetworkSpec,
    inputs: &InputSet,
    quad_order: usize,
) -> Result<LayerKernels> {
    spec.validate()?;
    if quad_order < 8 {
        return Err(Error::InvalidArgument(format!("quad_order {quad_order} < 8")));
    }
    let quad = NormalQuadrature::new(quad_order);
    let mut first = linear_kernel(inputs, spec.weight_var[0]);
    first.values.add_scalar_mut(spec.bias_var[0]);
    let mut layers = vec![first];
    let mut clamp_warnings = 0;
    for l in 0..spec.depth {
        let prev = layers.last().unwrap();
        let m = prev.m();
        let w = spec.next_weight_var(l);
        let b = spec.bias_var[l + 1];
        let rows: Vec<(Vec<f64>, usize)> = (0..m)
            .into_par_iter()
            .map(|i| {
                let mut warn = 0;
                let row = (0..=i)
                    .map(|j| {
                        let (v, clamped) =
                            pair_expectation(spec.activation, prev.get(i, i), prev.get(j, j), prev.get(i, j), i == j, &quad);
                        warn += clamped as usize;
                        w * v + b
                    })
                    .collect();
                (row, warn)
            })
            .collect();
        let mut values = DMatrix::zeros(m, m);
        for (i, (row, warn)) in rows.into_iter().enumerate() {
            clamp_warnings += warn;
            for (j, v) in row.into_iter().enumerate() {
                values[(i, j)] = v;
                values[(j, i)] = v;
            }
        }
        layers.push(KernelMatrix { values, jitter: prev.jitter });
    }
    Ok(LayerKernels { layers, clamp_warnings })
}

fn pair_expectation(
    act: Activation,
    kaa: f64,
    kbb: f64,
    kab: f64,
    same: bool,
    quad: &NormalQuadrature,
) -> (f64, bool) {
    let mut cov = Matrix4::zeros();
    if same {
        cov[(0, 0)] = kaa;
        cov[(1, 1)] = kaa;
        cov[(0, 1)] = kaa;
        cov[(1, 0)] = kaa;
        return (gaussian_product_expectation(act, &cov, 2, quad).0, false);
    }
    let norm = (kaa * kbb).sqrt();
    let mut clamped = false;
    let mut off = kab;
    if norm > 0.0 {
        let rho = kab / norm;
        if rho.abs() > 1.0 {
            clamped = true;
        }
        off = rho.clamp(-1.0 + CORRELATION_EPS, 1.0 - CORRELATION_EPS) * norm;
    }
    cov[(0, 0)] = kaa;
    cov[(1, 1)] = kbb;
    cov[(0, 1)] = off;
    cov[(1, 0)] = off;
    (gaussian_product_expectation(act, &cov, 2, quad).0, clamped)
}
