//! GP regression and its leading finite-width corrections.
//!
//! With `K̃ = K + σ²I`, `ỹ = K̃⁻¹y` and `c = K̃⁻¹K*`, the corrections read
//!
//! ```text
//! f̄_U     = 1/6 Ũ*_abc (ỹ_a ỹ_b ỹ_c − 3 K̃⁻¹_ab ỹ_c)
//! ⟨f²⟩_U  = 1/2 Ũ**_ab (ỹ_a ỹ_b − K̃⁻¹_ab)
//! Σ_U     = ⟨f²⟩_U − 2 f̄_GP f̄_U
//! Ũ*_abc  = U*_abc − U_abcd c_d
//! Ũ**_ab  = U**_ab − (U*_abc + Ũ*_abc) c_c
//! ```
//!
//! Repeated indices run over the training set.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::cumulants::{
    build_cumulant_slices, multiplicity3, multiplicity4, CumulantModel, CumulantSource, SliceMode,
    DEFAULT_MATERIALIZATION_CAP,
};
use crate::error::{Error, Result};
use crate::kernels::{InputSet, KernelMatrix, NetworkSpec};
use crate::linalg::{symmetrize, SpdFactor};

/// Factorization of `K̃ = K + σ²I` with the solved targets.
#[derive(Debug, Clone)]
pub struct TrainSolve {
    factor: SpdFactor,
    inverse: DMatrix<f64>,
    y: DVector<f64>,
    y_tilde: DVector<f64>,
    noise: f64,
}

impl TrainSolve {
    pub fn new(k_train: &KernelMatrix, y: &DVector<f64>, noise: f64) -> Result<Self> {
        if !(noise > 0.0) {
            return Err(Error::InvalidArgument(format!("observation noise must be positive, got {noise}")));
        }
        if y.len() != k_train.m() {
            return Err(Error::DimensionMismatch(format!(
                "{} targets for {} training points",
                y.len(),
                k_train.m()
            )));
        }
        let factor = k_train.factor_with_noise(noise)?;
        let y_tilde = factor.solve(y);
        let inverse = factor.inverse();
        Ok(Self { factor, inverse, y: y.clone(), y_tilde, noise })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn factor(&self) -> &SpdFactor {
        &self.factor
    }

    /// `K̃⁻¹`.
    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    /// `ỹ = K̃⁻¹y`.
    pub fn y_tilde(&self) -> &DVector<f64> {
        &self.y_tilde
    }

    /// `K̃⁻¹ k`.
    pub fn solve(&self, k: &DVector<f64>) -> DVector<f64> {
        self.factor.solve(k)
    }
}

/// Per-test-point GP mean and variance.
#[derive(Debug, Clone)]
pub struct GpPrediction {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

fn check_star(n: usize, k_star: &DMatrix<f64>, k_star_star: &[f64]) -> Result<()> {
    if k_star.nrows() != n || k_star.ncols() != k_star_star.len() {
        return Err(Error::DimensionMismatch(format!(
            "K* is {}x{}, expected {n} rows and {} columns",
            k_star.nrows(),
            k_star.ncols(),
            k_star_star.len()
        )));
    }
    Ok(())
}

/// GP posterior mean `K*ᵀ K̃⁻¹ y` and variance `K** − K*ᵀ K̃⁻¹ K*`.
///
/// `k_star` has one column per test point; `k_star_star` holds the prior
/// variance at each test point.
pub fn gp_posterior(solve: &TrainSolve, k_star: &DMatrix<f64>, k_star_star: &[f64]) -> Result<GpPrediction> {
    check_star(solve.n(), k_star, k_star_star)?;
    let c = solve.factor.solve_matrix(k_star);
    let mean = (k_star.transpose() * solve.y_tilde()).iter().copied().collect();
    let var = (0..k_star.ncols())
        .map(|t| k_star_star[t] - k_star.column(t).dot(&c.column(t)))
        .collect();
    Ok(GpPrediction { mean, var })
}

fn dense3(n: usize) -> Vec<f64> {
    vec![0.0; n * n * n]
}

/// `Ũ*_abc` for test point `t` as a dense `n³` array indexed `a·n² + b·n + c`.
pub fn u_tilde_star<S: CumulantSource + ?Sized>(src: &S, solve: &TrainSolve, k_star: &DVector<f64>, t: usize) -> Vec<f64> {
    let n = solve.n();
    let c = solve.solve(k_star);
    let mut out = dense3(n);
    for a in 0..n {
        for b in 0..n {
            for e in 0..n {
                let pred: f64 = (0..n).map(|d| src.train([a, b, e, d]) * c[d]).sum();
                out[(a * n + b) * n + e] = src.star(t, [a, b, e]) - pred;
            }
        }
    }
    out
}

/// `Ũ**_ab` for test point `t`.
pub fn u_tilde_star_star<S: CumulantSource + ?Sized>(
    src: &S,
    solve: &TrainSolve,
    k_star: &DVector<f64>,
    t: usize,
) -> DMatrix<f64> {
    let n = solve.n();
    let c = solve.solve(k_star);
    let ut = u_tilde_star(src, solve, k_star, t);
    DMatrix::from_fn(n, n, |a, b| {
        let s: f64 = (0..n).map(|e| (src.star(t, [a, b, e]) + ut[(a * n + b) * n + e]) * c[e]).sum();
        src.star_star(t, a, b) - s
    })
}

/// `f̄_U` from a dense `Ũ*`.
pub fn fwc_mean(ut_star: &[f64], solve: &TrainSolve) -> f64 {
    let n = solve.n();
    let y = solve.y_tilde();
    let b = solve.inverse();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                s += ut_star[(i * n + j) * n + k] * (y[i] * y[j] * y[k] - 3.0 * b[(i, j)] * y[k]);
            }
        }
    }
    s / 6.0
}

/// `(⟨f²⟩_U, Σ_U)` from a dense `Ũ**`.
pub fn fwc_variance(ut_star_star: &DMatrix<f64>, solve: &TrainSolve, gp_mean: f64, fwc_mean: f64) -> (f64, f64) {
    let y = solve.y_tilde();
    let w = y * y.transpose() - solve.inverse();
    let second = 0.5 * ut_star_star.component_mul(&w).sum();
    (second, second - 2.0 * gp_mean * fwc_mean)
}

/// Finite-width corrections at one test point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FwcParts {
    pub mean: f64,
    pub second_moment: f64,
}

impl FwcParts {
    pub fn variance(&self, gp_mean: f64) -> f64 {
        self.second_moment - 2.0 * gp_mean * self.mean
    }
}

/// Contraction engine for many test points.
///
/// The train-only contractions `v1_d = U_abcd ỹ_a ỹ_b ỹ_c`,
/// `v2_d = U_abcd K̃⁻¹_ab ỹ_c` and `M_cd = U_abcd W_ab` with
/// `W = ỹỹᵀ − K̃⁻¹` are computed once in a single pass over the sorted
/// quadruples; each test point then costs one pass over sorted triples.
pub struct FwcEngine<'a, S: CumulantSource + ?Sized> {
    src: &'a S,
    solve: &'a TrainSolve,
    w: DMatrix<f64>,
    v: DVector<f64>,
    m: DMatrix<f64>,
}

struct TrainAcc {
    v1: Vec<f64>,
    v2: Vec<f64>,
    m: DMatrix<f64>,
}

impl<'a, S: CumulantSource + ?Sized> FwcEngine<'a, S> {
    pub fn new(src: &'a S, solve: &'a TrainSolve) -> Result<Self> {
        let n = solve.n();
        if src.n_train() != n {
            return Err(Error::DimensionMismatch(format!(
                "cumulant over {} train points, solve over {n}",
                src.n_train()
            )));
        }
        let y = solve.y_tilde();
        let b = solve.inverse();
        let w = y * y.transpose() - b;
        let init = || TrainAcc { v1: vec![0.0; n], v2: vec![0.0; n], m: DMatrix::zeros(n, n) };
        let acc = (0..n)
            .into_par_iter()
            .fold(init, |mut acc, l| {
                src.fold_train_slab(l, &mut |q, u| {
                    if u == 0.0 {
                        return;
                    }
                    let omega = u * multiplicity4(&q) as f64 / 24.0;
                    for p in 0..4 {
                        let mut prod = 6.0 * omega;
                        for r in 0..4 {
                            if r != p {
                                prod *= y[q[r]];
                            }
                        }
                        acc.v1[q[p]] += prod;
                        for r in 0..4 {
                            if r == p {
                                continue;
                            }
                            let (s1, s2) = other_two(p, r);
                            acc.v2[q[p]] += 2.0 * omega * b[(q[s1], q[s2])] * y[q[r]];
                            acc.m[(q[r], q[p])] += 2.0 * omega * w[(q[s1], q[s2])];
                        }
                    }
                });
                acc
            })
            .reduce(init, |mut a, b| {
                a.v1.iter_mut().zip(&b.v1).for_each(|(x, y)| *x += y);
                a.v2.iter_mut().zip(&b.v2).for_each(|(x, y)| *x += y);
                a.m += b.m;
                a
            });
        let v = DVector::from_iterator(n, acc.v1.iter().zip(&acc.v2).map(|(a, b)| a - 3.0 * b));
        let mut m = acc.m;
        symmetrize(&mut m);
        Ok(Self { src, solve, w, v, m })
    }

    /// Corrections at test point `t` with train-test kernel column `k_star`.
    pub fn eval(&self, t: usize, k_star: &DVector<f64>) -> FwcParts {
        let n = self.solve.n();
        let y = self.solve.y_tilde();
        let b = self.solve.inverse();
        let w = &self.w;
        let c = self.solve.solve(k_star);
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        self.src.for_each_star(t, &mut |[i, j, k], u| {
            if u == 0.0 {
                return;
            }
            let omega = u * multiplicity3(&[i, j, k]) as f64 / 6.0;
            s1 += omega * (6.0 * y[i] * y[j] * y[k] - 6.0 * (b[(i, j)] * y[k] + b[(i, k)] * y[j] + b[(j, k)] * y[i]));
            s2 += omega * 2.0 * (w[(i, j)] * c[k] + w[(i, k)] * c[j] + w[(j, k)] * c[i]);
        });
        let mut ss = 0.0;
        for a in 0..n {
            for e in 0..n {
                ss += self.src.star_star(t, a, e) * w[(a, e)];
            }
        }
        let mean = (s1 - c.dot(&self.v)) / 6.0;
        let second_moment = 0.5 * (ss - 2.0 * s2 + c.dot(&(&self.m * &c)));
        FwcParts { mean, second_moment }
    }

    /// Corrections at every test point, in parallel.
    pub fn eval_all(&self, k_star: &DMatrix<f64>) -> Vec<FwcParts> {
        (0..k_star.ncols())
            .into_par_iter()
            .map(|t| self.eval(t, &k_star.column(t).into_owned()))
            .collect()
    }
}

fn other_two(p: usize, r: usize) -> (usize, usize) {
    let mut it = (0..4).filter(|&s| s != p && s != r);
    (it.next().unwrap(), it.next().unwrap())
}

/// Prediction at one test point, GP plus finite-width correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorPoint {
    pub gp_mean: f64,
    pub gp_var: f64,
    pub fwc_mean: f64,
    pub fwc_second_moment: f64,
    pub fwc_var: f64,
    pub combined_mean: f64,
    pub combined_var: f64,
}

/// Predictions at a set of test points for a network of width `width`.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub points: Vec<PosteriorPoint>,
    pub width: f64,
    pub noise: f64,
}

impl Posterior {
    /// Indices whose combined variance is negative. They are reported, not
    /// clamped.
    pub fn negative_variance(&self) -> Vec<usize> {
        self.points.iter().enumerate().filter(|(_, p)| p.combined_var < 0.0).map(|(i, _)| i).collect()
    }

    pub fn gp_mean(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.gp_mean).collect()
    }

    pub fn fwc_mean(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.fwc_mean).collect()
    }

    pub fn combined_mean(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.combined_mean).collect()
    }

    /// Re-combine the same corrections at another width.
    pub fn at_width(&self, width: f64) -> Result<Posterior> {
        let gp = GpPrediction {
            mean: self.gp_mean(),
            var: self.points.iter().map(|p| p.gp_var).collect(),
        };
        let fwc: Vec<FwcParts> = self
            .points
            .iter()
            .map(|p| FwcParts { mean: p.fwc_mean, second_moment: p.fwc_second_moment })
            .collect();
        combine(&gp, &fwc, width, self.noise)
    }
}

/// `combined = gp + fwc / N`.
pub fn combine(gp: &GpPrediction, fwc: &[FwcParts], width: f64, noise: f64) -> Result<Posterior> {
    if !(width >= 1.0) {
        return Err(Error::InvalidArgument(format!("width must be at least 1, got {width}")));
    }
    if gp.mean.len() != fwc.len() || gp.var.len() != fwc.len() {
        return Err(Error::DimensionMismatch("GP and correction lengths differ".into()));
    }
    let points = (0..fwc.len())
        .map(|t| {
            let f = fwc[t];
            let fwc_var = f.variance(gp.mean[t]);
            PosteriorPoint {
                gp_mean: gp.mean[t],
                gp_var: gp.var[t],
                fwc_mean: f.mean,
                fwc_second_moment: f.second_moment,
                fwc_var,
                combined_mean: gp.mean[t] + f.mean / width,
                combined_var: gp.var[t] + fwc_var / width,
            }
        })
        .collect();
    Ok(Posterior { points, width, noise })
}

/// GP posterior and corrections for every test point.
pub fn predict<S: CumulantSource + ?Sized>(
    k_train: &KernelMatrix,
    k_star: &DMatrix<f64>,
    k_star_star: &[f64],
    y: &DVector<f64>,
    noise: f64,
    src: &S,
    width: f64,
) -> Result<Posterior> {
    let solve = TrainSolve::new(k_train, y, noise)?;
    if src.n_test() != k_star.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "cumulant has {} test points, K* has {}",
            src.n_test(),
            k_star.ncols()
        )));
    }
    let gp = gp_posterior(&solve, k_star, k_star_star)?;
    let engine = FwcEngine::new(src, &solve)?;
    combine(&gp, &engine.eval_all(k_star), width, noise)
}

/// End-to-end prediction for a network prior: kernels by closed-form layer
/// maps, cumulant slices over train then test points, GP and corrections.
pub fn predict_network(
    spec: &NetworkSpec,
    model: &CumulantModel,
    train: &InputSet,
    test: &InputSet,
    y: &DVector<f64>,
    noise: f64,
    width: f64,
    mode: SliceMode,
) -> Result<Posterior> {
    spec.validate()?;
    let all = train.concat(test)?;
    let k_all = spec.kernel_matrix(&all);
    let n = train.n();
    let idx_train: Vec<usize> = (0..n).collect();
    let idx_test: Vec<usize> = (n..all.n()).collect();
    let k_train = KernelMatrix::new(k_all.block(&idx_train, &idx_train))?;
    let k_star = k_all.block(&idx_train, &idx_test);
    let k_star_star: Vec<f64> = idx_test.iter().map(|&i| k_all.get(i, i)).collect();
    let slices = build_cumulant_slices(&spec.last_hidden_kernel(&all), n, model, mode, DEFAULT_MATERIALIZATION_CAP)?;
    predict(&k_train, &k_star, &k_star_star, y, noise, &slices, width)
}

/// Independent scalar channels sharing the kernel and cumulant.
pub fn predict_channels<S: CumulantSource + ?Sized>(
    k_train: &KernelMatrix,
    k_star: &DMatrix<f64>,
    k_star_star: &[f64],
    y: &DMatrix<f64>,
    noise: f64,
    src: &S,
    width: f64,
) -> Result<Vec<Posterior>> {
    y.column_iter()
        .map(|col| predict(k_train, k_star, k_star_star, &col.into_owned(), noise, src, width))
        .collect()
}

/// Mean over test points of `(f̄ − y)² + Σ`, using the combined prediction.
pub fn expected_test_loss(posterior: &Posterior, targets: &[f64]) -> Result<f64> {
    if targets.len() != posterior.points.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} targets for {} test points",
            targets.len(),
            posterior.points.len()
        )));
    }
    let n = targets.len() as f64;
    Ok(posterior
        .points
        .iter()
        .zip(targets)
        .map(|(p, y)| (p.combined_mean - y).powi(2) + p.combined_var)
        .sum::<f64>()
        / n)
}
