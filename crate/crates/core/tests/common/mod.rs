//! Independent oracles and property checks shared by the integration tests
//! and the acceptance runner.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Matrix4};
use nnsp_core::cumulants::{CumulantModel, CumulantSource, PointCumulant, SliceMode};
use nnsp_core::equivalent_kernel::QuadKernel;
use nnsp_core::gp_inference::predict_network;
use nnsp_core::kernels::{Activation, InputSet, NetworkSpec};
use nnsp_core::langevin::*;
use nnsp_core::rng::stream_rng;
use rand::Rng;
use rand_distr::StandardNormal;

pub type Check = std::result::Result<(), String>;

// ---------------------------------------------------------------- cumulants

/// Gaussian moment `E[Π z_idx]` as a sum over all perfect matchings.
pub fn isserlis(l: &Matrix4<f64>, idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 1.0;
    }
    let (first, rest) = (idx[0], &idx[1..]);
    (0..rest.len())
        .map(|k| {
            let remaining: Vec<usize> = rest.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, &v)| v).collect();
            l[(first, rest[k])] * isserlis(l, &remaining)
        })
        .sum()
}

/// `U` for squared activations from Wick contractions alone.
pub fn quadratic_u_oracle(l: &Matrix4<f64>, readout_var: f64) -> f64 {
    let mu4 = isserlis(l, &[0, 0, 1, 1, 2, 2, 3, 3]);
    let p = |a: usize, b: usize| isserlis(l, &[a, a, b, b]);
    readout_var.powi(2) * (3.0 * mu4 - p(0, 1) * p(2, 3) - p(0, 2) * p(1, 3) - p(0, 3) * p(1, 2))
}

pub fn random_psd(seed: u64) -> Matrix4<f64> {
    let mut rng = stream_rng(seed, 0);
    let a = Matrix4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
    a * a.transpose() + Matrix4::identity() * 0.05
}

/// Positive diagonal, correlations in `[-r, r]`.
pub fn weakly_correlated(seed: u64, r: f64) -> Matrix4<f64> {
    let mut rng = stream_rng(seed, 1);
    let sd: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.7..1.4));
    let mut l = Matrix4::zeros();
    for i in 0..4 {
        l[(i, i)] = sd[i] * sd[i];
        for j in 0..i {
            let c = rng.random_range(-r..r) * sd[i] * sd[j];
            l[(i, j)] = c;
            l[(j, i)] = c;
        }
    }
    l
}

/// Mean and standard error of `Π relu(z_i)` for `z ~ N(0, l)`.
pub fn relu_mc(l: &Matrix4<f64>, samples: usize, seed: u64) -> (f64, f64) {
    let c = l.cholesky().expect("positive definite").l();
    let mut rng = stream_rng(seed, 2);
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..samples {
        let e: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let mut prod = 1.0;
        for i in 0..4 {
            let z: f64 = (0..=i).map(|j| c[(i, j)] * e[j]).sum();
            prod *= z.max(0.0);
        }
        s += prod;
        s2 += prod * prod;
    }
    let n = samples as f64;
    let mean = s / n;
    (mean, ((s2 / n - mean * mean) / (n - 1.0)).sqrt())
}

// ---------------------------------------------------------------- inference

/// Plain nested-loop evaluation of the corrections with an LU inverse.
pub struct Naive {
    n: usize,
    u: Vec<f64>,
    us: Vec<f64>,
    uss: Vec<f64>,
}

impl Naive {
    pub fn from_source(src: &impl CumulantSource, t: usize) -> Self {
        let n = src.n_train();
        let mut u = vec![0.0; n * n * n * n];
        let mut us = vec![0.0; n * n * n];
        let mut uss = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                uss[a * n + b] = src.star_star(t, a, b);
                for c in 0..n {
                    us[(a * n + b) * n + c] = src.star(t, [a, b, c]);
                    for d in 0..n {
                        u[((a * n + b) * n + c) * n + d] = src.train([a, b, c, d]);
                    }
                }
            }
        }
        Self { n, u, us, uss }
    }

    /// `[gp_mean, gp_var, fwc_mean, second moment, fwc_var]`.
    pub fn eval(&self, k: &DMatrix<f64>, y: &DVector<f64>, noise: f64, ks: &DVector<f64>, kss: f64) -> [f64; 5] {
        let n = self.n;
        let mut kt = k.clone();
        for i in 0..n {
            kt[(i, i)] += noise;
        }
        let inv = kt.lu().try_inverse().unwrap();
        let yt: Vec<f64> = (0..n).map(|a| (0..n).map(|b| inv[(a, b)] * y[b]).sum()).collect();
        let gp_mean: f64 = (0..n).map(|a| ks[a] * yt[a]).sum();
        let mut gp_var = kss;
        for a in 0..n {
            for b in 0..n {
                gp_var -= ks[a] * inv[(a, b)] * ks[b];
            }
        }
        let u = |a: usize, b: usize, c: usize, d: usize| self.u[((a * n + b) * n + c) * n + d];
        let us = |a: usize, b: usize, c: usize| self.us[(a * n + b) * n + c];
        let mut ut = vec![0.0; n * n * n];
        for a in 0..n {
            for b in 0..n {
                for e in 0..n {
                    let mut s = us(a, b, e);
                    for d in 0..n {
                        for beta in 0..n {
                            s -= u(a, b, e, d) * inv[(d, beta)] * ks[beta];
                        }
                    }
                    ut[(a * n + b) * n + e] = s;
                }
            }
        }
        let mut mean = 0.0;
        for a in 0..n {
            for b in 0..n {
                for e in 0..n {
                    mean += ut[(a * n + b) * n + e] * (yt[a] * yt[b] * yt[e] - 3.0 * inv[(a, b)] * yt[e]);
                }
            }
        }
        mean /= 6.0;
        let mut second = 0.0;
        for a in 0..n {
            for b in 0..n {
                let mut uss = self.uss[a * n + b];
                for e in 0..n {
                    for beta in 0..n {
                        uss -= (us(a, b, e) + ut[(a * n + b) * n + e]) * inv[(e, beta)] * ks[beta];
                    }
                }
                second += uss * (yt[a] * yt[b] - inv[(a, b)]);
            }
        }
        second *= 0.5;
        [gp_mean, gp_var, mean, second, second - 2.0 * gp_mean * mean]
    }
}

/// GP posterior mean and variance from a dense LU solve.
pub fn dense_gp(k: &DMatrix<f64>, y: &DVector<f64>, noise: f64, ks: &DVector<f64>, kss: f64) -> (f64, f64) {
    let kt = k + DMatrix::identity(k.nrows(), k.nrows()) * noise;
    let lu = kt.lu();
    let alpha = lu.solve(y).unwrap();
    let v = lu.solve(ks).unwrap();
    (ks.dot(&alpha), kss - ks.dot(&v))
}

// ---------------------------------------------------------------- properties

fn activation(i: usize) -> Activation {
    [Activation::Linear, Activation::Quadratic, Activation::Relu][i % 3]
}

/// Kernel matrices are exactly symmetric and positive semi-definite.
pub fn kernel_symmetric_psd(seed: u64, act: usize, depth: usize, n: usize, d: usize) -> Check {
    let act = activation(act);
    let spec = NetworkSpec {
        depth,
        activation: act,
        weight_var: vec![1.3; depth],
        readout_var: 0.8,
        bias_var: vec![0.1; depth + 1],
    };
    let x = InputSet::sample_sphere(n, d, &mut stream_rng(seed, 0));
    let k = spec.kernel_matrix(&x);
    let v = k.values();
    for i in 0..n {
        for j in 0..n {
            if v[(i, j)] != v[(j, i)] {
                return Err(format!("{act} depth {depth}: K[{i},{j}] != K[{j},{i}]"));
            }
        }
    }
    let eig = v.clone().symmetric_eigenvalues();
    let max = eig.iter().copied().fold(0.0, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -1e-10 * max.max(1.0) {
        return Err(format!("{act} depth {depth}: eigenvalue {min} (max {max})"));
    }
    Ok(())
}

fn permutations4() -> Vec<[usize; 4]> {
    let mut out = Vec::new();
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                for d in 0..4 {
                    let p = [a, b, c, d];
                    if (0..4).all(|i| p.contains(&i)) {
                        out.push(p);
                    }
                }
            }
        }
    }
    out
}

/// `U` is invariant under all 24 orderings of its points and scales as
/// `(ς_a²)²`.
pub fn cumulant_symmetric_and_scaling(seed: u64, act: usize, readout_var: f64, scale: f64) -> Check {
    let act = if activation(act) == Activation::Linear { Activation::Quadratic } else { activation(act) };
    let d = 12;
    let x = InputSet::sample_sphere(4, d, &mut stream_rng(seed, 1)).rows();
    let spec = NetworkSpec::two_layer(act, 1.0, readout_var);
    let u = PointCumulant::new(spec.clone(), CumulantModel::analytic(act, readout_var));
    let base = u.eval4([&x[0], &x[1], &x[2], &x[3]]);
    for p in permutations4() {
        let v = u.eval4([&x[p[0]], &x[p[1]], &x[p[2]], &x[p[3]]]);
        if (v - base).abs() > 1e-12 * base.abs().max(1e-300) {
            return Err(format!("{act}: U{p:?} = {v} vs {base}"));
        }
    }
    let scaled = PointCumulant::new(
        NetworkSpec::two_layer(act, 1.0, readout_var * scale),
        CumulantModel::analytic(act, readout_var * scale),
    );
    let v = scaled.eval4([&x[0], &x[1], &x[2], &x[3]]);
    let want = base * scale * scale;
    if (v - want).abs() > 1e-12 * want.abs().max(1e-300) {
        return Err(format!("{act}: U at ς_a² × {scale} is {v}, expected {want}"));
    }
    Ok(())
}

/// Reordering the training set leaves every prediction unchanged.
pub fn predictions_permutation_invariant(seed: u64, act: usize, n: usize) -> Check {
    let act = activation(act);
    let mut rng = stream_rng(seed, 2);
    let d = 5;
    let train = InputSet::sample_sphere(n, d, &mut rng);
    let test = InputSet::sample_sphere(3, d, &mut rng);
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let spec = NetworkSpec::two_layer(act, 1.0, 1.0);
    let model = CumulantModel::analytic(act, 1.0);
    let a = predict_network(&spec, &model, &train, &test, &DVector::from_vec(y.clone()), 0.1, 50.0, SliceMode::Materialized)
        .map_err(|e| e.to_string())?;
    let yp = DVector::from_iterator(n, perm.iter().map(|&i| y[i]));
    let b = predict_network(&spec, &model, &train.select(&perm), &test, &yp, 0.1, 50.0, SliceMode::Materialized)
        .map_err(|e| e.to_string())?;
    for (t, (p, q)) in a.points.iter().zip(&b.points).enumerate() {
        let pairs = [
            (p.gp_mean, q.gp_mean),
            (p.gp_var, q.gp_var),
            (p.fwc_mean, q.fwc_mean),
            (p.fwc_var, q.fwc_var),
        ];
        for (k, (u, v)) in pairs.iter().enumerate() {
            if (u - v).abs() > 1e-8 * u.abs().max(1e-3) {
                return Err(format!("{act} n={n} point {t} quantity {k}: {u} vs {v}"));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- langevin

/// Mean and standard error from batch means.
pub fn batch_mean_se(x: &[f64], batches: usize) -> (f64, f64) {
    let b = x.len() / batches;
    let means: Vec<f64> = (0..batches).map(|i| x[i * b..(i + 1) * b].iter().sum::<f64>() / b as f64).collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let v = means.iter().map(|u| (u - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (m, (v / batches as f64).sqrt())
}

/// Stationary variance of a one-dimensional quadratic loss against
/// `T/(γ + h)`. Returns `(measured, expected, se)`.
pub fn ou_variance() -> (f64, f64, f64) {
    // L(w) = (y − w x)², curvature h = 2x².
    let (x, y, gamma, t, dt) = (1.5, 0.7, 0.5, 0.3, 1e-3);
    let h = 2.0 * x * x;
    let mu = 2.0 * x * y / (gamma + h);
    let mut rng = stream_rng(21, 0);
    let mut w = [0.0];
    let burn = 20_000;
    let mut sq = Vec::with_capacity(4_000_000);
    for step in 0..(burn + 4_000_000) {
        let g = [-2.0 * x * (y - w[0] * x)];
        langevin_update(&mut w, &g, gamma, dt, t, &mut rng);
        if step >= burn {
            sq.push((w[0] - mu).powi(2));
        }
    }
    let (var, se) = batch_mean_se(&sq, 100);
    (var, t / (gamma + h), se)
}

/// Per-layer `⟨w²⟩` with its standard error, and the prior variance `T/γ`,
/// for a network trained on a loss that is identically zero.
pub fn no_data_second_moments(scaling: StepScaling, seed: u64) -> (Vec<(f64, f64)>, Vec<f64>) {
    let spec = NetworkSpec::two_layer(Activation::Quadratic, 1.0, 1.0);
    let (d, width) = (4, 16);
    let p = TrainProtocol::for_posterior(&spec, d, &[width], 0.2, 1e-3)
        .unwrap()
        .with_epochs(200_000, 5_000, 1)
        .with_scaling(scaling);
    // A single input at the origin makes every output, hence the loss, zero.
    let data = TrainData::new(DMatrix::zeros(d, 1), DMatrix::zeros(1, 1)).unwrap();
    let probes = DMatrix::zeros(d, 0);
    let mut state = ChainState::new(prior_init(&[d, width, 1], Activation::Quadratic, &p, seed).unwrap(), seed, 0);
    state.advance(&p, &data, &probes, p.burn_in).unwrap();
    let mut acc: Vec<DMatrix<f64>> = state.mlp().weights().iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect();
    let steps = p.n_epochs - p.burn_in;
    for e in 0..steps {
        state.advance(&p, &data, &probes, p.burn_in + e + 1).unwrap();
        for (a, w) in acc.iter_mut().zip(state.mlp().weights()) {
            a.zip_apply(w, |s, v| *s += v * v);
        }
    }
    let per_layer = acc
        .iter()
        .map(|a| {
            // Coordinates are independent chains: the spread of their time
            // averages gives the standard error.
            let vals: Vec<f64> = a.iter().map(|s| s / steps as f64).collect();
            let n = vals.len() as f64;
            let m = vals.iter().sum::<f64>() / n;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
            (m, (v / n).sqrt())
        })
        .collect();
    (per_layer, p.posterior().weight_vars)
}

pub fn finite_difference_check(act: usize, seed: u64) -> Check {
    let act = activation(act);
    let mut rng = stream_rng(seed, 9);
    let net = Mlp::sample(&[5, 7, 6, 2], act, &[0.4, 0.3, 0.2], &mut rng).map_err(|e| e.to_string())?;
    let x = DMatrix::from_fn(5, 8, |i, j| ((seed as usize + 3 * i + 7 * j) as f64 * 0.61).sin() * 1.3);
    let y = DMatrix::from_fn(2, 8, |i, j| ((i + j) as f64 * 0.37).cos());
    let data = TrainData::new(x, y).map_err(|e| e.to_string())?;
    let (_, grads) = net.loss_grad(&data);
    let h = 1e-5;
    let mut picks = stream_rng(seed, 10);
    for _ in 0..20 {
        let l = picks.random_range(0..net.n_layers());
        let k = picks.random_range(0..net.weights()[l].len());
        let mut plus = net.clone();
        plus.weights_mut()[l].as_mut_slice()[k] += h;
        let mut minus = net.clone();
        minus.weights_mut()[l].as_mut_slice()[k] -= h;
        let fd = (plus.loss(&data) - minus.loss(&data)) / (2.0 * h);
        let an = grads[l].as_slice()[k];
        if (fd - an).abs() > 1e-6 * an.abs().max(1.0) {
            return Err(format!("{act}: layer {l} coordinate {k}: analytic {an}, finite difference {fd}"));
        }
    }
    Ok(())
}

/// Stopping at `split`, writing a checkpoint and resuming reproduces the
/// uninterrupted chain bit for bit.
pub fn checkpoint_resume(seed: u64, split: u64) -> Check {
    let spec = NetworkSpec::two_layer(Activation::Quadratic, 1.0, 1.0);
    let p = TrainProtocol::for_posterior(&spec, 3, &[5], 0.2, 1e-3).unwrap().with_epochs(200, 20, 3);
    let x = DMatrix::from_fn(3, 4, |i, j| (i as f64 - 1.0) * (j as f64 + 1.0) * 0.3);
    let y = DMatrix::from_fn(1, 4, |_, j| (j as f64).sin());
    let data = TrainData::new(x.clone(), y).unwrap();
    let init = prior_init(&[3, 5, 1], Activation::Quadratic, &p, seed).unwrap();
    let mut straight = ChainState::new(init.clone(), seed, 4);
    straight.advance(&p, &data, &x, 200).unwrap();
    let mut part = ChainState::new(init, seed, 4);
    part.advance(&p, &data, &x, split).unwrap();
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &part).map_err(|e| e.to_string())?;
    let mut resumed = read_checkpoint(buf.as_slice()).map_err(|e| e.to_string())?;
    resumed.advance(&p, &data, &x, 200).unwrap();
    if resumed != straight {
        return Err(format!("seed {seed}, split {split}: resumed chain differs"));
    }
    Ok(())
}
