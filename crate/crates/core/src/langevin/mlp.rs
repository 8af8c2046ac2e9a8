//! Bias-free fully connected networks with a linear readout.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernels::{Activation, InputSet};
use crate::linalg::gemm_into;

/// Training pairs stored column-wise: `inputs` is `d × n`, `targets` is
/// `out × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainData {
    inputs: DMatrix<f64>,
    targets: DMatrix<f64>,
}

impl TrainData {
    pub fn new(inputs: DMatrix<f64>, targets: DMatrix<f64>) -> Result<Self> {
        if inputs.ncols() == 0 {
            return Err(Error::InvalidArgument("dataset is empty".into()));
        }
        if inputs.ncols() != targets.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} inputs for {} targets",
                inputs.ncols(),
                targets.ncols()
            )));
        }
        Ok(Self { inputs, targets })
    }

    /// Scalar targets for the rows of an input set.
    pub fn scalar(inputs: &InputSet, y: &[f64]) -> Result<Self> {
        Self::new(inputs.points().transpose(), DMatrix::from_row_slice(1, y.len(), y))
    }

    pub fn n(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn d(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn targets(&self) -> &DMatrix<f64> {
        &self.targets
    }

    /// The dataset repeated `k` times.
    pub fn repeated(&self, k: usize) -> Self {
        let n = self.n();
        let x = DMatrix::from_fn(self.d(), n * k, |i, j| self.inputs[(i, j % n)]);
        let y = DMatrix::from_fn(self.targets.nrows(), n * k, |i, j| self.targets[(i, j % n)]);
        Self { inputs: x, targets: y }
    }
}

/// Reusable buffers for gradient evaluation.
#[derive(Debug, Clone)]
pub struct GradScratch {
    z: DMatrix<f64>,
}

impl Default for GradScratch {
    fn default() -> Self {
        Self { z: DMatrix::zeros(0, 0) }
    }
}

/// Network `f(x) = A φ(W_L … φ(W_1 x))`.
///
/// `weights[l]` has shape `widths[l + 1] × widths[l]`; the last entry is the
/// readout.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    activation: Activation,
    widths: Vec<usize>,
    weights: Vec<DMatrix<f64>>,
}

impl Mlp {
    pub fn zeros(widths: &[usize], activation: Activation) -> Result<Self> {
        if widths.len() < 3 || widths.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "widths {widths:?}: need input, at least one hidden layer and an output, all non-zero"
            )));
        }
        let weights = widths.windows(2).map(|w| DMatrix::zeros(w[1], w[0])).collect();
        Ok(Self { activation, widths: widths.to_vec(), weights })
    }

    pub fn from_weights(activation: Activation, weights: Vec<DMatrix<f64>>) -> Result<Self> {
        if weights.len() < 2 {
            return Err(Error::InvalidArgument("need at least one hidden layer and a readout".into()));
        }
        let mut widths = vec![weights[0].ncols()];
        for (l, w) in weights.iter().enumerate() {
            if w.ncols() != *widths.last().unwrap() {
                return Err(Error::DimensionMismatch(format!(
                    "layer {l} takes {} inputs, previous layer has {}",
                    w.ncols(),
                    widths.last().unwrap()
                )));
            }
            widths.push(w.nrows());
        }
        Ok(Self { activation, widths, weights })
    }

    /// Independent Gaussian weights with per-layer variance `variances[l]`.
    pub fn sample<R: Rng + ?Sized>(
        widths: &[usize],
        activation: Activation,
        variances: &[f64],
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(widths, activation)?;
        if variances.len() != net.weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} variances for {} weight layers",
                variances.len(),
                net.weights.len()
            )));
        }
        for (w, v) in net.weights.iter_mut().zip(variances) {
            let s = v.sqrt();
            // Column-major fill order is part of the reproducibility contract.
            for x in w.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *x = s * z;
            }
        }
        Ok(net)
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum()
    }

    pub fn weights(&self) -> &[DMatrix<f64>] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [DMatrix<f64>] {
        &mut self.weights
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|x| x.is_finite()))
    }

    /// Output at a single input.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let col = DMatrix::from_column_slice(x.len(), 1, x);
        self.forward_batch(&col).column(0).iter().copied().collect()
    }

    /// Outputs for the columns of `x` (`d × m`), shape `out × m`.
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let last = self.weights.len() - 1;
        let mut h = x.clone();
        for w in &self.weights[..last] {
            let mut z = DMatrix::zeros(w.nrows(), h.ncols());
            gemm_into(&mut z, 1.0, w, false, &h, false, 0.0);
            z.apply(|v| *v = self.activation.apply(*v));
            h = z;
        }
        let mut out = DMatrix::zeros(self.output_dim(), h.ncols());
        gemm_into(&mut out, 1.0, &self.weights[last], false, &h, false, 0.0);
        out
    }

    /// Total squared error `Σ_α |y_α − f(x_α)|²`.
    pub fn loss(&self, data: &TrainData) -> f64 {
        (self.forward_batch(&data.inputs) - &data.targets).norm_squared()
    }

    /// Total squared error and its gradient with respect to every layer.
    pub fn loss_grad(&self, data: &TrainData) -> (f64, Vec<DMatrix<f64>>) {
        let mut grads: Vec<DMatrix<f64>> = self.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect();
        let loss = self.loss_grad_into(data, &mut grads);
        (loss, grads)
    }

    /// As [`Mlp::loss_grad`], writing into preallocated gradients.
    pub fn loss_grad_into(&self, data: &TrainData, grads: &mut [DMatrix<f64>]) -> f64 {
        self.loss_grad_with(data, grads, &mut GradScratch::default())
    }

    /// As [`Mlp::loss_grad_into`], reusing scratch memory between calls.
    pub fn loss_grad_with(&self, data: &TrainData, grads: &mut [DMatrix<f64>], scratch: &mut GradScratch) -> f64 {
        if self.weights.len() != 2 {
            return self.loss_grad_general(data, grads);
        }
        match self.activation {
            Activation::Linear => self.loss_grad_shallow(data, grads, scratch, |z| z, |_| 1.0),
            Activation::Quadratic => self.loss_grad_shallow(data, grads, scratch, |z| z * z, |z| 2.0 * z),
            Activation::Relu => {
                self.loss_grad_shallow(data, grads, scratch, |z| z.max(0.0), |z| if z > 0.0 { 1.0 } else { 0.0 })
            }
        }
    }

    /// One hidden layer: the readout, its gradient and the backpropagated
    /// signal are produced in a single sweep over the pre-activations, which
    /// are then overwritten in place.
    fn loss_grad_shallow(
        &self,
        data: &TrainData,
        grads: &mut [DMatrix<f64>],
        scratch: &mut GradScratch,
        phi: impl Fn(f64) -> f64,
        dphi: impl Fn(f64) -> f64,
    ) -> f64 {
        let (w, a) = (&self.weights[0], &self.weights[1]);
        let (hidden, m, out) = (w.nrows(), data.n(), a.nrows());
        let z = &mut scratch.z;
        if z.shape() != (hidden, m) {
            *z = DMatrix::zeros(hidden, m);
        }
        gemm_into(z, 1.0, w, false, &data.inputs, false, 0.0);
        let rows: Vec<Vec<f64>> = (0..out).map(|o| a.row(o).iter().copied().collect()).collect();
        let mut delta = DMatrix::zeros(out, m);
        for (alpha, col) in z.as_slice().chunks_exact(hidden).enumerate() {
            for (o, ar) in rows.iter().enumerate() {
                let f: f64 = ar.iter().zip(col).map(|(ai, zi)| ai * phi(*zi)).sum();
                delta[(o, alpha)] = f - data.targets[(o, alpha)];
            }
        }
        let loss = delta.norm_squared();
        delta *= 2.0;
        let ga = &mut grads[1];
        ga.fill(0.0);
        for (alpha, col) in z.as_mut_slice().chunks_exact_mut(hidden).enumerate() {
            if out == 1 {
                let d = delta[(0, alpha)];
                let g = ga.as_mut_slice();
                for ((zi, gi), ai) in col.iter_mut().zip(g.iter_mut()).zip(&rows[0]) {
                    *gi += d * phi(*zi);
                    *zi = ai * d * dphi(*zi);
                }
            } else {
                for (i, zi) in col.iter_mut().enumerate() {
                    let h = phi(*zi);
                    let mut back = 0.0;
                    for o in 0..out {
                        let d = delta[(o, alpha)];
                        ga[(o, i)] += d * h;
                        back += rows[o][i] * d;
                    }
                    *zi = back * dphi(*zi);
                }
            }
        }
        gemm_into(&mut grads[0], 1.0, z, false, &data.inputs, true, 0.0);
        loss
    }

    fn loss_grad_general(&self, data: &TrainData, grads: &mut [DMatrix<f64>]) -> f64 {
        let last = self.weights.len() - 1;
        let m = data.n();
        // hs[l] is the input to weight layer l; zs[l] its pre-activation.
        let mut hs: Vec<DMatrix<f64>> = Vec::with_capacity(last);
        let mut zs: Vec<DMatrix<f64>> = Vec::with_capacity(last);
        for (l, w) in self.weights[..last].iter().enumerate() {
            let mut z = DMatrix::zeros(w.nrows(), m);
            gemm_into(&mut z, 1.0, w, false, if l == 0 { &data.inputs } else { &hs[l - 1] }, false, 0.0);
            hs.push(z.map(|v| self.activation.apply(v)));
            zs.push(z);
        }
        let input = |l: usize| if l == 0 { &data.inputs } else { &hs[l - 1] };
        let mut delta = data.targets.clone();
        gemm_into(&mut delta, 1.0, &self.weights[last], false, input(last), false, -1.0);
        let loss = delta.norm_squared();
        delta *= 2.0;
        for l in (0..=last).rev() {
            gemm_into(&mut grads[l], 1.0, &delta, false, input(l), true, 0.0);
            if l == 0 {
                break;
            }
            let mut back = DMatrix::zeros(self.weights[l].ncols(), m);
            gemm_into(&mut back, 1.0, &self.weights[l], true, &delta, false, 0.0);
            back.zip_apply(&zs[l - 1], |b, z| *b *= self.activation.derivative(z));
            delta = back;
        }
        loss
    }

    /// Sum over samples of `|∂f(x_α)/∂W_l|²` for each layer, a trace bound on
    /// the Gauss–Newton curvature of the loss (up to the factor 2).
    pub fn sensitivity(&self, data: &TrainData) -> Vec<f64> {
        let mut total = vec![0.0; self.weights.len()];
        let mut grads: Vec<DMatrix<f64>> = self.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect();
        for a in 0..data.n() {
            let x = data.inputs.columns(a, 1).into_owned();
            for o in 0..self.output_dim() {
                // Loss (f_o − (f_o − 1/2))² = 1/4 has gradient ∂f_o.
                let f = self.forward_batch(&x);
                let mut y = f.clone();
                y[(o, 0)] -= 0.5;
                let single = TrainData { inputs: x.clone(), targets: y };
                self.loss_grad_into(&single, &mut grads);
                for (t, g) in total.iter_mut().zip(&grads) {
                    *t += g.norm_squared();
                }
            }
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn naive_forward(net: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let n = net.weights().len();
        for (l, w) in net.weights().iter().enumerate() {
            let mut next = vec![0.0; w.nrows()];
            for i in 0..w.nrows() {
                let mut acc = 0.0;
                for j in 0..w.ncols() {
                    acc += w[(i, j)] * h[j];
                }
                next[i] = if l + 1 < n { net.activation().apply(acc) } else { acc };
            }
            h = next;
        }
        h
    }

    #[test]
    fn shallow_path_matches_general() {
        let mut rng = stream_rng(6, 0);
        for act in [Activation::Linear, Activation::Quadratic, Activation::Relu] {
            for out in [1, 3] {
                let net = Mlp::sample(&[4, 9, out], act, &[0.3, 0.2], &mut rng).unwrap();
                let x = DMatrix::from_fn(4, 7, |i, j| ((i * 7 + j) as f64 * 0.53).cos());
                let y = DMatrix::from_fn(out, 7, |i, j| (i + j) as f64 * 0.1);
                let data = TrainData::new(x, y).unwrap();
                let mut g1: Vec<DMatrix<f64>> = net.weights().iter().map(|w| w * 0.0).collect();
                let mut g2 = g1.clone();
                let l1 = net.loss_grad_into(&data, &mut g1);
                let l2 = net.loss_grad_general(&data, &mut g2);
                assert!((l1 - l2).abs() < 1e-12 * l2.max(1.0));
                for (a, b) in g1.iter().zip(&g2) {
                    assert!((a - b).norm() < 1e-12 * b.norm().max(1.0));
                }
            }
        }
    }

    #[test]
    fn zero_weights_give_zero() {
        let net = Mlp::zeros(&[3, 5, 2], Activation::Relu).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 0.5]), vec![0.0, 0.0]);
    }

    #[test]
    fn single_quadratic_unit() {
        let w = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        let a = DMatrix::from_row_slice(1, 1, &[1.0]);
        let net = Mlp::from_weights(Activation::Quadratic, vec![w, a]).unwrap();
        assert_eq!(net.forward(&[1.7, 3.0, -2.0]), vec![1.7 * 1.7]);
    }

    #[test]
    fn matches_naive_forward() {
        let mut rng = stream_rng(3, 0);
        for act in [Activation::Linear, Activation::Quadratic, Activation::Relu] {
            let net = Mlp::sample(&[4, 7, 5, 2], act, &[0.25, 1.0 / 7.0, 0.2], &mut rng).unwrap();
            let x = [0.3, -1.2, 0.8, 2.0];
            let a = net.forward(&x);
            let b = naive_forward(&net, &x);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-12 * (1.0 + v.abs()));
            }
        }
    }

    #[test]
    fn duplicated_data_doubles_gradient() {
        let mut rng = stream_rng(4, 0);
        let net = Mlp::sample(&[3, 6, 1], Activation::Quadratic, &[0.3, 0.2], &mut rng).unwrap();
        let x = DMatrix::from_fn(3, 5, |i, j| ((i * 5 + j) as f64 * 0.37).sin());
        let y = DMatrix::from_fn(1, 5, |_, j| j as f64 * 0.1);
        let data = TrainData::new(x, y).unwrap();
        let (l1, g1) = net.loss_grad(&data);
        let (l2, g2) = net.loss_grad(&data.repeated(2));
        assert!((l2 - 2.0 * l1).abs() < 1e-12 * l1);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((b - a * 2.0).norm() < 1e-12 * (1.0 + a.norm()));
        }
    }

    #[test]
    fn perfect_fit_has_zero_gradient() {
        let mut rng = stream_rng(5, 0);
        let net = Mlp::sample(&[2, 4, 1], Activation::Relu, &[0.5, 0.25], &mut rng).unwrap();
        let x = DMatrix::from_fn(2, 3, |i, j| (i + 2 * j) as f64 - 1.5);
        let y = net.forward_batch(&x);
        let (loss, grads) = net.loss_grad(&TrainData::new(x, y).unwrap());
        // Zero up to summation order.
        assert!(loss < 1e-28);
        assert!(grads.iter().all(|g| g.norm() < 1e-13));
    }

    #[test]
    fn sensitivity_of_linear_readout() {
        // For f = a·x (one hidden linear unit, w = 1), ∂f/∂a = w·x.
        let w = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let a = DMatrix::from_row_slice(1, 1, &[2.0]);
        let net = Mlp::from_weights(Activation::Linear, vec![w, a]).unwrap();
        let data = TrainData::new(DMatrix::from_row_slice(2, 1, &[3.0, 4.0]), DMatrix::zeros(1, 1)).unwrap();
        let s = net.sensitivity(&data);
        assert!((s[1] - 9.0).abs() < 1e-12);
        assert!((s[0] - 4.0 * 25.0).abs() < 1e-12);
    }
}
