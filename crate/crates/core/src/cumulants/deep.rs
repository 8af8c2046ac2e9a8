use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::Matrix4;

use super::tensor::SymTensor4;
use crate::error::{Error, Result};
use crate::kernels::{deep_kernel_recursion, gaussian_product_expectation, InputSet, LayerKernels, NetworkSpec};
use crate::quadrature::NormalQuadrature;

/// Output of [`deep_u_recursion`].
#[derive(Debug, Clone)]
pub struct DeepCumulant {
    pub u: SymTensor4,
    pub kernels: LayerKernels,
    /// Blocks whose covariance had negative eigenvalues clipped to zero.
    pub clip_warnings: usize,
}

/// Fourth cumulant of the output over all input quadruples by nested
/// Gaussian quadrature on the last hidden layer's pre-activation kernel.
///
/// Lower-layer cumulants are not propagated: the last hidden layer is
/// treated as exactly Gaussian.
pub fn deep_u_recursion(spec: &NetworkSpec, inputs: &InputSet, quad_order: usize) -> Result<DeepCumulant> {
    if quad_order < 8 {
        return Err(Error::InvalidArgument(format!("quad_order {quad_order} < 8")));
    }
    let kernels = deep_kernel_recursion(spec, inputs, quad_order)?;
    let l = &kernels.layers[spec.depth - 1];
    let quad = NormalQuadrature::new(quad_order);
    let act = spec.activation;
    let w2 = spec.readout_var * spec.readout_var;
    let clips = AtomicUsize::new(0);
    let m = l.m();
    let pair = |a: usize, b: usize| -> f64 {
        let mut c = Matrix4::zeros();
        c[(0, 0)] = l.get(a, a);
        c[(1, 1)] = l.get(b, b);
        c[(0, 1)] = l.get(a, b);
        c[(1, 0)] = l.get(a, b);
        gaussian_product_expectation(act, &c, 2, &quad).0
    };
    let u = SymTensor4::from_fn(m, |q| {
        let block = Matrix4::from_fn(|i, j| l.get(q[i], q[j]));
        let (mu4, clipped) = gaussian_product_expectation(act, &block, 4, &quad);
        if clipped {
            clips.fetch_add(1, Ordering::Relaxed);
        }
        let p = |i: usize, j: usize| pair(q[i], q[j]);
        w2 * (3.0 * mu4 - p(0, 1) * p(2, 3) - p(0, 2) * p(1, 3) - p(0, 3) * p(1, 2))
    });
    Ok(DeepCumulant { u, kernels, clip_warnings: clips.into_inner() })
}
