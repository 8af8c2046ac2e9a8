use nalgebra::{DMatrix, Matrix4};
use rayon::prelude::*;

use super::tensor::{SymTensor3, SymTensor4};
use super::CumulantModel;
use crate::error::{Error, Result};
use crate::kernels::{Activation, KernelMatrix};

/// Largest training set stored as a materialized rank-4 tensor by default.
pub const DEFAULT_MATERIALIZATION_CAP: usize = 150;

/// Storage requested from [`build_cumulant_slices`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceMode {
    /// Materialize up to the cap, stream above it.
    Auto,
    Materialized,
    Streaming,
}

/// Read access to the three cumulant slices used by the finite-width
/// corrections: `U` over train points, `U*` with one test point and `U**`
/// with the test point twice.
pub trait CumulantSource: Sync {
    fn n_train(&self) -> usize;
    fn n_test(&self) -> usize;
    fn train(&self, q: [usize; 4]) -> f64;
    fn star(&self, t: usize, q: [usize; 3]) -> f64;
    fn star_star(&self, t: usize, a: usize, b: usize) -> f64;

    /// Visit every sorted train triple `a ≤ b ≤ c` with `U*_t,abc`.
    fn for_each_star(&self, t: usize, f: &mut dyn FnMut([usize; 3], f64)) {
        let n = self.n_train();
        for c in 0..n {
            for b in 0..=c {
                for a in 0..=b {
                    f([a, b, c], self.star(t, [a, b, c]));
                }
            }
        }
    }

    /// Parallel fold over sorted train quadruples, split by the last index.
    /// `fold` receives the accumulator, the sorted quadruple and `U`.
    fn fold_train_slab(&self, l: usize, f: &mut dyn FnMut([usize; 4], f64)) {
        for k in 0..=l {
            for j in 0..=k {
                for i in 0..=j {
                    f([i, j, k, l], self.train([i, j, k, l]));
                }
            }
        }
    }
}

/// Parallel fold over all sorted train quadruples of a source.
pub fn fold_train<S, A, I, F, R>(src: &S, init: I, fold: F, reduce: R) -> A
where
    S: CumulantSource + ?Sized,
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(&mut A, [usize; 4], f64) + Sync + Send,
    R: Fn(A, A) -> A + Sync + Send,
{
    (0..src.n_train())
        .into_par_iter()
        .fold(&init, |mut acc, l| {
            src.fold_train_slab(l, &mut |q, v| fold(&mut acc, q, v));
            acc
        })
        .reduce(&init, reduce)
}

#[derive(Debug, Clone)]
enum Storage {
    Materialized {
        train: SymTensor4,
        star: Vec<SymTensor3>,
        star_star: Vec<DMatrix<f64>>,
    },
    Streaming {
        l: DMatrix<f64>,
        model: CumulantModel,
    },
}

/// Cumulant slices over an index set of train points followed by test
/// points.
#[derive(Debug, Clone)]
pub struct CumulantSlices {
    n_train: usize,
    n_test: usize,
    storage: Storage,
}

impl CumulantSlices {
    /// Slices from explicit values.
    pub fn from_parts(train: SymTensor4, star: Vec<SymTensor3>, star_star: Vec<DMatrix<f64>>) -> Result<Self> {
        let n = train.n();
        if star.len() != star_star.len()
            || star.iter().any(|s| s.n() != n)
            || star_star.iter().any(|m| m.nrows() != n || m.ncols() != n)
        {
            return Err(Error::DimensionMismatch("inconsistent cumulant slice shapes".into()));
        }
        Ok(Self { n_train: n, n_test: star.len(), storage: Storage::Materialized { train, star, star_star } })
    }

    /// Identically zero slices.
    pub fn zeros(n_train: usize, n_test: usize) -> Self {
        Self::from_parts(
            SymTensor4::zeros(n_train),
            (0..n_test).map(|_| SymTensor3::from_fn(n_train, |_| 0.0)).collect(),
            (0..n_test).map(|_| DMatrix::zeros(n_train, n_train)).collect(),
        )
        .expect("consistent shapes")
    }

    pub fn is_materialized(&self) -> bool {
        matches!(self.storage, Storage::Materialized { .. })
    }

    /// Materialized copy (ignores the cap).
    pub fn materialize(&self) -> Self {
        if self.is_materialized() {
            return self.clone();
        }
        let n = self.n_train;
        let train = SymTensor4::from_fn(n, |q| self.train(q));
        let star = (0..self.n_test).map(|t| SymTensor3::from_fn(n, |q| self.star(t, q))).collect();
        let star_star = (0..self.n_test)
            .map(|t| DMatrix::from_fn(n, n, |a, b| self.star_star(t, a, b)))
            .collect();
        Self { n_train: n, n_test: self.n_test, storage: Storage::Materialized { train, star, star_star } }
    }

    fn block(l: &DMatrix<f64>, ids: [usize; 4]) -> Matrix4<f64> {
        Matrix4::from_fn(|i, j| l[(ids[i], ids[j])])
    }

    fn stream_value(&self, ids: [usize; 4]) -> f64 {
        match &self.storage {
            Storage::Streaming { l, model } => model.u_block(&Self::block(l, ids)).unwrap_or(f64::NAN),
            Storage::Materialized { .. } => unreachable!(),
        }
    }
}

impl CumulantSource for CumulantSlices {
    fn n_train(&self) -> usize {
        self.n_train
    }

    fn n_test(&self) -> usize {
        self.n_test
    }

    fn train(&self, q: [usize; 4]) -> f64 {
        match &self.storage {
            Storage::Materialized { train, .. } => train.get(q[0], q[1], q[2], q[3]),
            Storage::Streaming { .. } => self.stream_value(q),
        }
    }

    fn star(&self, t: usize, q: [usize; 3]) -> f64 {
        match &self.storage {
            Storage::Materialized { star, .. } => star[t].get(q[0], q[1], q[2]),
            Storage::Streaming { .. } => self.stream_value([self.n_train + t, q[0], q[1], q[2]]),
        }
    }

    fn star_star(&self, t: usize, a: usize, b: usize) -> f64 {
        match &self.storage {
            Storage::Materialized { star_star, .. } => star_star[t][(a, b)],
            Storage::Streaming { .. } => {
                let s = self.n_train + t;
                self.stream_value([s, s, a, b])
            }
        }
    }

    fn for_each_star(&self, t: usize, f: &mut dyn FnMut([usize; 3], f64)) {
        match &self.storage {
            Storage::Materialized { star, .. } => star[t].iter().for_each(|(q, v)| f(q, v)),
            Storage::Streaming { .. } => {
                let n = self.n_train;
                for c in 0..n {
                    for b in 0..=c {
                        for a in 0..=b {
                            f([a, b, c], self.star(t, [a, b, c]));
                        }
                    }
                }
            }
        }
    }

    fn fold_train_slab(&self, l: usize, f: &mut dyn FnMut([usize; 4], f64)) {
        match &self.storage {
            Storage::Materialized { train, .. } => {
                let mut idx = SymTensor4::sorted_index(&[0, 0, 0, l]);
                let values = train.values();
                for k in 0..=l {
                    for j in 0..=k {
                        for i in 0..=j {
                            f([i, j, k, l], values[idx]);
                            idx += 1;
                        }
                    }
                }
            }
            Storage::Streaming { .. } => {
                for k in 0..=l {
                    for j in 0..=k {
                        for i in 0..=j {
                            f([i, j, k, l], self.stream_value([i, j, k, l]));
                        }
                    }
                }
            }
        }
    }
}

/// Build the slices `U`, `U*`, `U**` from the last hidden pre-activation
/// kernel over train points followed by test points.
pub fn build_cumulant_slices(
    l_all: &KernelMatrix,
    n_train: usize,
    model: &CumulantModel,
    mode: SliceMode,
    cap: usize,
) -> Result<CumulantSlices> {
    let m = l_all.m();
    if n_train == 0 || n_train > m {
        return Err(Error::DimensionMismatch(format!("{n_train} train points in a kernel of size {m}")));
    }
    if model.activation == Activation::Relu {
        for i in 0..m {
            let v = l_all.get(i, i);
            if !(v > 0.0) {
                return Err(Error::NonPositiveDiagonal { index: i, value: v });
            }
        }
    }
    let streaming = CumulantSlices {
        n_train,
        n_test: m - n_train,
        storage: Storage::Streaming { l: l_all.values().clone(), model: model.clone() },
    };
    match mode {
        SliceMode::Streaming => Ok(streaming),
        SliceMode::Materialized if n_train > cap => Err(Error::MaterializationCap { n: n_train, cap }),
        SliceMode::Auto if n_train > cap => Ok(streaming),
        _ => Ok(streaming.materialize()),
    }
}
