//! Quadratic teacher on the sphere.

use nalgebra::{DMatrix, DVector};
use nnsp_core::kernels::InputSet;
use nnsp_core::rng::stream_rng;
use rand::Rng;
use rand_distr::StandardNormal;

const MATRIX_STREAM: u64 = 0;
const TRAIN_STREAM: u64 = 1;
const TEST_STREAM: u64 = 2;

/// Target `y(x) = xᵀAx / scale` with inputs uniform on the sphere of
/// radius `√d`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub a: DMatrix<f64>,
    /// Divisor applied to `xᵀAx`; 1 when not normalized.
    pub scale: f64,
    pub train: InputSet,
    pub test: InputSet,
    pub y_train: Vec<f64>,
    pub y_test: Vec<f64>,
}

impl Dataset {
    pub fn target(&self, x: &[f64]) -> f64 {
        quadratic_form(&self.a, x) / self.scale
    }

    pub fn d(&self) -> usize {
        self.a.nrows()
    }
}

pub fn quadratic_form(a: &DMatrix<f64>, x: &[f64]) -> f64 {
    let v = DVector::from_column_slice(x);
    v.dot(&(a * &v))
}

/// `E[(xᵀAx)²]` for `x` uniform on the sphere of radius `√d`:
/// `d/(d+2) · (tr(S)² + 2 tr(S²))` with `S` the symmetric part of `A`.
pub fn target_second_moment(a: &DMatrix<f64>) -> f64 {
    let d = a.nrows() as f64;
    let s = (a + a.transpose()) * 0.5;
    let tr = s.trace();
    d / (d + 2.0) * (tr * tr + 2.0 * (&s * &s).trace())
}

/// `A` and the test inputs depend only on `(d, n_test, seed)`, so the test
/// set is shared by every training-set size drawn with the same seed.
pub fn gen_quadratic_dataset(d: usize, n_train: usize, n_test: usize, seed: u64, normalize: bool) -> Dataset {
    assert!(d >= 2, "input dimension must be at least 2");
    let mut rng = stream_rng(seed, MATRIX_STREAM);
    let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let scale = if normalize { target_second_moment(&a).sqrt() } else { 1.0 };
    let train = InputSet::sample_sphere(n_train, d, &mut stream_rng(seed, TRAIN_STREAM));
    let test = InputSet::sample_sphere(n_test, d, &mut stream_rng(seed, TEST_STREAM));
    let eval = |set: &InputSet| set.rows().iter().map(|x| quadratic_form(&a, x) / scale).collect::<Vec<_>>();
    let (y_train, y_test) = (eval(&train), eval(&test));
    Dataset { a, scale, train, test, y_train, y_test }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalized_target_has_unit_second_moment() {
        let ds = gen_quadratic_dataset(6, 0, 200_000, 3, true);
        let m2 = ds.y_test.iter().map(|y| y * y).sum::<f64>() / ds.y_test.len() as f64;
        assert!((m2 - 1.0).abs() < 0.02, "{m2}");
    }

    #[test]
    fn test_set_does_not_depend_on_train_size() {
        let a = gen_quadratic_dataset(4, 10, 7, 9, true);
        let b = gen_quadratic_dataset(4, 300, 7, 9, true);
        assert_eq!(a.test.points(), b.test.points());
        assert_eq!(a.y_test, b.y_test);
        assert_eq!(a.scale, b.scale);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn inputs_lie_on_the_sphere_and_target_is_even(seed in 0u64..1000, d in 2usize..12) {
            let ds = gen_quadratic_dataset(d, 5, 5, seed, seed % 2 == 0);
            for x in ds.train.rows().iter().chain(ds.test.rows().iter()) {
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                prop_assert!((norm - (d as f64).sqrt()).abs() < 1e-9);
                let neg: Vec<f64> = x.iter().map(|v| -v).collect();
                prop_assert_eq!(ds.target(x), ds.target(&neg));
            }
        }

        #[test]
        fn fixed_seed_is_reproducible(seed in 0u64..1000) {
            let a = gen_quadratic_dataset(5, 8, 4, seed, true);
            let b = gen_quadratic_dataset(5, 8, 4, seed, true);
            prop_assert_eq!(a.train.points(), b.train.points());
            prop_assert_eq!(a.y_train, b.y_train);
        }
    }
}
