//! Dense symmetric linear algebra helpers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Default relative jitter added to the diagonal before factorization.
pub const DEFAULT_JITTER: f64 = 1e-10;

/// Cholesky factor of a symmetric positive-definite matrix, obtained with
/// escalating diagonal jitter.
///
/// The matrix is first factored as given. On failure `rel_jitter · max|diag|`
/// is added to the diagonal, and each further failure multiplies the jitter
/// by ten until it would exceed `1e-6 · trace / m`.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl SpdFactor {
    pub fn new(matrix: &DMatrix<f64>, rel_jitter: f64) -> Result<Self> {
        let m = matrix.nrows();
        if m == 0 || matrix.ncols() != m {
            return Err(Error::DimensionMismatch(format!(
                "expected a non-empty square matrix, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
        }
        let max_diag = matrix.diagonal().iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let trace = matrix.trace().abs();
        let ceiling = (1e-6 * trace / m as f64).max(rel_jitter * max_diag);
        let mut jitter = 0.0;
        loop {
            let mut a = matrix.clone();
            for i in 0..m {
                a[(i, i)] += jitter;
            }
            if let Some(chol) = Cholesky::new(a) {
                return Ok(Self { chol, jitter });
            }
            if jitter >= ceiling || ceiling == 0.0 {
                return Err(Error::Factorization { jitter });
            }
            jitter = if jitter == 0.0 {
                if rel_jitter * max_diag > 0.0 { rel_jitter * max_diag } else { ceiling * 1e-6 }
            } else {
                (jitter * 10.0).min(ceiling)
            };
        }
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// Jitter actually added to the diagonal.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// Explicit inverse, assembled from column solves.
    pub fn inverse(&self) -> DMatrix<f64> {
        let mut inv = self.chol.inverse();
        symmetrize(&mut inv);
        inv
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }
}

/// Replace `a` by `(a + aᵀ)/2`.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Eigenpairs of a symmetric matrix sorted by descending eigenvalue.
pub fn sym_eigen_desc(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let fa = faer::Mat::<f64>::from_fn(n, n, |i, j| a[(i, j)]);
    let (values, vectors) = match fa.self_adjoint_eigen(faer::Side::Lower) {
        Ok(eig) => {
            let s = eig.S().column_vector();
            let u = eig.U();
            // faer returns ascending order
            (
                DVector::from_fn(n, |k, _| s[n - 1 - k]),
                DMatrix::from_fn(n, n, |i, k| u[(i, n - 1 - k)]),
            )
        }
        Err(_) => {
            let eig = SymmetricEigen::new(a.clone());
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
            (
                DVector::from_fn(n, |k, _| eig.eigenvalues[order[k]]),
                DMatrix::from_fn(n, n, |i, k| eig.eigenvectors[(i, order[k])]),
            )
        }
    };
    (values, vectors)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(a.clone()).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// `c ← α op(a) op(b) + β c`, where `op` optionally transposes. Transposes
/// are expressed through strides, so nothing is copied.
pub fn gemm_into(c: &mut DMatrix<f64>, alpha: f64, a: &DMatrix<f64>, ta: bool, b: &DMatrix<f64>, tb: bool, beta: f64) {
    let (m, k) = if ta { (a.ncols(), a.nrows()) } else { (a.nrows(), a.ncols()) };
    let (kb, n) = if tb { (b.ncols(), b.nrows()) } else { (b.nrows(), b.ncols()) };
    assert!(k == kb && c.nrows() == m && c.ncols() == n, "gemm_into: incompatible shapes");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.scale_mut(beta);
        return;
    }
    // Column-major storage: element (i, j) lives at i + j * nrows.
    let strides = |x: &DMatrix<f64>, t: bool| {
        let (r, cs) = (1isize, x.nrows() as isize);
        if t {
            (cs, r)
        } else {
            (r, cs)
        }
    };
    let (rsa, csa) = strides(a, ta);
    let (rsb, csb) = strides(b, tb);
    let rsc = 1isize;
    let csc = m as isize;
    // SAFETY: the pointers cover matrices whose shapes match the declared
    // dimensions and strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}
