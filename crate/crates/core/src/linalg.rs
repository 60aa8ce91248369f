//! Small dense linear-algebra helpers shared by the model and the solvers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{ArdError, Result};

/// First jitter level, relative to `trace / dim`.
pub const JITTER_START: f64 = 1e-10;
/// Last jitter level tried before giving up, relative to `trace / dim`.
pub const JITTER_MAX: f64 = 1e-4;

/// A Cholesky factor together with the diagonal jitter that was needed to obtain it.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    pub chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

impl SpdFactor {
    /// `log|A + jitter I|` from the factor diagonal.
    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        symmetrize(self.chol.inverse())
    }
}

/// Cholesky factorization of a symmetric positive (semi)definite matrix.
///
/// The plain matrix is tried first. On failure a diagonal jitter of
/// `1e-10 * trace / dim` is added and escalated by a factor of ten up to
/// `1e-4 * trace / dim`. If all attempts fail, the error carries `name` and an
/// eigenvalue-based condition estimate.
pub fn cholesky_jittered(m: &DMatrix<f64>, name: &str) -> Result<SpdFactor> {
    let dim = m.nrows();
    if dim == 0 || dim != m.ncols() {
        return Err(ArdError::input(format!(
            "{name}: expected a non-empty square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(ArdError::Numerical {
            matrix: name.to_string(),
            condition: f64::INFINITY,
            detail: "matrix has non-finite entries".into(),
        });
    }
    if let Some(chol) = Cholesky::new(m.clone()) {
        return Ok(SpdFactor { chol, jitter: 0.0 });
    }
    let scale = (m.trace() / dim as f64).abs().max(f64::MIN_POSITIVE);
    let mut level = JITTER_START;
    while level <= JITTER_MAX * (1.0 + 1e-9) {
        let jitter = level * scale;
        let mut shifted = m.clone();
        for i in 0..dim {
            shifted[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(shifted) {
            return Ok(SpdFactor { chol, jitter });
        }
        level *= 10.0;
    }
    Err(ArdError::Numerical {
        matrix: name.to_string(),
        condition: condition_estimate(m),
        detail: format!("Cholesky failed with jitter up to {:.1e} * trace/dim", JITTER_MAX),
    })
}

/// Ratio of extreme eigenvalue magnitudes; infinite when the matrix is not positive definite.
pub fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(symmetrize(m.clone()));
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn symmetrize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// `diag(A B Aᵀ)` for a row-major view of `A` without forming the product.
pub fn diag_quadratic_rows(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DVector<f64> {
    let ab = a * b;
    DVector::from_iterator(
        a.nrows(),
        (0..a.nrows()).map(|i| ab.row(i).dot(&a.row(i))),
    )
}
