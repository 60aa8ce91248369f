use nalgebra::{DMatrix, DVector};

use crate::error::{ArdError, Result};

/// Design matrix and targets. Immutable once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(ArdError::input(format!(
                "dataset needs n >= 1 and d >= 1, got {}x{}",
                x.nrows(),
                x.ncols()
            )));
        }
        if x.nrows() != y.len() {
            return Err(ArdError::input(format!(
                "design matrix has {} rows but {} targets",
                x.nrows(),
                y.len()
            )));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            // column-major storage
            return Err(ArdError::input(format!(
                "non-finite design entry at row {}, column {}",
                pos % x.nrows(),
                pos / x.nrows()
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(ArdError::input(format!("non-finite target at row {i}")));
        }
        Ok(Self { x, y })
    }

    /// Builds a dataset from row vectors.
    pub fn from_rows(rows: &[Vec<f64>], y: &[f64]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != d) {
            return Err(ArdError::input(format!(
                "row {i} has {} features, expected {d}",
                rows[i].len()
            )));
        }
        let x = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Self::new(x, DVector::from_column_slice(y))
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// New dataset holding the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.n()) {
            return Err(ArdError::input(format!("row index {bad} out of range")));
        }
        let x = self.x.select_rows(rows.iter());
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&r| self.y[r]));
        Self::new(x, y)
    }

    /// Same design matrix, different targets.
    pub fn with_targets(&self, y: DVector<f64>) -> Result<Self> {
        Self::new(self.x.clone(), y)
    }

    pub fn into_parts(self) -> (DMatrix<f64>, DVector<f64>) {
        (self.x, self.y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatch_and_nonfinite() {
        let x = DMatrix::from_element(3, 2, 1.0);
        assert!(Dataset::new(x.clone(), DVector::zeros(2)).is_err());
        let mut bad = x.clone();
        bad[(1, 1)] = f64::NAN;
        let err = Dataset::new(bad, DVector::zeros(3)).unwrap_err();
        assert_eq!(
            err,
            ArdError::Input("non-finite design entry at row 1, column 1".into())
        );
        assert!(Dataset::new(DMatrix::zeros(0, 2), DVector::zeros(0)).is_err());
    }

    #[test]
    fn select_rows_keeps_order() {
        let ds = Dataset::from_rows(&[vec![1.0], vec![2.0], vec![3.0]], &[10.0, 20.0, 30.0]).unwrap();
        let sub = ds.select_rows(&[2, 0]).unwrap();
        assert_eq!(sub.y().as_slice(), &[30.0, 10.0]);
        assert_eq!(sub.x()[(0, 0)], 3.0);
        assert!(ds.select_rows(&[3]).is_err());
    }
}
