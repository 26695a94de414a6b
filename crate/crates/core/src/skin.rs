//! Per-vertex (or per-point) joint influence weights.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Matrix;

/// Tolerance on row sums for a matrix to count as lying on the simplex.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

/// A `rows × joints` matrix whose rows lie on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix", into = "Matrix")]
pub struct SkinMatrix(Matrix);

impl SkinMatrix {
    /// Validates that every row is nonnegative and sums to 1.
    pub fn new(m: Matrix) -> Result<Self> {
        for (i, row) in m.iter_rows().enumerate() {
            if row.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
                return Err(Error::InvalidSkin(format!("row {i} has a negative or non-finite entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > SIMPLEX_TOLERANCE {
                return Err(Error::InvalidSkin(format!("row {i} sums to {s}")));
            }
        }
        Ok(Self(m))
    }

    /// Clamps to `[0, 1]`, zeros columns where `mask` is false and rescales
    /// every row to sum to one. Rows left with no mass take `fallback`'s row
    /// (or a uniform row over the valid columns when there is no fallback).
    pub fn from_unnormalized(mut m: Matrix, mask: &[bool], fallback: Option<&Matrix>) -> Result<Self> {
        if mask.len() != m.cols() {
            return Err(Error::DimensionMismatch { expected: m.cols(), found: mask.len() });
        }
        let valid = mask.iter().filter(|&&b| b).count();
        if valid == 0 {
            return Err(Error::arg("no valid joints"));
        }
        for r in 0..m.rows() {
            let row = m.row_mut(r);
            for (w, &ok) in row.iter_mut().zip(mask) {
                *w = if ok && w.is_finite() { w.clamp(0.0, 1.0) } else { 0.0 };
            }
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter_mut().for_each(|w| *w /= s);
            } else if let Some(fb) = fallback {
                row.copy_from_slice(fb.row(r));
            } else {
                for (w, &ok) in row.iter_mut().zip(mask) {
                    *w = if ok { 1.0 / valid as f64 } else { 0.0 };
                }
            }
        }
        SkinMatrix::new(m)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn joints(&self) -> usize {
        self.0.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    /// Copy restricted to the first `n` columns, rows renormalized. Used to
    /// drop padding columns beyond a skeleton's joint count.
    pub fn truncate_joints(&self, n: usize) -> Result<SkinMatrix> {
        if n > self.joints() {
            return Err(Error::DimensionMismatch { expected: self.joints(), found: n });
        }
        let mut data = Vec::with_capacity(self.rows() * n);
        for row in self.0.iter_rows() {
            data.extend_from_slice(&row[..n]);
        }
        let mask = alloc::vec![true; n];
        SkinMatrix::from_unnormalized(Matrix::from_vec(self.rows(), n, data)?, &mask, None)
    }

    /// Copy padded with zero columns up to `n` joints.
    pub fn pad_joints(&self, n: usize) -> Result<SkinMatrix> {
        if n < self.joints() {
            return Err(Error::DimensionMismatch { expected: self.joints(), found: n });
        }
        let mut m = Matrix::zeros(self.rows(), n);
        for r in 0..self.rows() {
            m.row_mut(r)[..self.joints()].copy_from_slice(self.row(r));
        }
        Ok(SkinMatrix(m))
    }
}

impl TryFrom<Matrix> for SkinMatrix {
    type Error = Error;
    fn try_from(m: Matrix) -> Result<Self> {
        SkinMatrix::new(m)
    }
}

impl From<SkinMatrix> for Matrix {
    fn from(s: SkinMatrix) -> Matrix {
        s.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn rejects_off_simplex_rows() {
        let m = Matrix::from_rows(&[vec![0.5, 0.6]]).unwrap();
        assert!(SkinMatrix::new(m).is_err());
        let m = Matrix::from_rows(&[vec![1.5, -0.5]]).unwrap();
        assert!(SkinMatrix::new(m).is_err());
    }

    #[test]
    fn renormalizes_and_masks() {
        let m = Matrix::from_rows(&[vec![2.0, 0.5, 0.3], vec![-1.0, -1.0, 0.0]]).unwrap();
        let s = SkinMatrix::from_unnormalized(m, &[true, true, false], None).unwrap();
        assert_eq!(s.row(0), &[1.0 / 1.5, 0.5 / 1.5, 0.0]);
        assert_eq!(s.row(1), &[0.5, 0.5, 0.0]);
    }
}
