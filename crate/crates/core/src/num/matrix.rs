//! Dense row-major `f64` matrix, sized for desk-scale networks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix of 64-bit reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Build from a flat row-major buffer. Rejects length mismatches and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "buffer of length {} cannot fill a {}x{} matrix",
                data.len(),
                rows,
                cols
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite entry while building a {rows}x{cols} matrix"
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged row lengths".into()));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    /// Identity matrix of size `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1))
    }

    /// `self (r x k) * other (k x c)`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "matmul {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let lhs_row = self.row(r);
            let out_row = out.row_mut(r);
            for (k, &lv) in lhs_row.iter().enumerate() {
                if lv == 0.0 {
                    continue;
                }
                let rhs_row = other.row(k);
                for (o, &rv) in out_row.iter_mut().zip(rhs_row) {
                    *o += lv * rv;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ (k x r) * other (k x c)` without materializing the transpose.
    pub fn transpose_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::Dimension(format!(
                "transpose_matmul {}x{} * {}x{}",
                self.cols, self.rows, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let lhs_row = self.row(k);
            let rhs_row = other.row(k);
            for (i, &lv) in lhs_row.iter().enumerate() {
                if lv == 0.0 {
                    continue;
                }
                let out_row = out.row_mut(i);
                for (o, &rv) in out_row.iter_mut().zip(rhs_row) {
                    *o += lv * rv;
                }
            }
        }
        Ok(out)
    }

    /// `self (r x k) * otherᵀ (c x k)` without materializing the transpose.
    pub fn matmul_transpose(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::Dimension(format!(
                "matmul_transpose {}x{} * {}x{}",
                self.rows, self.cols, other.cols, other.rows
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for r in 0..self.rows {
            let lhs_row = self.row(r);
            let out_row = out.row_mut(r);
            for (c, o) in out_row.iter_mut().enumerate() {
                let rhs_row = other.row(c);
                *o = lhs_row.iter().zip(rhs_row).map(|(a, b)| a * b).sum();
            }
        }
        Ok(out)
    }

    /// Add `bias` to every row.
    pub fn add_row_broadcast(&mut self, bias: &[f64]) -> Result<()> {
        if bias.len() != self.cols {
            return Err(Error::Dimension(format!(
                "bias of length {} against {} columns",
                bias.len(),
                self.cols
            )));
        }
        for row in self.data.chunks_exact_mut(self.cols) {
            for (v, b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dimension(format!(
                "add {}x{} + {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Copy the given source rows into a new matrix, in order.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Matrix> {
        let mut out = Matrix::zeros(indices.len(), self.cols);
        for (dst, &src) in indices.iter().enumerate() {
            if src >= self.rows {
                return Err(Error::Usage(format!(
                    "row index {src} out of range for {} rows",
                    self.rows
                )));
            }
            out.row_mut(dst).copy_from_slice(self.row(src));
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Guard used after numerically risky operations.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::Numerical(format!("non-finite values in {context}")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(matches!(
            Matrix::from_vec(2, 2, vec![1.0; 3]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn from_vec_rejects_non_finite() {
        assert!(matches!(
            Matrix::from_vec(1, 2, vec![1.0, f64::NAN]),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn matmul_shapes_and_values() {
        let a = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Matrix::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.as_slice(), &[58.0, 64.0, 139.0, 154.0]);
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn transpose_variants_agree_with_explicit_transpose() {
        let a = Matrix::from_vec(2, 3, vec![1.0, -2.0, 3.0, 0.5, 4.0, -1.0]).unwrap();
        let b = Matrix::from_vec(2, 2, vec![2.0, 1.0, -1.0, 3.0]).unwrap();
        // aᵀ * b
        let atb = a.transpose_matmul(&b).unwrap();
        let mut at = Matrix::zeros(3, 2);
        for r in 0..2 {
            for c in 0..3 {
                at.set(c, r, a.get(r, c));
            }
        }
        assert_eq!(atb, at.matmul(&b).unwrap());
        // a * cᵀ against the explicit triple loop.
        let c = Matrix::from_vec(4, 3, (0..12).map(|v| v as f64 * 0.5 - 2.0).collect()).unwrap();
        let act = a.matmul_transpose(&c).unwrap();
        assert_eq!(act.rows(), 2);
        assert_eq!(act.cols(), 4);
        for r in 0..2 {
            for col in 0..4 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += a.get(r, k) * c.get(col, k);
                }
                assert_eq!(act.get(r, col), acc);
            }
        }
        assert!(b.matmul_transpose(&a).is_err());
    }

    #[test]
    fn gather_rows_checks_range() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let g = a.gather_rows(&[1, 0, 1]).unwrap();
        assert_eq!(g.as_slice(), &[3.0, 4.0, 1.0, 2.0, 3.0, 4.0]);
        assert!(a.gather_rows(&[2]).is_err());
    }
}
