use super::{DiffError, Result, Tensor};

/// Coordinate-format sparse matrix, entries sorted by (row, col).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn new(rows: usize, cols: usize, mut entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        entries.sort_by_key(|&(r, c, _)| (r, c));
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(DiffError::DuplicateCoordinate(w[0].0, w[0].1));
            }
        }
        for &(row, col, v) in &entries {
            if row >= rows || col >= cols {
                return Err(DiffError::CoordinateOutOfRange { row, col, rows, cols });
            }
            if !v.is_finite() {
                return Err(DiffError::NonFiniteValue { op: "sparse" });
            }
        }
        Ok(Self { rows, cols, entries })
    }

    /// Square diagonal matrix; zero entries are not stored.
    pub fn diagonal(values: &[f64]) -> Result<Self> {
        let entries = values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i, i, *v))
            .collect();
        Self::new(values.len(), values.len(), entries)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn transpose(&self) -> Self {
        let mut entries: Vec<_> = self.entries.iter().map(|&(r, c, v)| (c, r, v)).collect();
        entries.sort_by_key(|&(r, c, _)| (r, c));
        Self {
            rows: self.cols,
            cols: self.rows,
            entries,
        }
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.rows, self.cols]);
        for &(r, c, v) in &self.entries {
            t.set(r, c, v);
        }
        t
    }

    /// Sum of each row.
    pub fn row_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for &(r, _, v) in &self.entries {
            out[r] += v;
        }
        out
    }

    /// Sum of each column.
    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for &(_, c, v) in &self.entries {
            out[c] += v;
        }
        out
    }

    /// Scales row `i` by `factors[i]`.
    pub fn scale_rows(&self, factors: &[f64]) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(|&(r, c, v)| (r, c, v * factors[r])).collect(),
        }
    }

    /// `self * dense`, where dense is `cols x d`.
    pub fn matmul_dense(&self, dense: &Tensor) -> Result<Tensor> {
        let (n, d) = dense.dims2();
        if n != self.cols {
            return Err(DiffError::ShapeMismatch {
                op: "spmm",
                left: vec![self.rows, self.cols],
                right: dense.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; self.rows * d];
        let src = dense.data();
        for &(r, c, v) in &self.entries {
            let dst = &mut out[r * d..(r + 1) * d];
            for (o, x) in dst.iter_mut().zip(&src[c * d..(c + 1) * d]) {
                *o += v * x;
            }
        }
        Tensor::matrix(self.rows, d, out)
    }

    /// `self^T * dense`, where dense is `rows x d`.
    pub fn transpose_matmul_dense(&self, dense: &Tensor) -> Result<Tensor> {
        let (n, d) = dense.dims2();
        if n != self.rows {
            return Err(DiffError::ShapeMismatch {
                op: "spmm_t",
                left: vec![self.cols, self.rows],
                right: dense.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; self.cols * d];
        let src = dense.data();
        for &(r, c, v) in &self.entries {
            let dst = &mut out[c * d..(c + 1) * d];
            for (o, x) in dst.iter_mut().zip(&src[r * d..(r + 1) * d]) {
                *o += v * x;
            }
        }
        Tensor::matrix(self.cols, d, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicates_and_out_of_range() {
        assert!(matches!(
            SparseMatrix::new(2, 2, vec![(0, 0, 1.0), (0, 0, 2.0)]),
            Err(DiffError::DuplicateCoordinate(0, 0))
        ));
        assert!(matches!(
            SparseMatrix::new(2, 2, vec![(2, 0, 1.0)]),
            Err(DiffError::CoordinateOutOfRange { .. })
        ));
        assert!(SparseMatrix::new(1, 1, vec![(0, 0, f64::NAN)]).is_err());
    }

    #[test]
    fn transpose_product_matches_dense() {
        let h = SparseMatrix::new(2, 1, vec![(0, 0, 1.0), (1, 0, 1.0)]).unwrap();
        let x = Tensor::from_rows(&[&[2.0], &[4.0]]);
        let y = h.transpose_matmul_dense(&x).unwrap();
        assert_eq!(y.data(), &[6.0]);
        let y2 = h.transpose().matmul_dense(&x).unwrap();
        assert_eq!(y, y2);
    }
}
