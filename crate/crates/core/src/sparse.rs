//! Compressed sparse row matrices for composing linear layers.
//!
//! Pooling and convolution matrices are mostly zeros; composing them densely
//! is quadratic in the input size, so fusion works on this representation and
//! only densifies the final per-ciphertext column blocks.

use crate::error::{HeError, Result};
use crate::matvec::WeightMatrix;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix<T> {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> SparseMatrix<T> {
    /// Builds from per-row `(col, value)` lists. Duplicate columns in one row are summed.
    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, T)>>) -> Result<Self> {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        let n_rows = rows.len();
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let start = col_idx.len();
            for (c, v) in row {
                if c >= cols {
                    return Err(HeError::shape(format!("column {c} outside {cols} columns")));
                }
                if col_idx.len() > start && col_idx[col_idx.len() - 1] == c {
                    let last = values.len() - 1;
                    values[last] += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(SparseMatrix { rows: n_rows, cols, row_ptr, col_idx, values })
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![T::one(); n],
        }
    }

    pub fn from_dense(a: &WeightMatrix<T>) -> Self {
        let rows = (0..a.rows())
            .map(|i| a.row(i).iter().enumerate().filter(|(_, v)| !v.is_zero()).map(|(j, &v)| (j, v)).collect())
            .collect();
        Self::from_rows(a.cols(), rows).expect("columns in range")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.cols {
            return Err(HeError::shape(format!("vector of length {} for {} columns", x.len(), self.cols)));
        }
        Ok((0..self.rows).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect())
    }

    /// `self · rhs`, i.e. `rhs` applied first.
    pub fn compose(&self, rhs: &SparseMatrix<T>) -> Result<SparseMatrix<T>> {
        if self.cols != rhs.rows {
            return Err(HeError::shape(format!(
                "cannot compose {}x{} with {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut acc = vec![T::zero(); rhs.cols];
        let mut touched = vec![false; rhs.cols];
        let mut cols_hit = Vec::new();
        let mut rows = Vec::with_capacity(self.rows);
        for i in 0..self.rows {
            for (k, a) in self.row(i) {
                for (j, b) in rhs.row(k) {
                    if !touched[j] {
                        touched[j] = true;
                        cols_hit.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            let mut row = Vec::with_capacity(cols_hit.len());
            for &j in &cols_hit {
                row.push((j, acc[j]));
                acc[j] = T::zero();
                touched[j] = false;
            }
            cols_hit.clear();
            rows.push(row);
        }
        Self::from_rows(rhs.cols, rows)
    }

    pub fn to_dense(&self) -> WeightMatrix<T> {
        let mut entries = vec![T::zero(); self.rows * self.cols];
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                entries[i * self.cols + j] = v;
            }
        }
        WeightMatrix::new(self.rows, self.cols, entries).expect("dimensions match")
    }

    /// Dense `rows × width` matrix whose column `placement[c]` holds column `c`
    /// of `self` for each `c` in `cols`; all other columns are zero.
    pub fn scatter_columns(&self, cols: &[usize], placement: &[usize], width: usize) -> Result<WeightMatrix<T>> {
        let mut target = vec![usize::MAX; self.cols];
        for (&c, &p) in cols.iter().zip(placement) {
            if p >= width {
                return Err(HeError::Range { what: "column placement", value: p, bound: width });
            }
            target[c] = p;
        }
        let mut entries = vec![T::zero(); self.rows * width];
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                if target[j] != usize::MAX {
                    entries[i * width + target[j]] = v;
                }
            }
        }
        WeightMatrix::new(self.rows, width, entries)
    }
}
