use std::io::{self, Write};

use crate::error::{Error, Result};

/// Compressed sparse row matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Build from raw CSR arrays, checking every layout invariant.
    pub fn from_raw(
        n_rows: usize,
        n_cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != n_rows + 1 {
            return Err(Error::InvalidMatrix(format!(
                "row_offsets has length {}, expected {}",
                row_offsets.len(),
                n_rows + 1
            )));
        }
        if row_offsets[0] != 0 || row_offsets[n_rows] != col_indices.len() {
            return Err(Error::InvalidMatrix("row_offsets must start at 0 and end at nnz".into()));
        }
        if values.len() != col_indices.len() {
            return Err(Error::InvalidMatrix("values and col_indices differ in length".into()));
        }
        for r in 0..n_rows {
            let (a, b) = (row_offsets[r], row_offsets[r + 1]);
            if b < a {
                return Err(Error::InvalidMatrix(format!("row_offsets decrease at row {r}")));
            }
            let cols = &col_indices[a..b];
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidMatrix(format!("column indices of row {r} are not strictly increasing")));
            }
            if cols.last().is_some_and(|&c| c >= n_cols) {
                return Err(Error::InvalidMatrix(format!("column index out of range in row {r}")));
            }
        }
        Ok(Self { n_rows, n_cols, row_offsets, col_indices, values })
    }

    /// Duplicates are summed. Explicit zeros are kept as pattern entries.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_rows];
        for &(r, c, v) in triplets {
            if r >= n_rows || c >= n_cols {
                return Err(Error::InvalidMatrix(format!("triplet ({r}, {c}) out of range")));
            }
            rows[r].push((c, v));
        }
        let mut offsets = Vec::with_capacity(n_rows + 1);
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals = Vec::with_capacity(triplets.len());
        offsets.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            for (c, v) in row {
                if cols.len() > *offsets.last().unwrap() && *cols.last().unwrap() == c {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                }
            }
            offsets.push(cols.len());
        }
        Self::from_raw(n_rows, n_cols, offsets, cols, vals)
    }

    /// Row-major dense input; exact zeros are dropped.
    pub fn from_dense(n_rows: usize, n_cols: usize, dense: &[f64]) -> Result<Self> {
        if dense.len() != n_rows * n_cols {
            return Err(Error::DimensionMismatch {
                context: "dense matrix",
                expected: n_rows * n_cols,
                got: dense.len(),
            });
        }
        let mut t = Vec::new();
        for r in 0..n_rows {
            for c in 0..n_cols {
                let v = dense[r * n_cols + c];
                if v != 0.0 {
                    t.push((r, c, v));
                }
            }
        }
        Self::from_triplets(n_rows, n_cols, &t)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self { n_rows, n_cols, row_offsets: vec![0; n_rows + 1], col_indices: Vec::new(), values: Vec::new() }
    }

    /// Same pattern, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.nnz() {
            return Err(Error::DimensionMismatch {
                context: "pattern values",
                expected: self.nnz(),
                got: values.len(),
            });
        }
        Ok(Self { values, ..self.clone() })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn is_square(&self) -> bool {
        self.n_rows == self.n_cols
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn row_range(&self, r: usize) -> std::ops::Range<usize> {
        self.row_offsets[r]..self.row_offsets[r + 1]
    }

    #[inline]
    pub fn row_cols(&self, r: usize) -> &[usize] {
        &self.col_indices[self.row_range(r)]
    }

    #[inline]
    pub fn row_values(&self, r: usize) -> &[f64] {
        &self.values[self.row_range(r)]
    }

    /// Storage position of `(r, c)` if it is in the pattern.
    pub fn position(&self, r: usize, c: usize) -> Option<usize> {
        let range = self.row_range(r);
        self.col_indices[range.clone()].binary_search(&c).ok().map(|k| range.start + k)
    }

    pub fn get(&self, r: usize, c: usize) -> Option<f64> {
        self.position(r, c).map(|k| self.values[k])
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diagonal(&self) -> f64 {
        (0..self.n_rows.min(self.n_cols)).filter_map(|i| self.get(i, i)).fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_cols {
            return Err(Error::DimensionMismatch { context: "spmv input", expected: self.n_cols, got: x.len() });
        }
        let mut y = vec![0.0; self.n_rows];
        self.spmv_into(x, &mut y);
        Ok(y)
    }

    /// `y = A·x` without shape checks.
    pub fn spmv_into(&self, x: &[f64], y: &mut [f64]) {
        for (r, yr) in y.iter_mut().enumerate() {
            let range = self.row_range(r);
            let mut acc = 0.0;
            for k in range {
                acc += self.values[k] * x[self.col_indices[k]];
            }
            *yr = acc;
        }
    }

    /// `Aᵀ·x` computed by scattering rows.
    pub fn spmv_transpose(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_rows {
            return Err(Error::DimensionMismatch {
                context: "transposed spmv input",
                expected: self.n_rows,
                got: x.len(),
            });
        }
        let mut y = vec![0.0; self.n_cols];
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            for k in self.row_range(r) {
                y[self.col_indices[k]] += self.values[k] * xr;
            }
        }
        Ok(y)
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.col_indices {
            counts[c + 1] += 1;
        }
        for c in 0..self.n_cols {
            counts[c + 1] += counts[c];
        }
        let offsets = counts.clone();
        let mut next = counts;
        let mut cols = vec![0; self.nnz()];
        let mut vals = vec![0.0; self.nnz()];
        for r in 0..self.n_rows {
            for k in self.row_range(r) {
                let c = self.col_indices[k];
                let dst = next[c];
                cols[dst] = r;
                vals[dst] = self.values[k];
                next[c] += 1;
            }
        }
        SparseMatrix { n_rows: self.n_cols, n_cols: self.n_rows, row_offsets: offsets, col_indices: cols, values: vals }
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n_rows * self.n_cols];
        for r in 0..self.n_rows {
            for k in self.row_range(r) {
                d[r * self.n_cols + self.col_indices[k]] = self.values[k];
            }
        }
        d
    }

    /// Matrix Market coordinate dump with 1-based indices.
    pub fn write_matrix_market<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(out, "{} {} {}", self.n_rows, self.n_cols, self.nnz())?;
        for r in 0..self.n_rows {
            for k in self.row_range(r) {
                writeln!(out, "{} {} {:.17e}", r + 1, self.col_indices[k] + 1, self.values[k])?;
            }
        }
        Ok(())
    }
}

pub fn spmv(a: &SparseMatrix, x: &[f64]) -> Result<Vec<f64>> {
    a.spmv(x)
}
