//! ILU(0) factorization and the triangular solves that apply `M⁻¹` and
//! `M⁻ᵀ` for `M = L·U`.

use crate::error::{Error, Result};
use crate::sparsela::SparseMatrix;

/// Relative size below which a pivot is replaced during elimination.
pub const PIVOT_SHIFT: f64 = 1e-8;

/// `L` is unit lower triangular with only its strictly lower entries stored;
/// `U` holds the diagonal and the strictly upper entries. Together they cover
/// exactly the pattern of the factored matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct IluFactors {
    lower: SparseMatrix,
    upper: SparseMatrix,
    /// Rows whose pivot was shifted, with the value added to the diagonal.
    shifted: Vec<(usize, f64)>,
}

impl IluFactors {
    pub fn identity(n: usize) -> Self {
        Self { lower: SparseMatrix::zeros(n, n), upper: SparseMatrix::identity(n), shifted: Vec::new() }
    }

    /// Wrap existing factors after checking their triangular structure.
    pub fn from_parts(lower: SparseMatrix, upper: SparseMatrix) -> Result<Self> {
        let n = lower.n_rows();
        if !lower.is_square() || !upper.is_square() || upper.n_rows() != n {
            return Err(Error::InvalidMatrix("factors must be square and of equal size".into()));
        }
        for r in 0..n {
            if lower.row_cols(r).iter().any(|&c| c >= r) {
                return Err(Error::InvalidMatrix(format!(
                    "lower factor has entries on or above the diagonal in row {r}"
                )));
            }
            let cols = upper.row_cols(r);
            if cols.first() != Some(&r) {
                return Err(Error::MissingDiagonal { row: r });
            }
            if upper.row_values(r)[0] == 0.0 {
                return Err(Error::IluBreakdown { row: r, pivot: 0.0 });
            }
        }
        Ok(Self { lower, upper, shifted: Vec::new() })
    }

    pub fn dim(&self) -> usize {
        self.lower.n_rows()
    }

    pub fn lower(&self) -> &SparseMatrix {
        &self.lower
    }

    pub fn upper(&self) -> &SparseMatrix {
        &self.upper
    }

    pub fn shifted_pivots(&self) -> &[(usize, f64)] {
        &self.shifted
    }

    /// Dense row-major `L·U`.
    pub fn product_dense(&self) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; n * n];
        let mut row = vec![0.0; n];
        for i in 0..n {
            self.product_row(i, &mut row);
            out[i * n..(i + 1) * n].copy_from_slice(&row);
            row.iter_mut().for_each(|v| *v = 0.0);
        }
        out
    }

    /// Accumulate row `i` of `L·U` into a zeroed dense buffer.
    fn product_row(&self, i: usize, row: &mut [f64]) {
        for (&c, &v) in self.upper.row_cols(i).iter().zip(self.upper.row_values(i)) {
            row[c] += v;
        }
        for (&k, &l) in self.lower.row_cols(i).iter().zip(self.lower.row_values(i)) {
            for (&c, &v) in self.upper.row_cols(k).iter().zip(self.upper.row_values(k)) {
                row[c] += l * v;
            }
        }
    }

    /// Largest `|(L·U)ᵢⱼ − Jᵢⱼ|` over the pattern of `j`.
    pub fn pattern_defect(&self, j: &SparseMatrix) -> f64 {
        let n = self.dim();
        let mut row = vec![0.0; n];
        let mut worst = 0.0f64;
        for i in 0..n {
            self.product_row(i, &mut row);
            for (&c, &v) in j.row_cols(i).iter().zip(j.row_values(i)) {
                worst = worst.max((row[c] - v).abs());
            }
            row.iter_mut().for_each(|v| *v = 0.0);
        }
        worst
    }
}

/// Zero-fill incomplete LU in the IKJ ordering.
///
/// Updates are confined to the pattern of `j`. A pivot smaller than
/// `PIVOT_SHIFT · maxᵢ|Jᵢᵢ|` is replaced by that threshold with the pivot's
/// sign (positive for an exact zero); such rows are recorded and logged.
pub fn ilu0(j: &SparseMatrix) -> Result<IluFactors> {
    if !j.is_square() {
        return Err(Error::InvalidMatrix("ILU needs a square matrix".into()));
    }
    let n = j.n_rows();
    let offsets = j.row_offsets();
    let cols = j.col_indices();
    let mut a = j.values().to_vec();

    let mut diag = vec![0usize; n];
    for (i, d) in diag.iter_mut().enumerate() {
        *d = j.position(i, i).ok_or(Error::MissingDiagonal { row: i })?;
    }
    let threshold = PIVOT_SHIFT * j.max_abs_diagonal();

    let mut slot = vec![usize::MAX; n];
    let mut shifted = Vec::new();
    for i in 0..n {
        for k in offsets[i]..offsets[i + 1] {
            slot[cols[k]] = k;
        }
        for kk in offsets[i]..diag[i] {
            let k = cols[kk];
            let lik = a[kk] / a[diag[k]];
            a[kk] = lik;
            for kj in diag[k] + 1..offsets[k + 1] {
                let pos = slot[cols[kj]];
                if pos != usize::MAX {
                    a[pos] -= lik * a[kj];
                }
            }
        }
        for k in offsets[i]..offsets[i + 1] {
            slot[cols[k]] = usize::MAX;
        }

        let pivot = a[diag[i]];
        if !pivot.is_finite() {
            return Err(Error::IluBreakdown { row: i, pivot });
        }
        if pivot.abs() < threshold {
            let replaced = if pivot < 0.0 { -threshold } else { threshold };
            log::warn!("ILU(0) pivot shift at row {i}: {pivot:e} -> {replaced:e}");
            shifted.push((i, replaced - pivot));
            a[diag[i]] = replaced;
        }
        if a[diag[i]] == 0.0 {
            return Err(Error::IluBreakdown { row: i, pivot: 0.0 });
        }
    }

    let (mut lo, mut lc, mut lv) = (vec![0], Vec::new(), Vec::new());
    let (mut uo, mut uc, mut uv) = (vec![0], Vec::new(), Vec::new());
    for i in 0..n {
        for k in offsets[i]..offsets[i + 1] {
            if k < diag[i] {
                lc.push(cols[k]);
                lv.push(a[k]);
            } else {
                uc.push(cols[k]);
                uv.push(a[k]);
            }
        }
        lo.push(lc.len());
        uo.push(uc.len());
    }
    Ok(IluFactors {
        lower: SparseMatrix::from_raw(n, n, lo, lc, lv)?,
        upper: SparseMatrix::from_raw(n, n, uo, uc, uv)?,
        shifted,
    })
}

fn check_len(fac: &IluFactors, len: usize) -> Result<()> {
    if len != fac.dim() {
        return Err(Error::DimensionMismatch { context: "preconditioner solve", expected: fac.dim(), got: len });
    }
    Ok(())
}

/// `p = M⁻¹·f`: forward substitution with `L`, then backward with `U`.
pub fn apply_minv(fac: &IluFactors, f: &[f64]) -> Result<Vec<f64>> {
    check_len(fac, f.len())?;
    let mut x = f.to_vec();
    solve_in_place(fac, &mut x);
    Ok(x)
}

pub(crate) fn solve_in_place(fac: &IluFactors, x: &mut [f64]) {
    let (l, u) = (&fac.lower, &fac.upper);
    for i in 0..x.len() {
        let mut acc = x[i];
        for (&c, &v) in l.row_cols(i).iter().zip(l.row_values(i)) {
            acc -= v * x[c];
        }
        x[i] = acc;
    }
    for i in (0..x.len()).rev() {
        let cols = u.row_cols(i);
        let vals = u.row_values(i);
        let mut acc = x[i];
        for (&c, &v) in cols[1..].iter().zip(&vals[1..]) {
            acc -= v * x[c];
        }
        x[i] = acc / vals[0];
    }
}

/// `(M⁻¹)ᵀ·r = L⁻ᵀ·(U⁻ᵀ·r)` by column-oriented substitutions on the stored
/// rows, so no transposed copy is formed.
pub fn apply_minv_transpose(fac: &IluFactors, r: &[f64]) -> Result<Vec<f64>> {
    check_len(fac, r.len())?;
    let (l, u) = (&fac.lower, &fac.upper);
    let mut x = r.to_vec();
    // Uᵀ is lower triangular: resolve x[i], then push it into later entries.
    for i in 0..x.len() {
        let cols = u.row_cols(i);
        let vals = u.row_values(i);
        let xi = x[i] / vals[0];
        x[i] = xi;
        for (&c, &v) in cols[1..].iter().zip(&vals[1..]) {
            x[c] -= v * xi;
        }
    }
    // Lᵀ is unit upper triangular.
    for i in (0..x.len()).rev() {
        let xi = x[i];
        for (&c, &v) in l.row_cols(i).iter().zip(l.row_values(i)) {
            x[c] -= v * xi;
        }
    }
    Ok(x)
}
