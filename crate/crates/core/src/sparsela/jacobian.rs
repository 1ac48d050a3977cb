//! Colored Jacobian assembly from dual-number directional derivatives.

use crate::discretize::Discretization;
use crate::error::{Error, Result};
use crate::sparsela::{color_seed, Coloring, SparseMatrix};

/// Assembled linear system `J·w = b` of an affine residual `f(w) = J·w − b`.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub jacobian: SparseMatrix,
    pub rhs: Vec<f64>,
}

/// Recover `J` with one directional derivative per color and the right-hand
/// side from the affine identity `b = J·w − f(w)`.
///
/// `pattern` must contain every structural nonzero of the residual and
/// `coloring` must be valid for it. Costs `n_colors + 1` directional
/// derivatives; the extra one checks the assembled matrix against the residual.
pub fn assemble_jacobian(
    disc: &Discretization,
    point: &[f64],
    pattern: &SparseMatrix,
    coloring: &Coloring,
) -> Result<LinearSystem> {
    let n = disc.n_unknowns();
    if point.len() != n {
        return Err(Error::DimensionMismatch { context: "jacobian point", expected: n, got: point.len() });
    }
    if pattern.n_rows() != disc.n_residuals() || pattern.n_cols() != n {
        return Err(Error::DimensionMismatch { context: "jacobian pattern", expected: n, got: pattern.n_cols() });
    }
    if coloring.color_of.len() != n {
        return Err(Error::DimensionMismatch { context: "coloring", expected: n, got: coloring.color_of.len() });
    }

    let mut values = vec![0.0; pattern.nnz()];
    let mut hit = vec![false; pattern.n_rows()];
    for color in 0..coloring.n_colors {
        let response = disc.jvp(point, &color_seed(coloring, color));
        hit.iter_mut().for_each(|h| *h = false);
        for r in 0..pattern.n_rows() {
            for k in pattern.row_range(r) {
                if coloring.color_of[pattern.col_indices()[k]] == color {
                    values[k] = response[r];
                    hit[r] = true;
                }
            }
        }
        if let Some(row) = (0..pattern.n_rows()).find(|&r| !hit[r] && response[r] != 0.0) {
            return Err(Error::PatternMismatch { row });
        }
    }
    let jacobian = pattern.with_values(values)?;

    // Same-colored columns sharing a row outside the pattern collapse silently
    // above; one extra directional derivative along a dense probe exposes them.
    let probe: Vec<f64> = (0..n).map(|k| 1.0 + ((k * 7919) % 101) as f64 / 101.0).collect();
    let expected = disc.jvp(point, &probe);
    let got = jacobian.spmv(&probe)?;
    let scale = expected.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    if let Some(row) = (0..expected.len()).find(|&r| (got[r] - expected[r]).abs() > 1e-10 * scale) {
        return Err(Error::PatternMismatch { row });
    }
    let f = disc.residual(point);
    let jw = jacobian.spmv(point)?;
    let rhs = jw.iter().zip(&f).map(|(a, b)| a - b).collect();
    Ok(LinearSystem { jacobian, rhs })
}

/// Dense Jacobian (row-major) from one directional derivative per column.
/// Quadratic cost; meant as a cross-check on small grids.
pub fn probe_jacobian_dense(disc: &Discretization, point: &[f64]) -> Vec<f64> {
    let n = disc.n_unknowns();
    let m = disc.n_residuals();
    let mut dense = vec![0.0; m * n];
    let mut e = vec![0.0; n];
    for col in 0..n {
        e[col] = 1.0;
        let column = disc.jvp(point, &e);
        e[col] = 0.0;
        for r in 0..m {
            dense[r * n + col] = column[r];
        }
    }
    dense
}
