//! Dense 2-norm condition numbers for small operators.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::sparsela::ilu::solve_in_place;
use crate::sparsela::{IluFactors, SparseMatrix};

/// Largest dimension accepted for densification.
pub const DENSE_LIMIT: usize = 5000;

fn condition_of(dense: DMatrix<f64>) -> f64 {
    let sv = dense.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn check_size(n_rows: usize, n_cols: usize) -> Result<()> {
    let n = n_rows.max(n_cols);
    if n > DENSE_LIMIT {
        return Err(Error::Oversize { n, limit: DENSE_LIMIT });
    }
    Ok(())
}

/// `σ_max / σ_min` of `a`; infinite for a singular matrix.
pub fn estimate_condition(a: &SparseMatrix) -> Result<f64> {
    check_size(a.n_rows(), a.n_cols())?;
    Ok(condition_of(DMatrix::from_row_slice(a.n_rows(), a.n_cols(), &a.to_dense())))
}

/// Dense `M⁻¹·J`, one column of `J` at a time.
pub fn preconditioned_dense(fac: &IluFactors, j: &SparseMatrix) -> Result<DMatrix<f64>> {
    check_size(j.n_rows(), j.n_cols())?;
    if fac.dim() != j.n_rows() || !j.is_square() {
        return Err(Error::DimensionMismatch {
            context: "preconditioned operator",
            expected: fac.dim(),
            got: j.n_rows(),
        });
    }
    let n = j.n_rows();
    let jt = j.transpose();
    let mut out = DMatrix::zeros(n, n);
    let mut col = vec![0.0; n];
    for c in 0..n {
        col.iter_mut().for_each(|v| *v = 0.0);
        for (&r, &v) in jt.row_cols(c).iter().zip(jt.row_values(c)) {
            col[r] = v;
        }
        solve_in_place(fac, &mut col);
        out.column_mut(c).copy_from_slice(&col);
    }
    Ok(out)
}

/// `κ(M⁻¹·J)` with `M⁻¹·J` formed densely.
pub fn estimate_preconditioned_condition(fac: &IluFactors, j: &SparseMatrix) -> Result<f64> {
    Ok(condition_of(preconditioned_dense(fac, j)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::{Discretization, ProblemSpec};
    use crate::grid::make_grid;
    use crate::sparsela::{assemble_jacobian, color_columns, ilu0};

    #[test]
    fn identity_and_diagonal() {
        assert!((estimate_condition(&SparseMatrix::identity(7)).unwrap() - 1.0).abs() < 1e-14);
        let d = SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 10.0)]).unwrap();
        assert!((estimate_condition(&d).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn oversize_rejected() {
        let big = SparseMatrix::identity(DENSE_LIMIT + 1);
        assert!(matches!(estimate_condition(&big), Err(Error::Oversize { .. })));
    }

    #[test]
    fn ilu_reduces_poisson_condition() {
        let g = make_grid(16, 16, [-1.0, 1.0, -1.0, 1.0]).unwrap();
        let disc = Discretization::new(g, ProblemSpec::poisson(1)).unwrap();
        let pat = disc.pattern();
        let j = assemble_jacobian(&disc, &vec![0.0; 256], &pat, &color_columns(&pat)).unwrap().jacobian;
        let fac = ilu0(&j).unwrap();
        let kj = estimate_condition(&j).unwrap();
        let km = estimate_preconditioned_condition(&fac, &j).unwrap();
        assert!(km < kj / 2.0, "{km} vs {kj}");
    }
}
