//! Restarted GMRES with right preconditioning by ILU factors.

use crate::error::{Error, Result};
use crate::sparsela::ilu::solve_in_place;
use crate::sparsela::{IluFactors, SparseMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresOptions {
    /// Target for `‖A·x − b‖ / ‖b‖`.
    pub tol: f64,
    pub restart: usize,
    pub max_iter: usize,
}

impl Default for GmresOptions {
    fn default() -> Self {
        Self { tol: 1e-8, restart: 50, max_iter: 2000 }
    }
}

/// Result of a solve. Non-convergence is reported here rather than as an error.
#[derive(Debug, Clone, PartialEq)]
pub struct GmresOutcome {
    pub x: Vec<f64>,
    pub converged: bool,
    /// Krylov iterations (matrix-vector products inside cycles).
    pub iterations: usize,
    /// True relative residual of `x`.
    pub relative_residual: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve `A·x = b` from a zero start.
pub fn gmres(a: &SparseMatrix, b: &[f64], fac: &IluFactors, opts: GmresOptions) -> Result<GmresOutcome> {
    gmres_from(a, b, fac, None, opts)
}

/// Solve `A·x = b` on `A·M⁻¹·y = b`, `x = M⁻¹·y`, starting from `x0` if given.
pub fn gmres_from(
    a: &SparseMatrix,
    b: &[f64],
    fac: &IluFactors,
    x0: Option<&[f64]>,
    opts: GmresOptions,
) -> Result<GmresOutcome> {
    let n = a.n_rows();
    if !a.is_square() {
        return Err(Error::InvalidMatrix("GMRES needs a square matrix".into()));
    }
    if !(opts.tol > 0.0) || opts.restart == 0 {
        return Err(Error::InvalidConfig("GMRES needs tol > 0 and restart >= 1".into()));
    }
    for (context, len) in [("gmres rhs", b.len()), ("gmres preconditioner", fac.dim())] {
        if len != n {
            return Err(Error::DimensionMismatch { context, expected: n, got: len });
        }
    }
    let mut x = match x0 {
        Some(x0) if x0.len() != n => {
            return Err(Error::DimensionMismatch { context: "gmres start", expected: n, got: x0.len() })
        }
        Some(x0) => x0.to_vec(),
        None => vec![0.0; n],
    };

    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(GmresOutcome { x: vec![0.0; n], converged: true, iterations: 0, relative_residual: 0.0 });
    }

    let m = opts.restart.min(n.max(1));
    let mut basis: Vec<Vec<f64>> = vec![vec![0.0; n]; m + 1];
    let mut hess = vec![vec![0.0; m]; m + 1];
    let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
    let mut g = vec![0.0; m + 1];
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut iterations = 0;

    let true_residual = |x: &[f64], r: &mut [f64]| {
        a.spmv_into(x, r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        norm(r)
    };

    let mut rel = true_residual(&x, &mut r) / b_norm;
    while rel > opts.tol && iterations < opts.max_iter {
        let beta = rel * b_norm;
        for (bi, ri) in basis[0].iter_mut().zip(&r) {
            *bi = ri / beta;
        }
        g.iter_mut().for_each(|v| *v = 0.0);
        g[0] = beta;

        let mut k = 0;
        while k < m && iterations < opts.max_iter {
            z.copy_from_slice(&basis[k]);
            solve_in_place(fac, &mut z);
            a.spmv_into(&z, &mut w);
            // modified Gram-Schmidt
            for i in 0..=k {
                let h = dot(&w, &basis[i]);
                hess[i][k] = h;
                for (wj, vj) in w.iter_mut().zip(&basis[i]) {
                    *wj -= h * vj;
                }
            }
            let h_next = norm(&w);
            hess[k + 1][k] = h_next;
            if h_next > 0.0 {
                for (vj, wj) in basis[k + 1].iter_mut().zip(&w) {
                    *vj = wj / h_next;
                }
            }
            for i in 0..k {
                let t = cs[i] * hess[i][k] + sn[i] * hess[i + 1][k];
                hess[i + 1][k] = -sn[i] * hess[i][k] + cs[i] * hess[i + 1][k];
                hess[i][k] = t;
            }
            let denom = hess[k][k].hypot(hess[k + 1][k]);
            if denom == 0.0 {
                cs[k] = 1.0;
                sn[k] = 0.0;
            } else {
                cs[k] = hess[k][k] / denom;
                sn[k] = hess[k + 1][k] / denom;
            }
            hess[k][k] = denom;
            hess[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            iterations += 1;
            k += 1;
            if g[k].abs() / b_norm <= opts.tol || h_next == 0.0 {
                break;
            }
        }

        // back substitution on the k×k triangle, then x += M⁻¹·V·y
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut acc = g[i];
            for j in i + 1..k {
                acc -= hess[i][j] * y[j];
            }
            y[i] = if hess[i][i] != 0.0 { acc / hess[i][i] } else { 0.0 };
        }
        z.iter_mut().for_each(|v| *v = 0.0);
        for (yi, vi) in y.iter().zip(&basis) {
            for (zj, vj) in z.iter_mut().zip(vi) {
                *zj += yi * vj;
            }
        }
        solve_in_place(fac, &mut z);
        for (xi, zi) in x.iter_mut().zip(&z) {
            *xi += zi;
        }
        rel = true_residual(&x, &mut r) / b_norm;
        if !rel.is_finite() || k == 0 {
            break;
        }
    }

    Ok(GmresOutcome { converged: rel <= opts.tol, x, iterations, relative_residual: rel })
}
