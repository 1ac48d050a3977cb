//! Column coloring for sparse Jacobian recovery.
//!
//! Two columns conflict when they share a nonzero row. Columns in one color
//! group are structurally orthogonal, so a single directional derivative along
//! the sum of their unit vectors recovers all of them at once.

use crate::sparsela::SparseMatrix;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Coloring {
    pub color_of: Vec<usize>,
    pub n_colors: usize,
}

impl Coloring {
    /// Columns grouped by color, each group ascending.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut g = vec![Vec::new(); self.n_colors];
        for (col, &c) in self.color_of.iter().enumerate() {
            g[c].push(col);
        }
        g
    }

    /// Valid iff no row holds two columns of the same color.
    pub fn is_valid_for(&self, pattern: &SparseMatrix) -> bool {
        if self.color_of.len() != pattern.n_cols() {
            return false;
        }
        let mut seen = vec![usize::MAX; self.n_colors];
        for r in 0..pattern.n_rows() {
            for &c in pattern.row_cols(r) {
                let color = self.color_of[c];
                if seen[color] == r {
                    return false;
                }
                seen[color] = r;
            }
        }
        true
    }
}

/// Greedy sequential coloring in natural column order: each column takes the
/// smallest color not already held by a conflicting earlier column.
pub fn color_columns(pattern: &SparseMatrix) -> Coloring {
    let n = pattern.n_cols();
    let by_col = pattern.transpose();
    let mut color_of = vec![usize::MAX; n];
    // forbidden[color] == col marks the color as taken while coloring `col`
    let mut forbidden: Vec<usize> = Vec::new();
    let mut n_colors = 0;
    for col in 0..n {
        for &r in by_col.row_cols(col) {
            for &other in pattern.row_cols(r) {
                let c = color_of[other];
                if other != col && c != usize::MAX {
                    forbidden[c] = col;
                }
            }
        }
        let chosen = (0..n_colors).find(|&c| forbidden[c] != col).unwrap_or(n_colors);
        if chosen == n_colors {
            n_colors += 1;
            forbidden.push(usize::MAX);
        }
        color_of[col] = chosen;
    }
    Coloring { color_of, n_colors }
}

/// Seed direction for one color: sum of the unit vectors of its columns.
pub fn color_seed(coloring: &Coloring, color: usize) -> Vec<f64> {
    coloring.color_of.iter().map(|&c| if c == color { 1.0 } else { 0.0 }).collect()
}

/// Validity check that also reports the first offending column pair.
pub fn first_conflict(coloring: &Coloring, pattern: &SparseMatrix) -> Option<(usize, usize)> {
    let mut owner = vec![usize::MAX; coloring.n_colors];
    let mut stamp = vec![usize::MAX; coloring.n_colors];
    for r in 0..pattern.n_rows() {
        for &c in pattern.row_cols(r) {
            let color = coloring.color_of[c];
            if stamp[color] == r {
                return Some((owner[color], c));
            }
            stamp[color] = r;
            owner[color] = c;
        }
    }
    None
}
