//! Reference solutions and the relative L2 error.

use crate::discretize::{poisson_solution, Discretization, LinearizationState, ProblemKind, ProblemSpec};
use crate::error::{Error, Result};
use crate::grid::{pad, Field, StructuredGrid};
use crate::sparsela::{assemble_jacobian, color_columns, gmres_from, ilu0, GmresOptions, SparseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Analytic,
    Picard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    pub field: Field,
    pub provenance: Provenance,
    /// Component defined only up to a constant; its mean is removed from both
    /// sides before comparing.
    pub gauge_component: Option<usize>,
}

impl ReferenceSolution {
    pub fn analytic(field: Field) -> Self {
        Self { field, provenance: Provenance::Analytic, gauge_component: None }
    }
}

/// `sin(kπx)·sin(πy)` at the interior nodes.
pub fn poisson_exact(grid: &StructuredGrid, k: u32) -> ReferenceSolution {
    let mut values = Vec::with_capacity(grid.n_nodes());
    for j in 0..grid.ny as isize {
        for i in 0..grid.nx as isize {
            values.push(poisson_solution(k, grid.x(i), grid.y(j)));
        }
    }
    ReferenceSolution::analytic(Field::new(*grid, 1, values).expect("sine samples are finite"))
}

fn subtract_mean(values: &mut [f64]) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter_mut().for_each(|v| *v -= mean);
}

/// `‖u − ref‖₂ / ‖ref‖₂` over all components jointly, after removing the
/// mean of the gauge component (if any) from both fields.
pub fn relative_l2(u: &Field, reference: &ReferenceSolution) -> Result<f64> {
    let r = &reference.field;
    if u.n_components() != r.n_components() {
        return Err(Error::ComponentMismatch { expected: r.n_components(), got: u.n_components() });
    }
    if u.grid() != r.grid() {
        return Err(Error::GridMismatch("relative_l2"));
    }
    let mut a = u.values().to_vec();
    let mut b = r.values().to_vec();
    if let Some(c) = reference.gauge_component {
        let n = u.grid().n_nodes();
        subtract_mean(&mut a[c * n..(c + 1) * n]);
        subtract_mean(&mut b[c * n..(c + 1) * n]);
    }
    let ref_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if ref_norm == 0.0 {
        return Err(Error::ZeroNormReference);
    }
    let diff = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    Ok(diff / ref_norm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardOptions {
    /// Stop once the largest field change in one outer step is below this.
    pub tol: f64,
    pub max_outer: usize,
    /// Velocity under-relaxation; pressure takes the new iterate directly.
    pub relaxation: f64,
    pub linear: GmresOptions,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_outer: 500,
            relaxation: 0.7,
            linear: GmresOptions { tol: 1e-10, restart: 50, max_iter: 20_000 },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardReport {
    pub iterations: usize,
    /// Largest field change per outer step.
    pub history: Vec<f64>,
    /// `max |ns_residual|` with the converged velocities frozen, all rows.
    pub max_residual: f64,
    /// Same, excluding the continuity row replaced by the pressure gauge.
    pub max_residual_off_gauge: f64,
    /// Linear solves that stopped on their iteration budget.
    pub unconverged_solves: usize,
}

/// Replace row `row` by the equation `x[col] = 0`.
fn pin_row(j: &SparseMatrix, rhs: &mut [f64], row: usize, col: usize) -> Result<SparseMatrix> {
    let mut values = j.values().to_vec();
    for k in j.row_range(row) {
        values[k] = if j.col_indices()[k] == col { 1.0 } else { 0.0 };
    }
    rhs[row] = 0.0;
    j.with_values(values)
}

/// `j` plus explicit zeros wherever a continuity row reaches a pressure
/// column in two steps of the pattern. ILU(0) on the widened pattern keeps
/// the pressure Schur-complement fill that plain ILU(0) drops.
fn with_pressure_fill(j: &SparseMatrix, is_pressure: &[bool], is_continuity: &[bool]) -> Result<SparseMatrix> {
    let mut triplets = Vec::with_capacity(2 * j.nnz());
    for (r, &continuity) in is_continuity.iter().enumerate().take(j.n_rows()) {
        triplets.extend(j.row_cols(r).iter().zip(j.row_values(r)).map(|(&c, &v)| (r, c, v)));
        if continuity {
            for &k in j.row_cols(r) {
                triplets.extend(j.row_cols(k).iter().filter(|&&c| is_pressure[c]).map(|&c| (r, c, 0.0)));
            }
        }
    }
    SparseMatrix::from_triplets(j.n_rows(), j.n_cols(), &triplets)
}

/// Fixed-point iteration on the cavity equations: freeze the convective
/// velocities, solve the resulting linear system with the pressure pinned to
/// zero at node 0, relax the velocity update, repeat.
pub fn picard_solve(
    grid: &StructuredGrid,
    spec: &ProblemSpec,
    opts: &PicardOptions,
) -> Result<(ReferenceSolution, PicardReport)> {
    if !matches!(spec.kind, ProblemKind::Cavity { .. }) {
        return Err(Error::WrongProblem("picard_solve needs a cavity problem"));
    }
    if !(opts.tol > 0.0) || !(opts.relaxation > 0.0 && opts.relaxation <= 1.0) {
        return Err(Error::InvalidConfig("Picard needs tol > 0 and relaxation in (0, 1]".into()));
    }
    let mut disc = Discretization::new(*grid, *spec)?;
    let n = grid.n_nodes();
    let pattern = disc.pattern();
    let coloring = color_columns(&pattern);
    let gauge_row = disc.equation_index(0, 2);
    let gauge_col = disc.unknown_index(0, 2);
    let mut is_pressure = vec![false; 3 * n];
    let mut is_continuity = vec![false; 3 * n];
    for node in 0..n {
        is_pressure[disc.unknown_index(node, 2)] = true;
        is_continuity[disc.equation_index(node, 2)] = true;
    }

    let mut w = vec![0.0; 3 * n];
    let mut history = Vec::new();
    let mut unconverged_solves = 0;
    let mut converged = false;
    for _ in 0..opts.max_outer {
        let sys = assemble_jacobian(&disc, &w, &pattern, &coloring)?;
        let mut rhs = sys.rhs;
        let jg = pin_row(&sys.jacobian, &mut rhs, gauge_row, gauge_col)?;
        let fac = ilu0(&with_pressure_fill(&jg, &is_pressure, &is_continuity)?)?;
        let out = gmres_from(&jg, &rhs, &fac, Some(&w), opts.linear)?;
        if !out.converged {
            unconverged_solves += 1;
            log::warn!(
                "Picard linear solve stopped at relative residual {:e} after {} iterations",
                out.relative_residual,
                out.iterations
            );
        }
        let mut change = 0.0f64;
        for (k, (wk, xk)) in w.iter_mut().zip(&out.x).enumerate() {
            let next = if is_pressure[k] { *xk } else { *wk + opts.relaxation * (xk - *wk) };
            change = change.max((next - *wk).abs());
            *wk = next;
        }
        if !change.is_finite() {
            return Err(Error::PicardNotConverged { iterations: history.len() + 1, last_change: change, history });
        }
        history.push(change);
        let field = disc.unknowns_to_field(&w)?;
        disc.set_linearization(LinearizationState::from_field(&field)?)?;
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::PicardNotConverged {
            iterations: history.len(),
            last_change: history.last().copied().unwrap_or(f64::NAN),
            history,
        });
    }

    let residual = disc.residual(&w);
    let max_residual = residual.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let max_residual_off_gauge =
        residual.iter().enumerate().filter(|&(k, _)| k != gauge_row).fold(0.0f64, |m, (_, r)| m.max(r.abs()));
    let report =
        PicardReport { iterations: history.len(), history, max_residual, max_residual_off_gauge, unconverged_solves };
    let reference = ReferenceSolution {
        field: disc.unknowns_to_field(&w)?,
        provenance: Provenance::Picard,
        gauge_component: Some(2),
    };
    Ok((reference, report))
}

/// Piecewise-cubic interpolation of one component at `(x, y)`, using the
/// padded field so the boundary ring (which lies on the domain edge) is
/// part of the stencil. Windows are shifted inward at the edges.
pub fn sample_cubic(field: &Field, spec: &ProblemSpec, component: usize, x: f64, y: f64) -> Result<f64> {
    let grid = field.grid();
    let padded = pad(field, &spec.boundary_spec())?;
    let axis = |t: f64, lo: f64, h: f64, n: usize| {
        // padded index 0 is the ghost at `lo`; there are n + 2 samples
        let s = (t - lo) / h;
        let start = (s.floor() as isize - 1).clamp(0, n as isize - 2);
        let mut w = [0.0; 4];
        for (a, wa) in w.iter_mut().enumerate() {
            let mut prod = 1.0;
            for b in 0..4 {
                if a != b {
                    prod *= (s - (start + b as isize) as f64) / (a as f64 - b as f64);
                }
            }
            *wa = prod;
        }
        (start - 1, w)
    };
    let [x0, _, y0, _] = grid.extents();
    let (ix, wx) = axis(x, x0, grid.hx, grid.nx);
    let (iy, wy) = axis(y, y0, grid.hy, grid.ny);
    let mut acc = 0.0;
    for (b, wb) in wy.iter().enumerate() {
        for (a, wa) in wx.iter().enumerate() {
            acc += wa * wb * padded.at(component, ix + a as isize, iy + b as isize);
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::ns_residual;
    use crate::grid::make_grid;

    #[test]
    fn exact_poisson_values() {
        let g = make_grid(3, 3, [-1.0, 1.0, -1.0, 1.0]).unwrap();
        let r = poisson_exact(&g, 15);
        // node (2,2) sits at (0.5, 0.5); node (1, ·) at x = 0
        assert!((r.field.get(0, 2, 2) + 1.0).abs() < 1e-12);
        assert!(r.field.get(0, 1, 0).abs() < 1e-15);
        assert!(poisson_solution(15, 1.0, 0.3).abs() < 1e-13);
        assert!(poisson_solution(15, -1.0, 0.3).abs() < 1e-13);
        assert_eq!(r.provenance, Provenance::Analytic);
    }

    #[test]
    fn relative_l2_examples() {
        let g = make_grid(3, 3, [0.0, 1.0, 0.0, 1.0]).unwrap();
        let r = ReferenceSolution::analytic(Field::new(g, 1, (1..=9).map(f64::from).collect()).unwrap());
        assert_eq!(relative_l2(&r.field, &r).unwrap(), 0.0);
        let twice = Field::new(g, 1, r.field.values().iter().map(|v| 2.0 * v).collect()).unwrap();
        assert!((relative_l2(&twice, &r).unwrap() - 1.0).abs() < 1e-15);
        // (1, 2) against (1, 1), padded with zeros
        let mut u = vec![0.0; 9];
        let mut v = vec![0.0; 9];
        (u[0], u[1], v[0], v[1]) = (1.0, 2.0, 1.0, 1.0);
        let rr = ReferenceSolution::analytic(Field::new(g, 1, v).unwrap());
        let e = relative_l2(&Field::new(g, 1, u).unwrap(), &rr).unwrap();
        assert!((e - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        let zero = ReferenceSolution::analytic(Field::zeros(g, 1));
        assert_eq!(relative_l2(&r.field, &zero), Err(Error::ZeroNormReference));
    }

    #[test]
    fn gauge_component_ignores_pressure_offset() {
        let g = make_grid(3, 3, [0.0, 1.0, 0.0, 1.0]).unwrap();
        let vals: Vec<f64> = (0..27).map(|k| (k as f64 * 0.37).sin()).collect();
        let reference = ReferenceSolution {
            field: Field::new(g, 3, vals.clone()).unwrap(),
            provenance: Provenance::Picard,
            gauge_component: Some(2),
        };
        let shifted: Vec<f64> = vals.iter().enumerate().map(|(k, v)| if k >= 18 { v + 5.0 } else { *v }).collect();
        assert!(relative_l2(&Field::new(g, 3, shifted).unwrap(), &reference).unwrap() < 1e-15);
    }

    #[test]
    fn still_lid_gives_zero_solution() {
        let g = make_grid(6, 6, [0.0, 1.0, 0.0, 1.0]).unwrap();
        let mut spec = ProblemSpec::cavity(100.0);
        spec.kind = ProblemKind::Cavity { re: 100.0, lid_velocity: 0.0 };
        let (r, report) = picard_solve(&g, &spec, &PicardOptions::default()).unwrap();
        assert!(r.field.values().iter().all(|&v| v == 0.0));
        assert_eq!(report.iterations, 1);
    }

    #[test]
    fn picard_small_grid_is_a_fixed_point() {
        let g = make_grid(12, 12, [0.0, 1.0, 0.0, 1.0]).unwrap();
        let spec = ProblemSpec::cavity(100.0);
        let (r, report) = picard_solve(&g, &spec, &PicardOptions::default()).unwrap();
        assert_eq!(report.unconverged_solves, 0);
        let lin = LinearizationState::from_field(&r.field).unwrap();
        let res = ns_residual(&r.field, &lin, &g, &spec).unwrap();
        assert!((res.max_abs() - report.max_residual).abs() < 1e-12);
        assert!(report.max_residual_off_gauge <= 1e-7, "{report:?}");
        // pressure pinned at node 0
        assert!(r.field.get(2, 0, 0).abs() < 1e-9);
        // lid drives positive u near the top, recirculation below
        assert!(r.field.get(0, 6, 11) > 0.0);
        assert!(r.field.get(0, 6, 2) < 0.0);
    }

    #[test]
    fn cubic_sampling_reproduces_nodes_and_smooth_fields() {
        let g = make_grid(7, 5, [0.0, 1.0, 0.0, 1.0]).unwrap();
        // the k = 1 boundary rule evaluates the same sine product on the ghost ring
        let spec = ProblemSpec::poisson(1);
        let f = |x: f64, y: f64| (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin();
        let mut vals = Vec::new();
        for j in 0..5 {
            for i in 0..7 {
                vals.push(f(g.x(i), g.y(j)));
            }
        }
        let field = Field::new(g, 1, vals).unwrap();
        // at a node the interpolant reproduces the sample
        let at_node = sample_cubic(&field, &spec, 0, g.x(3), g.y(2)).unwrap();
        assert!((at_node - field.get(0, 3, 2)).abs() < 1e-14);
        for (x, y) in [(0.31, 0.47), (0.02, 0.9), (0.99, 0.01)] {
            let s = sample_cubic(&field, &spec, 0, x, y).unwrap();
            assert!((s - f(x, y)).abs() < 5e-3, "{x} {y}: {s} vs {}", f(x, y));
        }
    }
}
