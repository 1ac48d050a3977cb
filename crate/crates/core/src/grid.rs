//! Structured-grid geometry, field storage and boundary padding.
//!
//! A grid stores only interior collocation nodes. Boundary values live on a
//! one-node ghost ring that [`pad`] attaches around an interior field, so the
//! network never predicts boundary values and boundary conditions hold
//! exactly.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Uniform 2D lattice of interior nodes.
///
/// Interior node `(i, j)` sits at `(x_min + (i+1)·hx, y_min + (j+1)·hy)`; the
/// ghost ring occupies `i = -1, nx` and `j = -1, ny`, which lands exactly on
/// the domain boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructuredGrid {
    pub nx: usize,
    pub ny: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub hx: f64,
    pub hy: f64,
}

impl StructuredGrid {
    pub fn new(nx: usize, ny: usize, extents: [f64; 4]) -> Result<Self> {
        let [x_min, x_max, y_min, y_max] = extents;
        if nx < 3 || ny < 3 {
            return Err(Error::InvalidGrid(format!("node counts must be at least 3, got nx={nx}, ny={ny}")));
        }
        if !extents.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidGrid("extents must be finite".into()));
        }
        if x_max <= x_min || y_max <= y_min {
            return Err(Error::InvalidGrid(format!("degenerate extents [{x_min}, {x_max}] x [{y_min}, {y_max}]")));
        }
        Ok(Self {
            nx,
            ny,
            x_min,
            x_max,
            y_min,
            y_max,
            hx: (x_max - x_min) / (nx + 1) as f64,
            hy: (y_max - y_min) / (ny + 1) as f64,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.nx * self.ny
    }

    /// Lexicographic node index, `i` fastest.
    #[inline]
    pub fn node(&self, i: usize, j: usize) -> usize {
        i + j * self.nx
    }

    /// Physical x of column `i`; `-1` and `nx` address the ghost columns.
    #[inline]
    pub fn x(&self, i: isize) -> f64 {
        self.x_min + (i + 1) as f64 * self.hx
    }

    #[inline]
    pub fn y(&self, j: isize) -> f64 {
        self.y_min + (j + 1) as f64 * self.hy
    }

    pub fn extents(&self) -> [f64; 4] {
        [self.x_min, self.x_max, self.y_min, self.y_max]
    }

    /// Padded lattice width `nx + 2`.
    pub fn padded_nx(&self) -> usize {
        self.nx + 2
    }

    pub fn padded_ny(&self) -> usize {
        self.ny + 2
    }
}

pub fn make_grid(nx: usize, ny: usize, extents: [f64; 4]) -> Result<StructuredGrid> {
    StructuredGrid::new(nx, ny, extents)
}

/// Interior samples of one or more scalar components, component-major with
/// `i` fastest inside each component block.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: StructuredGrid,
    n_components: usize,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: StructuredGrid, n_components: usize, values: Vec<f64>) -> Result<Self> {
        if n_components == 0 {
            return Err(Error::ComponentMismatch { expected: 1, got: 0 });
        }
        let expected = grid.n_nodes() * n_components;
        if values.len() != expected {
            return Err(Error::DimensionMismatch { context: "field values", expected, got: values.len() });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { grid, n_components, values })
    }

    pub fn zeros(grid: StructuredGrid, n_components: usize) -> Self {
        Self { grid, n_components, values: vec![0.0; grid.n_nodes() * n_components] }
    }

    pub fn grid(&self) -> &StructuredGrid {
        &self.grid
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let n = self.grid.n_nodes();
        &self.values[c * n..(c + 1) * n]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.grid.n_nodes();
        &mut self.values[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.values[c * self.grid.n_nodes() + self.grid.node(i, j)]
    }
}

/// Network inputs: interior coordinates mapped affinely so the domain
/// extents become `[−1, 1]²`.
pub fn normalized_coordinates(grid: &StructuredGrid) -> Field {
    let [x0, x1, y0, y1] = grid.extents();
    let mut field = coordinate_channels(grid);
    let n = grid.n_nodes();
    let (xs, ys) = field.values.split_at_mut(n);
    // center/half-width form leaves [−1, 1] extents bit-identical
    let (cx, hx) = (0.5 * (x0 + x1), 0.5 * (x1 - x0));
    let (cy, hy) = (0.5 * (y0 + y1), 0.5 * (y1 - y0));
    xs.iter_mut().for_each(|x| *x = (*x - cx) / hx);
    ys.iter_mut().for_each(|y| *y = (*y - cy) / hy);
    field
}

/// Interior coordinates as a two-component field (x, then y).
pub fn coordinate_channels(grid: &StructuredGrid) -> Field {
    let n = grid.n_nodes();
    let mut values = vec![0.0; 2 * n];
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let k = grid.node(i, j);
            values[k] = grid.x(i as isize);
            values[n + k] = grid.y(j as isize);
        }
    }
    Field { grid: *grid, n_components: 2, values }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Edge {
    Left,
    Right,
    Bottom,
    Top,
}

impl Edge {
    pub const ALL: [Edge; 4] = [Edge::Left, Edge::Right, Edge::Bottom, Edge::Top];

    fn slot(self) -> usize {
        match self {
            Edge::Left => 0,
            Edge::Right => 1,
            Edge::Bottom => 2,
            Edge::Top => 3,
        }
    }
}

/// Boundary data for a fixed-value rule, evaluated at the ghost node's
/// physical location `(x, y)`.
#[derive(Clone)]
pub enum BoundaryValue {
    Constant(f64),
    Function(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

impl BoundaryValue {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            BoundaryValue::Constant(c) => *c,
            BoundaryValue::Function(f) => f(x, y),
        }
    }
}

impl fmt::Debug for BoundaryValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundaryValue::Constant(c) => write!(f, "Constant({c})"),
            BoundaryValue::Function(_) => f.write_str("Function(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub enum BoundaryRule {
    FixedValue(BoundaryValue),
    ZeroGradient,
}

impl BoundaryRule {
    pub fn fixed(value: f64) -> Self {
        BoundaryRule::FixedValue(BoundaryValue::Constant(value))
    }

    pub fn fixed_fn(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        BoundaryRule::FixedValue(BoundaryValue::Function(Arc::new(f)))
    }
}

/// One rule per (edge, component) pair.
#[derive(Debug, Clone)]
pub struct BoundarySpec {
    rules: Vec<[BoundaryRule; 4]>,
}

impl BoundarySpec {
    pub fn uniform(n_components: usize, rule: BoundaryRule) -> Self {
        let row = [rule.clone(), rule.clone(), rule.clone(), rule];
        Self { rules: vec![row; n_components] }
    }

    pub fn with_rule(mut self, edge: Edge, component: usize, rule: BoundaryRule) -> Self {
        self.rules[component][edge.slot()] = rule;
        self
    }

    pub fn n_components(&self) -> usize {
        self.rules.len()
    }

    pub fn rule(&self, edge: Edge, component: usize) -> &BoundaryRule {
        &self.rules[component][edge.slot()]
    }
}

/// Interior values plus ghost ring, component-major, padded `i` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Padded<T> {
    pub pnx: usize,
    pub pny: usize,
    pub n_components: usize,
    pub values: Vec<T>,
}

impl<T> Padded<T> {
    /// Value at padded coordinates; `i`, `j` range over `-1..=n`.
    #[inline]
    pub fn at(&self, c: usize, i: isize, j: isize) -> &T {
        let pi = (i + 1) as usize;
        let pj = (j + 1) as usize;
        &self.values[c * self.pnx * self.pny + pj * self.pnx + pi]
    }

    pub fn component(&self, c: usize) -> &[T] {
        let n = self.pnx * self.pny;
        &self.values[c * n..(c + 1) * n]
    }
}

impl<T: Clone> Padded<T> {
    pub fn interior(&self) -> Vec<T> {
        let (nx, ny) = (self.pnx - 2, self.pny - 2);
        let mut out = Vec::with_capacity(nx * ny * self.n_components);
        for c in 0..self.n_components {
            for j in 0..ny as isize {
                for i in 0..nx as isize {
                    out.push(self.at(c, i, j).clone());
                }
            }
        }
        out
    }
}

/// Pad an interior field with its boundary ring.
///
/// Fixed-value rules evaluate the boundary data at each ghost node, zero
/// gradient copies the adjacent interior value, and each corner ghost is the
/// average of its two edge-ghost neighbours.
pub fn pad(field: &Field, bc: &BoundarySpec) -> Result<Padded<f64>> {
    if bc.n_components() != field.n_components() {
        return Err(Error::ComponentMismatch { expected: field.n_components(), got: bc.n_components() });
    }
    Ok(pad_values(field.values(), field.n_components(), field.grid(), bc))
}

/// Generic padding over any [`Scalar`]; `values` is component-major interior
/// data. Callers guarantee the component counts agree.
pub(crate) fn pad_values<T: Scalar>(
    values: &[T],
    n_components: usize,
    grid: &StructuredGrid,
    bc: &BoundarySpec,
) -> Padded<T> {
    let (nx, ny) = (grid.nx, grid.ny);
    let (pnx, pny) = (nx + 2, ny + 2);
    let n = nx * ny;
    let mut out: Vec<T> = Vec::with_capacity(n_components * pnx * pny);
    for c in 0..n_components {
        let interior = &values[c * n..(c + 1) * n];
        let base = out.len();
        out.extend(std::iter::repeat_n(T::constant(0.0), pnx * pny));
        let block = &mut out[base..];
        let at = |i: isize, j: isize| ((j + 1) as usize) * pnx + (i + 1) as usize;

        for j in 0..ny {
            for i in 0..nx {
                block[at(i as isize, j as isize)] = interior[grid.node(i, j)].clone();
            }
        }

        let ghost = |rule: &BoundaryRule, x: f64, y: f64, adjacent: &T| -> T {
            match rule {
                BoundaryRule::FixedValue(v) => T::constant(v.eval(x, y)),
                BoundaryRule::ZeroGradient => adjacent.clone(),
            }
        };

        let (left, right) = (bc.rule(Edge::Left, c), bc.rule(Edge::Right, c));
        for j in 0..ny {
            let y = grid.y(j as isize);
            block[at(-1, j as isize)] = ghost(left, grid.x_min, y, &interior[grid.node(0, j)]);
            block[at(nx as isize, j as isize)] = ghost(right, grid.x_max, y, &interior[grid.node(nx - 1, j)]);
        }
        let (bottom, top) = (bc.rule(Edge::Bottom, c), bc.rule(Edge::Top, c));
        for i in 0..nx {
            let x = grid.x(i as isize);
            block[at(i as isize, -1)] = ghost(bottom, x, grid.y_min, &interior[grid.node(i, 0)]);
            block[at(i as isize, ny as isize)] = ghost(top, x, grid.y_max, &interior[grid.node(i, ny - 1)]);
        }

        let (xl, xr) = (-1isize, nx as isize);
        let (yb, yt) = (-1isize, ny as isize);
        for (ci, cj, ni, nj) in
            [(xl, yb, 0, yb), (xr, yb, nx as isize - 1, yb), (xl, yt, 0, yt), (xr, yt, nx as isize - 1, yt)]
        {
            let along_x = block[at(ni, nj)].clone();
            let along_y = block[at(ci, if cj < 0 { 0 } else { ny as isize - 1 })].clone();
            block[at(ci, cj)] = (along_x + along_y).scale(0.5);
        }
    }
    Padded { pnx, pny, n_components, values: out }
}
