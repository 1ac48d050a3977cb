//! Finite-difference residual operators.
//!
//! Both problems are written once over [`Scalar`] so the same code yields
//! residual values (`f64`), exact directional derivatives ([`Dual`]) and the
//! structural sparsity pattern ([`Footprint`]).
//!
//! Every equation is paired with the unknown on its diagonal: x-momentum with
//! `u`, y-momentum with `v`, continuity with `p`. For the cavity the pairs can
//! be laid out node by node or component block by component block, see
//! [`UnknownOrdering`].

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{pad_values, BoundaryRule, BoundarySpec, Edge, Field, Padded, StructuredGrid};
use crate::scalar::{Dual, Footprint, Scalar};
use crate::sparsela::SparseMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProblemKind {
    /// `Δu = -π²(k²+1)·sin(kπx)·sin(πy)` with the exact solution on the boundary.
    Poisson { k: u32 },
    /// Steady incompressible lid-driven cavity.
    Cavity { re: f64, lid_velocity: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeOrder {
    Second,
    Fourth,
}

impl SchemeOrder {
    pub fn from_int(order: u32) -> Result<Self> {
        match order {
            2 => Ok(SchemeOrder::Second),
            4 => Ok(SchemeOrder::Fourth),
            other => Err(Error::InvalidProblem(format!("scheme order must be 2 or 4, got {other}"))),
        }
    }

    pub fn as_int(self) -> u32 {
        match self {
            SchemeOrder::Second => 2,
            SchemeOrder::Fourth => 4,
        }
    }
}

/// Layout of cavity unknowns and equations. Poisson has one unknown per node
/// and ignores this.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnknownOrdering {
    /// Node by node; each node holds `(p, u, v)` and emits
    /// `(continuity, x-momentum, y-momentum)`.
    NodeMajor,
    /// All `u`, then all `v`, then all `p` (each block node-major); equations
    /// in the matching blocks x-momentum, y-momentum, continuity. The
    /// zero-diagonal continuity rows come last, after elimination has filled
    /// their pivots.
    Blocked,
}

impl UnknownOrdering {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "node" | "node_major" => Ok(Self::NodeMajor),
            "blocked" => Ok(Self::Blocked),
            other => {
                Err(Error::InvalidProblem(format!("unknown ordering `{other}`, expected `blocked` or `node_major`")))
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::NodeMajor => "node_major",
            Self::Blocked => "blocked",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub scheme_order: SchemeOrder,
    pub ordering: UnknownOrdering,
}

impl ProblemSpec {
    pub fn poisson(k: u32) -> Self {
        Self { kind: ProblemKind::Poisson { k }, scheme_order: SchemeOrder::Second, ordering: UnknownOrdering::Blocked }
    }

    pub fn cavity(re: f64) -> Self {
        Self {
            kind: ProblemKind::Cavity { re, lid_velocity: 1.0 },
            scheme_order: SchemeOrder::Second,
            ordering: UnknownOrdering::Blocked,
        }
    }

    pub fn with_order(mut self, order: SchemeOrder) -> Self {
        self.scheme_order = order;
        self
    }

    pub fn with_ordering(mut self, ordering: UnknownOrdering) -> Self {
        self.ordering = ordering;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ProblemKind::Poisson { k } if k < 1 => {
                Err(Error::InvalidProblem(format!("Poisson frequency k must be >= 1, got {k}")))
            }
            ProblemKind::Cavity { re, .. } if !(re > 0.0 && re.is_finite()) => {
                Err(Error::InvalidProblem(format!("Reynolds number must be positive, got {re}")))
            }
            ProblemKind::Cavity { lid_velocity, .. } if !lid_velocity.is_finite() => {
                Err(Error::InvalidProblem("lid velocity must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn is_cavity(&self) -> bool {
        matches!(self.kind, ProblemKind::Cavity { .. })
    }

    /// Field components the network predicts: `u` or `(u, v, p)`.
    pub fn n_components(&self) -> usize {
        match self.kind {
            ProblemKind::Poisson { .. } => 1,
            ProblemKind::Cavity { .. } => 3,
        }
    }

    pub fn component_names(&self) -> &'static [&'static str] {
        match self.kind {
            ProblemKind::Poisson { .. } => &["u"],
            ProblemKind::Cavity { .. } => &["u", "v", "p"],
        }
    }

    pub fn equations_per_node(&self) -> usize {
        self.n_components()
    }

    pub fn default_extents(&self) -> [f64; 4] {
        match self.kind {
            ProblemKind::Poisson { .. } => [-1.0, 1.0, -1.0, 1.0],
            ProblemKind::Cavity { .. } => [0.0, 1.0, 0.0, 1.0],
        }
    }

    pub fn boundary_spec(&self) -> BoundarySpec {
        match self.kind {
            ProblemKind::Poisson { k } => {
                BoundarySpec::uniform(1, BoundaryRule::fixed_fn(move |x, y| poisson_solution(k, x, y)))
            }
            ProblemKind::Cavity { lid_velocity, .. } => BoundarySpec::uniform(3, BoundaryRule::fixed(0.0))
                .with_rule(Edge::Top, 0, BoundaryRule::fixed(lid_velocity))
                .with_rule(Edge::Left, 2, BoundaryRule::ZeroGradient)
                .with_rule(Edge::Right, 2, BoundaryRule::ZeroGradient)
                .with_rule(Edge::Bottom, 2, BoundaryRule::ZeroGradient)
                .with_rule(Edge::Top, 2, BoundaryRule::ZeroGradient),
        }
    }
}

pub fn poisson_solution(k: u32, x: f64, y: f64) -> f64 {
    (k as f64 * PI * x).sin() * (PI * y).sin()
}

pub fn poisson_source(k: u32, x: f64, y: f64) -> f64 {
    let kf = k as f64;
    -PI * PI * (kf * kf + 1.0) * (kf * PI * x).sin() * (PI * y).sin()
}

/// Convective velocities frozen from an earlier network evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizationState {
    grid: StructuredGrid,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl LinearizationState {
    pub fn new(grid: StructuredGrid, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        let n = grid.n_nodes();
        for (name, arr) in [("frozen u", &u), ("frozen v", &v)] {
            if arr.len() != n {
                return Err(Error::DimensionMismatch {
                    context: if name == "frozen u" { "frozen u" } else { "frozen v" },
                    expected: n,
                    got: arr.len(),
                });
            }
            if let Some(index) = arr.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite { index });
            }
        }
        Ok(Self { grid, u, v })
    }

    pub fn zeros(grid: StructuredGrid) -> Self {
        let n = grid.n_nodes();
        Self { grid, u: vec![0.0; n], v: vec![0.0; n] }
    }

    /// Take the velocity components of a `(u, v, p)` field.
    pub fn from_field(field: &Field) -> Result<Self> {
        if field.n_components() != 3 {
            return Err(Error::ComponentMismatch { expected: 3, got: field.n_components() });
        }
        Self::new(*field.grid(), field.component(0).to_vec(), field.component(1).to_vec())
    }

    pub fn grid(&self) -> &StructuredGrid {
        &self.grid
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }
}

/// Discrete residual in the equation order of its [`Discretization`].
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualVector {
    pub values: Vec<f64>,
    pub equations_per_node: usize,
}

impl ResidualVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// A residual operator bound to a grid, problem and (for the cavity) a
/// linearization state. Affine in the unknowns.
#[derive(Debug, Clone)]
pub struct Discretization {
    grid: StructuredGrid,
    spec: ProblemSpec,
    bc: BoundarySpec,
    source: Vec<f64>,
    lin: Option<LinearizationState>,
}

impl Discretization {
    pub fn new(grid: StructuredGrid, spec: ProblemSpec) -> Result<Self> {
        spec.validate()?;
        let source = match spec.kind {
            ProblemKind::Poisson { k } => {
                let mut s = Vec::with_capacity(grid.n_nodes());
                for j in 0..grid.ny as isize {
                    for i in 0..grid.nx as isize {
                        s.push(poisson_source(k, grid.x(i), grid.y(j)));
                    }
                }
                s
            }
            ProblemKind::Cavity { .. } => Vec::new(),
        };
        let lin = spec.is_cavity().then(|| LinearizationState::zeros(grid));
        Ok(Self { grid, spec, bc: spec.boundary_spec(), source, lin })
    }

    /// Replace the frozen convective velocities (cavity only).
    pub fn set_linearization(&mut self, lin: LinearizationState) -> Result<()> {
        if !self.spec.is_cavity() {
            return Err(Error::WrongProblem("linearization applies to the cavity only"));
        }
        if lin.grid != self.grid {
            return Err(Error::GridMismatch("linearization state"));
        }
        self.lin = Some(lin);
        Ok(())
    }

    pub fn with_linearization(mut self, lin: LinearizationState) -> Result<Self> {
        self.set_linearization(lin)?;
        Ok(self)
    }

    pub fn grid(&self) -> &StructuredGrid {
        &self.grid
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn boundary(&self) -> &BoundarySpec {
        &self.bc
    }

    pub fn linearization(&self) -> Option<&LinearizationState> {
        self.lin.as_ref()
    }

    pub fn n_unknowns(&self) -> usize {
        self.grid.n_nodes() * self.spec.n_components()
    }

    pub fn n_residuals(&self) -> usize {
        self.grid.n_nodes() * self.spec.equations_per_node()
    }

    /// Index of field component `c` (`u, v, p` order) at `node`.
    pub fn unknown_index(&self, node: usize, component: usize) -> usize {
        match (self.spec.kind, self.spec.ordering) {
            (ProblemKind::Poisson { .. }, _) => node,
            // node-major slots are (p, u, v)
            (ProblemKind::Cavity { .. }, UnknownOrdering::NodeMajor) => 3 * node + (component + 1) % 3,
            (ProblemKind::Cavity { .. }, UnknownOrdering::Blocked) => component * self.grid.n_nodes() + node,
        }
    }

    /// Row of an equation at `node`; cavity equations are numbered by their
    /// paired component, so `0` is x-momentum, `1` y-momentum, `2` continuity.
    pub fn equation_index(&self, node: usize, equation: usize) -> usize {
        self.unknown_index(node, equation)
    }

    pub fn field_to_unknowns(&self, field: &Field) -> Result<Vec<f64>> {
        self.check_field(field)?;
        Ok(self.components_to_unknowns(field.values()))
    }

    /// Reorder component-major field data to unknown order.
    pub fn components_to_unknowns(&self, values: &[f64]) -> Vec<f64> {
        let n = self.grid.n_nodes();
        let nc = self.spec.n_components();
        let mut w = vec![0.0; n * nc];
        for c in 0..nc {
            for node in 0..n {
                w[self.unknown_index(node, c)] = values[c * n + node];
            }
        }
        w
    }

    /// Inverse of [`Self::components_to_unknowns`].
    pub fn unknowns_to_components<T: Clone>(&self, w: &[T]) -> Vec<T> {
        let n = self.grid.n_nodes();
        let nc = self.spec.n_components();
        let mut out = Vec::with_capacity(n * nc);
        for c in 0..nc {
            for node in 0..n {
                out.push(w[self.unknown_index(node, c)].clone());
            }
        }
        out
    }

    pub fn unknowns_to_field(&self, w: &[f64]) -> Result<Field> {
        if w.len() != self.n_unknowns() {
            return Err(Error::DimensionMismatch {
                context: "unknown vector",
                expected: self.n_unknowns(),
                got: w.len(),
            });
        }
        Field::new(self.grid, self.spec.n_components(), self.unknowns_to_components(w))
    }

    fn check_field(&self, field: &Field) -> Result<()> {
        if field.n_components() != self.spec.n_components() {
            return Err(Error::ComponentMismatch { expected: self.spec.n_components(), got: field.n_components() });
        }
        if *field.grid() != self.grid {
            return Err(Error::GridMismatch("discretization"));
        }
        Ok(())
    }

    pub fn residual(&self, w: &[f64]) -> Vec<f64> {
        self.eval(w)
    }

    /// `J·d` at `w`, evaluated on dual numbers.
    pub fn jvp(&self, w: &[f64], d: &[f64]) -> Vec<f64> {
        let duals: Vec<Dual> = w.iter().zip(d).map(|(&a, &b)| Dual::new(a, b)).collect();
        self.eval(&duals).into_iter().map(|r| r.eps).collect()
    }

    /// Structural Jacobian pattern (values zero). The diagonal is always
    /// present so ILU has a pivot slot on every row.
    pub fn pattern(&self) -> SparseMatrix {
        let n = self.n_unknowns();
        let vars: Vec<Footprint> = (0..n).map(Footprint::var).collect();
        let rows = self.eval(&vars);
        let mut offsets = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        offsets.push(0);
        for (r, fp) in rows.into_iter().enumerate() {
            let mut row = fp.into_indices();
            if let Err(pos) = row.binary_search(&r) {
                row.insert(pos, r);
            }
            cols.extend(row);
            offsets.push(cols.len());
        }
        let nnz = cols.len();
        SparseMatrix::from_raw(n, n, offsets, cols, vec![0.0; nnz])
            .expect("stencil footprint yields a valid CSR pattern")
    }

    /// Evaluate the residual over any scalar type.
    pub fn eval<T: Scalar>(&self, w: &[T]) -> Vec<T> {
        assert_eq!(w.len(), self.n_unknowns(), "unknown vector length");
        let comps = self.unknowns_to_components(w);
        let padded = pad_values(&comps, self.spec.n_components(), &self.grid, &self.bc);
        let st = Stencil { grid: &self.grid, p: &padded, fourth: self.spec.scheme_order == SchemeOrder::Fourth };
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        match self.spec.kind {
            ProblemKind::Poisson { .. } => {
                let mut out = Vec::with_capacity(nx * ny);
                for j in 0..ny {
                    for i in 0..nx {
                        let lap = st.dxx(0, i, j) + st.dyy(0, i, j);
                        out.push(lap - T::constant(self.source[self.grid.node(i, j)]));
                    }
                }
                out
            }
            ProblemKind::Cavity { re, .. } => {
                let lin = self.lin.as_ref().expect("cavity discretization carries a linearization");
                let nu = 1.0 / re;
                let (cu, cv, cp) = (0usize, 1usize, 2usize);
                let mut out = vec![T::constant(0.0); 3 * nx * ny];
                for j in 0..ny {
                    for i in 0..nx {
                        let node = self.grid.node(i, j);
                        let (uf, vf) = (lin.u[node], lin.v[node]);
                        let xm = st.dx(cu, i, j).scale(uf) + st.dy(cu, i, j).scale(vf) + st.dx(cp, i, j)
                            - (st.dxx(cu, i, j) + st.dyy(cu, i, j)).scale(nu);
                        let ym = st.dx(cv, i, j).scale(uf) + st.dy(cv, i, j).scale(vf) + st.dy(cp, i, j)
                            - (st.dxx(cv, i, j) + st.dyy(cv, i, j)).scale(nu);
                        out[self.equation_index(node, 0)] = xm;
                        out[self.equation_index(node, 1)] = ym;
                        out[self.equation_index(node, 2)] = st.dx(cu, i, j) + st.dy(cv, i, j);
                    }
                }
                out
            }
        }
    }
}

/// Central differences on a padded field. The fourth-order stencils are used
/// only where all five points are interior nodes; nodes within two of the
/// boundary fall back to second order so a single ghost layer suffices.
struct Stencil<'a, T> {
    grid: &'a StructuredGrid,
    p: &'a Padded<T>,
    fourth: bool,
}

impl<T: Scalar> Stencil<'_, T> {
    #[inline]
    fn v(&self, c: usize, i: isize, j: isize) -> T {
        self.p.at(c, i, j).clone()
    }

    #[inline]
    fn wide_x(&self, i: usize) -> bool {
        self.fourth && i >= 2 && i + 2 < self.grid.nx
    }

    #[inline]
    fn wide_y(&self, j: usize) -> bool {
        self.fourth && j >= 2 && j + 2 < self.grid.ny
    }

    fn dx(&self, c: usize, i: usize, j: usize) -> T {
        let (i, j2) = (i as isize, j as isize);
        let h = self.grid.hx;
        if self.wide_x(i as usize) {
            (self.v(c, i - 2, j2) - self.v(c, i + 2, j2) + (self.v(c, i + 1, j2) - self.v(c, i - 1, j2)).scale(8.0))
                .scale(1.0 / (12.0 * h))
        } else {
            (self.v(c, i + 1, j2) - self.v(c, i - 1, j2)).scale(1.0 / (2.0 * h))
        }
    }

    fn dy(&self, c: usize, i: usize, j: usize) -> T {
        let (i2, j) = (i as isize, j as isize);
        let h = self.grid.hy;
        if self.wide_y(j as usize) {
            (self.v(c, i2, j - 2) - self.v(c, i2, j + 2) + (self.v(c, i2, j + 1) - self.v(c, i2, j - 1)).scale(8.0))
                .scale(1.0 / (12.0 * h))
        } else {
            (self.v(c, i2, j + 1) - self.v(c, i2, j - 1)).scale(1.0 / (2.0 * h))
        }
    }

    fn dxx(&self, c: usize, i: usize, j: usize) -> T {
        let (i, j2) = (i as isize, j as isize);
        let h2 = self.grid.hx * self.grid.hx;
        if self.wide_x(i as usize) {
            ((self.v(c, i - 1, j2) + self.v(c, i + 1, j2)).scale(16.0)
                - (self.v(c, i - 2, j2) + self.v(c, i + 2, j2))
                - self.v(c, i, j2).scale(30.0))
            .scale(1.0 / (12.0 * h2))
        } else {
            (self.v(c, i - 1, j2) + self.v(c, i + 1, j2) - self.v(c, i, j2).scale(2.0)).scale(1.0 / h2)
        }
    }

    fn dyy(&self, c: usize, i: usize, j: usize) -> T {
        let (i2, j) = (i as isize, j as isize);
        let h2 = self.grid.hy * self.grid.hy;
        if self.wide_y(j as usize) {
            ((self.v(c, i2, j - 1) + self.v(c, i2, j + 1)).scale(16.0)
                - (self.v(c, i2, j - 2) + self.v(c, i2, j + 2))
                - self.v(c, i2, j).scale(30.0))
            .scale(1.0 / (12.0 * h2))
        } else {
            (self.v(c, i2, j - 1) + self.v(c, i2, j + 1) - self.v(c, i2, j).scale(2.0)).scale(1.0 / h2)
        }
    }
}

fn require_grid(field: &Field, grid: &StructuredGrid) -> Result<()> {
    if field.grid() != grid {
        return Err(Error::GridMismatch("grid argument"));
    }
    Ok(())
}

pub fn poisson_residual(u: &Field, grid: &StructuredGrid, spec: &ProblemSpec) -> Result<ResidualVector> {
    if spec.is_cavity() {
        return Err(Error::WrongProblem("poisson_residual needs a Poisson problem"));
    }
    require_grid(u, grid)?;
    let disc = Discretization::new(*grid, *spec)?;
    let w = disc.field_to_unknowns(u)?;
    Ok(ResidualVector { values: disc.residual(&w), equations_per_node: 1 })
}

pub fn ns_residual(
    uvp: &Field,
    lin: &LinearizationState,
    grid: &StructuredGrid,
    spec: &ProblemSpec,
) -> Result<ResidualVector> {
    if !spec.is_cavity() {
        return Err(Error::WrongProblem("ns_residual needs a cavity problem"));
    }
    require_grid(uvp, grid)?;
    let disc = Discretization::new(*grid, *spec)?.with_linearization(lin.clone())?;
    let w = disc.field_to_unknowns(uvp)?;
    Ok(ResidualVector { values: disc.residual(&w), equations_per_node: 3 })
}

/// Directional derivative of the residual at `point` along `direction`.
pub fn residual_jvp(
    point: &Field,
    direction: &Field,
    lin: Option<&LinearizationState>,
    grid: &StructuredGrid,
    spec: &ProblemSpec,
) -> Result<ResidualVector> {
    require_grid(point, grid)?;
    require_grid(direction, grid)?;
    let mut disc = Discretization::new(*grid, *spec)?;
    if spec.is_cavity() {
        let lin = lin.ok_or(Error::WrongProblem("cavity jvp needs a linearization state"))?;
        disc.set_linearization(lin.clone())?;
    }
    let w = disc.field_to_unknowns(point)?;
    let d = disc.field_to_unknowns(direction)?;
    Ok(ResidualVector { values: disc.jvp(&w, &d), equations_per_node: spec.equations_per_node() })
}

/// Fraction of a component's deviation from its mean carried by the
/// `(-1)^(i+j)` checkerboard mode. Collocated central differencing can leave
/// this mode weakly constrained; the value is a diagnostic only.
pub fn checkerboard_fraction(values: &[f64], grid: &StructuredGrid) -> f64 {
    let n = grid.n_nodes();
    let mean = values[..n].iter().sum::<f64>() / n as f64;
    let mut proj = 0.0;
    let mut norm2 = 0.0;
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let d = values[grid.node(i, j)] - mean;
            let s = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            proj += s * d;
            norm2 += d * d;
        }
    }
    if norm2 == 0.0 {
        return 0.0;
    }
    (proj * proj / n as f64 / norm2).sqrt()
}
