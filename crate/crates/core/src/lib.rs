//! Jacobian-preconditioned training of physics-informed networks on
//! structured grids.
//!
//! The pieces fit together as follows:
//!
//! - [`grid`] holds the node lattice, fields and the padding that enforces
//!   boundary conditions exactly.
//! - [`discretize`] turns a field into a finite-difference residual vector and
//!   evaluates directional derivatives of that residual with dual numbers.
//! - [`sparsela`] assembles the residual Jacobian by column coloring, factors it
//!   with ILU(0), and provides the triangular solves (plain and transposed), a
//!   restarted GMRES and dense condition-number estimates.
//! - [`net`] is a small reverse-mode engine plus the coordinate-to-field
//!   networks.
//! - [`train`] evaluates the plain and preconditioned losses, chains the
//!   adjoint gradient back to the parameters and runs Adam or L-BFGS.
//! - [`oracle`] provides reference solutions and the relative L2 error.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod discretize;
pub mod error;
pub mod grid;
pub mod net;
pub mod oracle;
pub mod scalar;
pub mod sparsela;
pub mod train;

pub use discretize::{
    Discretization, LinearizationState, ProblemKind, ProblemSpec, ResidualVector, SchemeOrder, UnknownOrdering,
};
pub use error::{Error, Result};
pub use grid::{BoundaryRule, BoundarySpec, Edge, Field, StructuredGrid};
pub use net::{Activation, NetworkArch, NetworkKind, ParameterSet, Tape};
pub use oracle::{Provenance, ReferenceSolution};
pub use sparsela::{Coloring, IluFactors, SparseMatrix};
pub use train::{ConvergenceRecord, LossWeight, Optimizer, TrainConfig, TrainMode};
