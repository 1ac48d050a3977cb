//! Sparse linear algebra: CSR storage, column coloring, colored Jacobian
//! assembly, ILU(0) with triangular solves, GMRES and condition numbers.

mod coloring;
mod cond;
mod csr;
mod gmres;
mod ilu;
mod jacobian;

pub use coloring::{color_columns, color_seed, first_conflict, Coloring};
pub use cond::{estimate_condition, estimate_preconditioned_condition, preconditioned_dense, DENSE_LIMIT};
pub use csr::{spmv, SparseMatrix};
pub use gmres::{gmres, gmres_from, GmresOptions, GmresOutcome};
pub use ilu::{apply_minv, apply_minv_transpose, ilu0, IluFactors, PIVOT_SHIFT};
pub use jacobian::{assemble_jacobian, probe_jacobian_dense, LinearSystem};
