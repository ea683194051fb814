//! Chern-Simons-Higgs vortex systems on finite weighted graphs.
//!
//! - [`graph`]: weighted graphs, vertex fields and the discrete calculus.
//! - [`cartan`]: validated Cartan data and vortex configurations.
//! - [`poisson`]: zero-mean Poisson solves and vortex background fields.
//! - [`abelian`]: the scalar equation, its maximal solutions and critical coupling.
//! - [`constraint`]: the constant-shift constraint of the reduced functional.
//! - [`minimizer`]: the variational solver for the non-Abelian system.
//! - [`problem`]: JSON input files.

// NaN must fail positivity checks, and index loops read better in the linear algebra
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod abelian;
pub mod cartan;
pub mod constraint;
pub mod graph;
pub mod minimizer;
pub mod poisson;
pub mod problem;

pub use abelian::{
    critical_lambda, monotone_solve, AbelianError, AbelianOptions, AbelianProblem, AbelianSolution, CriticalBracket,
};
pub use cartan::{CartanError, CartanPreset, CartanSystem, VortexData};
pub use constraint::{ConstraintError, ConstraintOptions, ConstraintSolution, Moments, PlusRootMap};
pub use graph::{GraphBuilder, GraphError, GraphFile, MultiField, VertexField, WeightedGraph};
pub use minimizer::{
    MinimizeOptions, ProblemInstance, SeedStrategy, SolveError, SolveReport, Termination, VortexProblem,
};
pub use poisson::{BackgroundField, PoissonError};
pub use problem::{ProblemError, ProblemFile};
