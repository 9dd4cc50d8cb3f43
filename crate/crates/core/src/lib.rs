//! Partly smooth set-valued operators as computable objects.
//!
//! The crate is organised bottom-up:
//!
//! * [`sets`]: exact finite descriptions of the closed convex sets that
//!   subdifferentials take as values (boxes, affine-plus-box, spectral sets).
//! * [`manifolds`]: active-manifold descriptors with tangent/normal projectors.
//! * [`operators`]: concrete operators (`∂‖·‖₁`, `∂‖·‖₀`, `∂‖·‖_*`, box normal
//!   cones, smooth maps) plus sum / precomposition / product / perturbation
//!   combinators, each with evaluation, resolvent and active-manifold queries.
//! * [`geometry`]: local unions `U = ∪ (x + γ A_ε(x))`, the identification
//!   radius and union membership.
//! * [`solvers`]: Forward–Backward splitting and mini-batch proximal SGD with
//!   full per-iteration traces.
//! * [`identification`]: identification monitors and step-count bounds.
//!
//! Vectors are `nalgebra::DVector<f64>`. Matrix-valued points (nuclear norm)
//! are flattened column-major.

pub mod error;
pub mod geometry;
pub mod identification;
pub mod linalg;
pub mod manifolds;
pub mod operators;
pub mod sampling;
mod serde_util;
pub mod sets;
pub mod solvers;

pub use error::{Error, Result};
pub use geometry::LocalUnionSpec;
pub use identification::IdentificationReport;
pub use manifolds::{ManifoldDesc, Tolerance};
pub use operators::{LocalizedOperator, PartlySmoothOperator, SmoothMap};
pub use sets::{span_dimension, Norm, StructuredSet};
pub use solvers::{CompositeProblem, SolverTrace, StepSchedule};

pub use nalgebra::{DMatrix, DVector};
