//! Fixed instances shared by the benchmarks.

use nalgebra::DVector;
use pssso_core::geometry::LocalUnionSpec;
use pssso_core::manifolds::Tolerance;
use pssso_core::operators::PartlySmoothOperator;
use pssso_core::sampling;
use pssso_core::solvers::{generate_lasso_with_truth, sparse_truth, CompositeProblem};

/// Gaussian point of length `n`.
pub fn point(n: usize, seed: u64) -> DVector<f64> {
    sampling::gaussian_vector(&mut sampling::rng(seed), n)
}

/// Lasso with `m` samples, `n` features and a 5-sparse truth.
pub fn lasso(m: usize, n: usize, seed: u64) -> CompositeProblem {
    let truth = sparse_truth(n, 5.min(n), seed).expect("valid sparsity");
    generate_lasso_with_truth(m, 1.0 / (m as f64).sqrt(), 0.01, 0.05, &truth, seed).expect("valid instance")
}

/// `ℓ1` union around a sparse point with a strictly feasible dual.
pub fn l1_union(n: usize) -> LocalUnionSpec {
    let op = PartlySmoothOperator::l1(1.0).expect("positive weight");
    let xbar = DVector::from_fn(n, |i, _| if i % 3 == 0 { 1.0 + i as f64 * 0.1 } else { 0.0 });
    let ubar = DVector::from_fn(n, |i, _| if i % 3 == 0 { 1.0 } else { 0.5 - 0.4 * i as f64 / n as f64 });
    let manifold = op.active_manifold(&xbar, Tolerance::structural()).expect("l1 manifold");
    LocalUnionSpec::new(op, manifold, xbar, ubar, 1.0, 0.05).expect("valid union")
}
