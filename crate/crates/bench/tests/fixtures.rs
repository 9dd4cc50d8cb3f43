use pssso_bench::{l1_union, lasso, point};
use pssso_core::geometry::{brute_force_radius, identification_radius, union_membership};
use pssso_core::sets::Norm;

#[test]
fn union_fixture_is_centered_in_its_union() {
    let spec = l1_union(6);
    assert!(union_membership(&spec, &spec.z_bar(), 1e-12).unwrap().is_some());
    let analytic = identification_radius(&spec, Norm::L2).unwrap();
    let brute = brute_force_radius(&spec, Norm::L2, 100, 1e-3).unwrap();
    assert!(analytic > 0.0);
    assert!((analytic - brute).abs() <= 2e-3, "analytic {analytic}, brute force {brute}");
}

#[test]
fn fixtures_are_deterministic() {
    assert_eq!(point(10, 4), point(10, 4));
    let (a, b) = (lasso(30, 10, 2), lasso(30, 10, 2));
    assert_eq!(a.lipschitz(), b.lipschitz());
    assert_eq!(a.dim(), 10);
}

#[test]
fn large_union_fixture_is_valid() {
    let spec = l1_union(300);
    assert!(identification_radius(&spec, Norm::L2).unwrap() > 0.0);
}
