mod common;

use proptest::prelude::*;
use pssso_core::geometry::identification_radius;
use pssso_core::identification::{
    error_series, fb_predicted_steps, first_identification, monitor, predicted_steps_finite_length,
    predicted_steps_linear, BoundParams,
};
use pssso_core::solvers::{
    fb_rate_params, generate_elastic_net, generate_lasso, reference_solution, run_fb, run_prox_sgd, LassoSpec,
};
use pssso_core::{DVector, LocalUnionSpec, ManifoldDesc, Norm, PartlySmoothOperator, StepSchedule, Tolerance};

fn half_smallest_active(x: &DVector<f64>) -> f64 {
    0.5 * x.iter().filter(|v| **v != 0.0).fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn linear_bound_matches_search(d in 1e-6..10.0, gamma in 0.0..5.0, p in 0.0..5.0, c in 1e-3..100.0, rho in 0.01..0.999) {
        let k = predicted_steps_linear(d, gamma, p, c, rho).unwrap();
        let holds = |k: usize| (1.0 + gamma * p) * c * rho.powi(k as i32) <= d;
        let mut search = 0;
        while !holds(search) {
            search += 1;
        }
        prop_assert_eq!(k, search);
    }

    #[test]
    fn finite_length_bound_matches_search(rs in prop::collection::vec(0.0..1.0f64, 0..40), length in 0.0..10.0, d in 1e-3..2.0, gamma in 0.0..2.0, p in 0.0..2.0) {
        let got = predicted_steps_finite_length(&rs, length, d, gamma, p).unwrap();
        let threshold = length - d / (1.0 + gamma * p);
        let mut acc = 0.0;
        let mut expect = if threshold <= 0.0 { Some(0) } else { None };
        if expect.is_none() {
            for (k, r) in rs.iter().enumerate() {
                acc += r;
                if acc >= threshold {
                    expect = Some(k + 1);
                    break;
                }
            }
        }
        prop_assert_eq!(got, expect);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn fb_identifies_before_the_bound(seed in any::<u64>(), alpha in 0.5..2.0) {
        let (prob, _) = generate_elastic_net(20, 32, 4, 1.0 / 20f64.sqrt(), 0.01, 0.05, alpha, seed).unwrap();
        let l = prob.lipschitz();
        let gamma = prob.kappa() / (l * l);
        let rho = fb_rate_params(&prob, gamma).unwrap().rho;
        let x0 = DVector::zeros(prob.dim());
        let (xbar, ubar) = reference_solution(&prob, &x0, 1e-15, 200_000).unwrap();
        prop_assume!(xbar.iter().any(|v| *v != 0.0));
        let m = ManifoldDesc::support_at(&xbar, Tolerance::structural());
        let eps = half_smallest_active(&xbar);
        let spec = LocalUnionSpec::new(prob.nonsmooth.clone(), m.clone(), xbar.clone(), ubar.clone(), gamma, eps).unwrap();
        let d = identification_radius(&spec, Norm::Linf).unwrap();
        prop_assume!(d > 0.0);
        let predicted = fb_predicted_steps(&x0, &xbar, gamma, rho, d).unwrap();
        let trace = run_fb(&prob, gamma, &x0, predicted + 50, 0.0).unwrap();
        let (first, stable) = first_identification(&trace, &m, Tolerance::structural()).unwrap();
        let stable = stable.expect("identifies");
        prop_assert!(first.unwrap() <= stable);
        prop_assert!(stable <= predicted, "stable {} predicted {}", stable, predicted);
        let report = monitor(&trace, &m, Tolerance::structural(), &xbar, &ubar, d, Norm::Linf,
            BoundParams { gamma, rho: Some(rho), ..Default::default() }, Some(predicted)).unwrap();
        prop_assert!(report.soundness_violations().is_empty());
    }

    #[test]
    fn sgd_iterates_within_radius_are_on_the_manifold(seed in any::<u64>(), batch in 1usize..=60) {
        let spec = LassoSpec { m: 60, n: 20, sparsity: 3, sigma1: 1.0, sigma2: 0.05, mu: 0.1 };
        let (prob, _) = generate_lasso(&spec, seed).unwrap();
        let x0 = DVector::zeros(prob.dim());
        let (xbar, ubar) = reference_solution(&prob, &x0, 1e-14, 200_000).unwrap();
        prop_assume!(xbar.iter().any(|v| *v != 0.0));
        let unorm = &ubar / spec.mu;
        let m = ManifoldDesc::support_at(&xbar, Tolerance::structural());
        let union = LocalUnionSpec::new(PartlySmoothOperator::l1(1.0).unwrap(), m.clone(), xbar.clone(), unorm.clone(), 1.0, half_smallest_active(&xbar)).unwrap();
        let d = identification_radius(&union, Norm::Linf).unwrap();
        let schedule = StepSchedule::InvSqrt { alpha0: 1.0 / prob.lipschitz() };
        let trace = run_prox_sgd(&prob, schedule, batch, &x0, 400, seed).unwrap();
        let report = monitor(&trace, &m, Tolerance::structural(), &xbar, &unorm, d, Norm::Linf,
            BoundParams { gamma: 1.0, ..Default::default() }, None).unwrap();
        prop_assert!(report.soundness_violations().is_empty());
        if let (Some(f), Some(s)) = (report.first_identified, report.stable_from) {
            prop_assert!(s >= f);
        }
        let errs = error_series(&trace, &xbar, &unorm, 1.0, Norm::Linf).unwrap();
        prop_assert!(errs[0].is_none() && errs[1..].iter().all(|e| e.is_some()));
    }
}

#[test]
fn report_serializes() {
    let spec = LassoSpec { m: 30, n: 10, sparsity: 2, sigma1: 1.0, sigma2: 0.0, mu: 0.1 };
    let (prob, _) = generate_lasso(&spec, 4).unwrap();
    let x0 = DVector::zeros(10);
    let (xbar, ubar) = reference_solution(&prob, &x0, 1e-14, 100_000).unwrap();
    let m = ManifoldDesc::support_at(&xbar, Tolerance::structural());
    let trace = run_fb(&prob, 1.0 / prob.lipschitz(), &x0, 50, 0.0).unwrap();
    let report = monitor(&trace, &m, Tolerance::structural(), &xbar, &ubar, 0.01, Norm::L2,
        BoundParams { gamma: 1.0 / prob.lipschitz(), ..Default::default() }, None).unwrap();
    let back: pssso_core::IdentificationReport = serde_json::from_str(&report.to_json()).unwrap();
    assert_eq!(back, report);
}
