mod common;

use proptest::prelude::*;
use pssso_core::solvers::{
    fb_rate_params, generate_elastic_net, generate_lasso, reference_solution, run_fb, run_prox_sgd,
    sgd_error_terms, LassoSpec,
};
use pssso_core::{DVector, PartlySmoothOperator, StepSchedule};

fn elastic_net(seed: u64, alpha: f64, mu: f64) -> pssso_core::CompositeProblem {
    generate_elastic_net(20, 32, 4, 1.0 / 20f64.sqrt(), 0.01, mu, alpha, seed).unwrap().0
}

fn lasso(seed: u64) -> pssso_core::CompositeProblem {
    let spec = LassoSpec { m: 60, n: 20, sparsity: 3, sigma1: 1.0, sigma2: 0.05, mu: 0.1 };
    generate_lasso(&spec, seed).unwrap().0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn fb_duals_are_feasible(seed in any::<u64>(), frac in 0.1..1.9) {
        let prob = lasso(seed);
        let gamma = frac / prob.lipschitz();
        let trace = run_fb(&prob, gamma, &DVector::zeros(prob.dim()), 300, 0.0).unwrap();
        prop_assert_eq!(trace.iterates.len(), trace.duals.len());
        prop_assert_eq!(trace.iterates.len(), trace.residuals.len());
        for (x, u) in trace.iterates.iter().zip(&trace.duals).skip(1) {
            let value = prob.nonsmooth.eval(x).unwrap();
            prop_assert!(value.contains(u.as_ref().unwrap(), 1e-8).unwrap());
        }
    }

    #[test]
    fn sgd_duals_are_feasible(seed in any::<u64>(), batch in 1usize..=60) {
        let prob = lasso(seed);
        let schedule = StepSchedule::InvSqrt { alpha0: 0.5 / prob.lipschitz() };
        let trace = run_prox_sgd(&prob, schedule, batch, &DVector::zeros(prob.dim()), 200, seed).unwrap();
        let l1 = PartlySmoothOperator::l1(1.0).unwrap();
        for (x, u) in trace.iterates.iter().zip(&trace.duals).skip(1) {
            prop_assert!(l1.eval(x).unwrap().contains(u.as_ref().unwrap(), 1e-8).unwrap());
        }
    }

    #[test]
    fn fb_contracts_at_the_certified_rate(seed in any::<u64>(), alpha in 0.5..2.0, mu in 0.02..0.3, frac in 0.2..1.0) {
        let prob = elastic_net(seed, alpha, mu);
        let l = prob.lipschitz();
        let gamma = frac * prob.kappa() / (l * l);
        let rate = fb_rate_params(&prob, gamma).unwrap();
        let x0 = DVector::from_element(prob.dim(), 1.0);
        let (xbar, ubar) = reference_solution(&prob, &x0, 1e-15, 200_000).unwrap();
        let trace = run_fb(&prob, gamma, &x0, 400, 0.0).unwrap();
        let err: Vec<f64> = trace.iterates.iter().map(|x| (x - &xbar).norm()).collect();
        for k in 0..trace.len() {
            if err[k] > 1e-9 {
                prop_assert!(err[k + 1] <= rate.rho * err[k] * (1.0 + 1e-6), "k = {}", k);
                let du = (trace.duals[k + 1].as_ref().unwrap() - &ubar).norm();
                prop_assert!(du <= 2.0 / gamma * err[k] * (1.0 + 1e-6), "dual k = {}", k + 1);
            }
        }
    }

    #[test]
    fn sgd_error_decomposition_holds(seed in any::<u64>(), batch in 1usize..=60) {
        let prob = lasso(seed);
        let x0 = DVector::zeros(prob.dim());
        let (xbar, _) = reference_solution(&prob, &x0, 1e-14, 200_000).unwrap();
        let schedule = if batch == 60 {
            StepSchedule::Constant { alpha: 1.0 / prob.lipschitz() }
        } else {
            StepSchedule::InvSqrt { alpha0: 1.0 / prob.lipschitz() }
        };
        let trace = run_prox_sgd(&prob, schedule, batch, &x0, 200, seed).unwrap();
        for (k, t) in sgd_error_terms(&prob, &trace, &xbar).unwrap().iter().enumerate() {
            prop_assert!(t.lhs <= t.bound() * (1.0 + 1e-9) + 1e-12, "k = {} lhs {} bound {}", k, t.lhs, t.bound());
            if batch == 60 {
                prop_assert!(t.sampled == 0.0 && t.unsampled == 0.0);
            }
        }
    }

    #[test]
    fn runs_are_deterministic(seed in any::<u64>(), batch in 1usize..60) {
        let prob = lasso(seed);
        let x0 = DVector::zeros(prob.dim());
        let schedule = StepSchedule::Decay { c: 1.0 / prob.lipschitz(), k0: 1.0 };
        let a = run_prox_sgd(&prob, schedule, batch, &x0, 50, seed).unwrap();
        let b = run_prox_sgd(&prob, schedule, batch, &x0, 50, seed).unwrap();
        prop_assert_eq!(&a.iterates, &b.iterates);
        prop_assert_eq!(&a.batches, &b.batches);
        let again = lasso(seed);
        prop_assert_eq!(&again.data.unwrap().a, &prob.data.as_ref().unwrap().a);
        let c = run_prox_sgd(&prob, schedule, batch, &x0, 50, seed.wrapping_add(1)).unwrap();
        prop_assert_ne!(&a.batches, &c.batches);
    }
}

#[test]
fn full_batch_sgd_matches_forward_backward() {
    let prob = lasso(9);
    let x0 = DVector::zeros(prob.dim());
    let gamma = 1.0 / prob.lipschitz();
    let fb = run_fb(&prob, gamma, &x0, 100, 0.0).unwrap();
    let sgd = run_prox_sgd(&prob, StepSchedule::Constant { alpha: gamma }, 60, &x0, 100, 1).unwrap();
    for (a, b) in fb.iterates.iter().zip(&sgd.iterates) {
        assert!((a - b).amax() <= 1e-12);
    }
}
