//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Commands run through [`pssso_cli::execute`] on their desk presets; the
//! oracle criteria call the core crate directly against brute-force
//! references written here.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;

use pssso_cli::{execute, Command, ExperimentConfig};
use pssso_core::geometry::{brute_force_radius, identification_radius, LocalUnionSpec};
use pssso_core::linalg::{self, Svd};
use pssso_core::sampling::{self, SeededRng};
use pssso_core::solvers::{fb_rate_params, generate_elastic_net, reference_solution, run_fb};
use pssso_core::{DMatrix, DVector, ManifoldDesc, Norm, PartlySmoothOperator as Op, Tolerance};

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

/// Runs a command on the desk preset and requires the named checks to pass
/// within `budget`.
fn command(cmd: Command, checks: &[&str], budget: Duration) -> Verdict {
    let start = Instant::now();
    let outcome = match execute(cmd, &ExperimentConfig::default()) {
        Ok(o) => o,
        Err(e) => return verdict(false, format!("{} failed: {e}", cmd.name())),
    };
    let elapsed = start.elapsed();
    let mut failed = Vec::new();
    for &name in checks {
        match outcome.check(name) {
            Some(c) if c.passed => {}
            Some(c) => failed.push(format!("{name} ({})", c.detail)),
            None => failed.push(format!("{name} (missing)")),
        }
    }
    let timely = elapsed <= budget;
    let detail = if failed.is_empty() {
        format!("{} checks passed in {:.2?} (budget {budget:?})", checks.len(), elapsed)
    } else {
        format!("failed: {}; {:.2?}", failed.join("; "), elapsed)
    };
    verdict(failed.is_empty() && timely, detail)
}

fn degenerate_l1() -> Verdict {
    command(
        Command::DegenerateL1,
        &["choice1 final support", "choice1 converges", "choice2 final support", "choice2 converges"],
        Duration::from_secs(1),
    )
}

fn degenerate_nuclear() -> Verdict {
    command(
        Command::DegenerateNuclear,
        &["choice1 final rank", "choice2 final rank", "choice3 final rank"],
        Duration::from_secs(2),
    )
}

fn elastic_bound() -> Verdict {
    command(Command::ElasticNetBound, &["bound is finite", "observed within bound"], Duration::from_secs(5))
}

fn minibatch() -> Verdict {
    command(
        Command::MinibatchLasso,
        &["full batch identifies", "small batch does not identify", "error below d implies support"],
        Duration::from_secs(60),
    )
}

fn saa() -> Verdict {
    command(Command::SaaConsistency, &["log-log slope"], Duration::from_secs(120))
}

fn calculus() -> Verdict {
    command(
        Command::CalculusCheck,
        &[
            "sum rule: normal spaces and transversality",
            "precomposition qualification gating",
            "saddle-point operator is monotone",
            "variational-inequality operator is monotone",
        ],
        Duration::from_secs(60),
    )
}

fn sign(r: &mut SeededRng) -> f64 {
    if r.random_bool(0.5) {
        1.0
    } else {
        -1.0
    }
}

/// Nondegenerate 3-D instance: 0 `ℓ1`, 1 `ℓ0`, 2 box normal cone.
fn union_instance(r: &mut SeededRng, kind: usize) -> LocalUnionSpec {
    let n = 3;
    let gamma = r.random_range(0.2..1.5);
    let eps = r.random_range(0.05..0.3);
    let mu = r.random_range(0.5..2.0);
    let support: Vec<usize> = (0..n).filter(|_| r.random_bool(0.6)).collect();
    let on = |i: usize| support.contains(&i);
    match kind {
        0 => {
            let xbar = DVector::from_fn(n, |i, _| if on(i) { sign(r) * r.random_range(0.5..2.0) } else { 0.0 });
            let ubar = DVector::from_fn(n, |i, _| if on(i) { mu * xbar[i].signum() } else { mu * r.random_range(-0.8..0.8) });
            let m = ManifoldDesc::fixed_support(support.iter().copied(), n).unwrap();
            LocalUnionSpec::new(Op::l1(mu).unwrap(), m, xbar, ubar, gamma, eps).unwrap()
        }
        1 => {
            // keep the hard threshold inside the union: |x̄ᵢ| > √(2γμ) + ε on
            // the support and γ(|ūᵢ| + ε) < √(2γμ) off it
            let t = (2.0 * gamma * mu).sqrt();
            let xbar = DVector::from_fn(n, |i, _| if on(i) { sign(r) * (t + eps + r.random_range(0.3..1.5)) } else { 0.0 });
            let cap = t / gamma - eps;
            let ubar = DVector::from_fn(n, |i, _| if on(i) { 0.0 } else { r.random_range(-0.8..0.8) * cap });
            let m = ManifoldDesc::fixed_support(support.iter().copied(), n).unwrap();
            LocalUnionSpec::new(Op::l0(mu).unwrap(), m, xbar, ubar, gamma, eps).unwrap()
        }
        _ => {
            let mut xbar = DVector::zeros(n);
            let mut ubar = DVector::zeros(n);
            for i in 0..n {
                match r.random_range(0..3) {
                    0 => {
                        xbar[i] = -1.0;
                        ubar[i] = -r.random_range(0.4..2.0);
                    }
                    1 => {
                        xbar[i] = 1.0;
                        ubar[i] = r.random_range(0.4..2.0);
                    }
                    _ => xbar[i] = r.random_range(-0.5..0.5),
                }
            }
            let op = Op::normal_cone_box(DVector::from_element(n, -1.0), DVector::from_element(n, 1.0)).unwrap();
            let m = op.active_manifold(&xbar, Tolerance::structural()).unwrap();
            LocalUnionSpec::new(op, m, xbar, ubar, gamma, eps).unwrap()
        }
    }
}

fn radius_oracle() -> Verdict {
    let step = 1e-3;
    let mut worst = String::new();
    let mut ok = true;
    for seed in 0..10u64 {
        let mut r = sampling::rng_stream(seed, 601);
        let spec = union_instance(&mut r, seed as usize % 3);
        let d = identification_radius(&spec, Norm::L2).unwrap();
        let b = brute_force_radius(&spec, Norm::L2, 500, step).unwrap();
        let tol = (0.05 * d).max(2.0 * step);
        if (d - b).abs() > tol {
            ok = false;
            worst = format!("seed {seed}: analytic {d}, brute force {b}");
        }
    }
    verdict(ok, if ok { "10 instances agree within max(5%, 2·step)".into() } else { worst })
}

/// Largest `‖J_{γA_ε}(x + γu) − x‖∞` over samples `x ∈ M ∩ B_ε(x̄)`,
/// `u ∈ A_ε(x)`; `None` counts as a miss.
fn resolvent_gap(spec: &LocalUnionSpec, samples: usize, r: &mut SeededRng) -> (f64, usize) {
    let local = spec.localized();
    let mut worst: f64 = 0.0;
    let mut misses = 0;
    let mut k = 0;
    while k < samples {
        let x = spec.manifold.sample_near(&spec.xbar, spec.eps * 0.99, r).unwrap();
        let Some(u) = local.eval(&x).unwrap().sample(r, spec.eps) else {
            continue;
        };
        match local.resolvent(&(&x + &u * spec.gamma), spec.gamma, 1e-9).unwrap() {
            Some(j) => worst = worst.max(linalg::linf(&(j - &x))),
            None => misses += 1,
        }
        k += 1;
    }
    (worst, misses)
}

fn resolvent_identity() -> Verdict {
    let per = 500;
    let mut lines = Vec::new();
    let mut ok = true;
    let mut r = sampling::rng_stream(7, 701);

    // ℓ1 and ℓ0 on random 4-D instances, a fresh instance every 50 samples
    for (name, kind) in [("l1", 0usize), ("l0", 1)] {
        let (mut worst, mut misses) = (0.0_f64, 0);
        for _ in 0..per / 50 {
            let n = 4;
            let support: Vec<usize> = (0..n).filter(|_| r.random_bool(0.5)).collect();
            let on = |i: usize| support.contains(&i);
            let m = ManifoldDesc::fixed_support(support.iter().copied(), n).unwrap();
            let spec = if kind == 0 {
                let xbar = DVector::from_fn(n, |i, _| if on(i) { sign(&mut r) * r.random_range(0.5..2.0) } else { 0.0 });
                let ubar = DVector::from_fn(n, |i, _| if on(i) { xbar[i].signum() } else { r.random_range(-0.9..0.9) });
                LocalUnionSpec::new(Op::l1(1.0).unwrap(), m, xbar, ubar, 0.5, 0.2).unwrap()
            } else {
                // μ = 1, γ = 0.02, ε = 0.1: γε ≤ √(2γ) < 1 − ε
                let (gamma, eps): (f64, f64) = (0.02, 0.1);
                assert!(gamma * eps <= (2.0 * gamma).sqrt() && (2.0 * gamma).sqrt() < 1.0 - eps);
                let xbar = DVector::from_fn(n, |i, _| if on(i) { sign(&mut r) * r.random_range(1.0..2.0) } else { 0.0 });
                let ubar = DVector::from_fn(n, |i, _| if on(i) { 0.0 } else { r.random_range(-3.0..3.0) });
                LocalUnionSpec::new(Op::l0(1.0).unwrap(), m, xbar, ubar, gamma, eps).unwrap()
            };
            let (w, miss) = resolvent_gap(&spec, 50, &mut r);
            worst = worst.max(w);
            misses += miss;
        }
        ok &= worst <= 1e-12 && misses == 0;
        lines.push(format!("{name}: max gap {worst:e}, {misses} misses"));
    }

    // nuclear norm on 3×3 instances of rank 1 or 2
    let (mut worst, mut misses) = (0.0_f64, 0);
    for _ in 0..per / 50 {
        let n = 3;
        let rank = r.random_range(1..=2);
        let u = sampling::random_orthogonal(&mut r, n);
        let v = sampling::random_orthogonal(&mut r, n);
        let s = DVector::from_fn(n, |i, _| if i < rank { r.random_range(1.0..3.0) } else { 0.0 });
        let xbar = &u * DMatrix::from_diagonal(&s) * v.transpose();
        let t = DVector::from_fn(n, |i, _| if i < rank { 1.0 } else { r.random_range(0.0..0.8) });
        let ubar = &u * DMatrix::from_diagonal(&t) * v.transpose();
        let m = ManifoldDesc::fixed_rank(rank, n, n).unwrap();
        let spec = LocalUnionSpec::new(Op::nuclear(1.0, n, n).unwrap(), m, linalg::flatten(&xbar), linalg::flatten(&ubar), 0.5, 0.1).unwrap();
        let (w, miss) = resolvent_gap(&spec, 50, &mut r);
        worst = worst.max(w);
        misses += miss;
    }
    ok &= worst <= 1e-12 && misses == 0;
    lines.push(format!("nuclear: max gap {worst:e}, {misses} misses"));
    verdict(ok, lines.join("; "))
}

/// Minimizer of `t·|x| + ½(x − z)²` (optionally over `x ≥ 0`) from its
/// candidates, confirmed against a grid.
fn scalar_soft_oracle(z: f64, t: f64, nonneg: bool) -> f64 {
    let f = |x: f64| t * x.abs() + 0.5 * (x - z) * (x - z);
    let mut cands = vec![0.0, z - t, z + t];
    if nonneg {
        cands.retain(|&x| x >= 0.0);
    }
    let best = cands.into_iter().filter(|&x| !x.is_nan()).fold(f64::NAN, |b, x| if b.is_nan() || f(x) < f(b) { x } else { b });
    let (lo, hi) = if nonneg { (0.0, z.abs() + t + 1.0) } else { (-z.abs() - t - 1.0, z.abs() + t + 1.0) };
    let steps = 2000;
    let grid_min = (0..=steps).map(|i| f(lo + (hi - lo) * i as f64 / steps as f64)).fold(f64::INFINITY, f64::min);
    assert!(f(best) <= grid_min + 1e-12, "candidate is not the global minimizer");
    best
}

fn prox_oracles() -> Verdict {
    let mut r = sampling::rng_stream(11, 801);
    let trials = 1000;
    let mut lines = Vec::new();
    let mut ok = true;

    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let n = r.random_range(1..=4);
        let z = sampling::gaussian_vector(&mut r, n) * 2.0;
        let (gamma, mu) = (r.random_range(0.05..2.0), r.random_range(0.1..2.0));
        let got = Op::l1(mu).unwrap().resolvent(&z, gamma).unwrap();
        for i in 0..n {
            worst = worst.max((got[i] - scalar_soft_oracle(z[i], gamma * mu, false)).abs());
        }
    }
    ok &= worst <= 1e-8;
    lines.push(format!("soft {worst:e}"));

    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let n = r.random_range(1..=3);
        let z = sampling::gaussian_vector(&mut r, n) * 2.0;
        let (gamma, mu) = (r.random_range(0.05..2.0), r.random_range(0.1..2.0));
        let got = Op::l0(mu).unwrap().resolvent(&z, gamma).unwrap();
        // γμ‖x‖₀ + ½‖x − z‖² over all 2ⁿ supports
        let mut best = (f64::INFINITY, DVector::zeros(n));
        for mask in 0..(1usize << n) {
            let x = DVector::from_fn(n, |i, _| if mask >> i & 1 == 1 { z[i] } else { 0.0 });
            let f = gamma * mu * mask.count_ones() as f64 + 0.5 * (&x - &z).norm_squared();
            if f < best.0 {
                best = (f, x);
            }
        }
        worst = worst.max(linalg::linf(&(got - best.1)));
    }
    ok &= worst <= 1e-8;
    lines.push(format!("hard {worst:e}"));

    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let (p, q) = (r.random_range(1..=4), r.random_range(1..=4));
        let z = sampling::gaussian_matrix(&mut r, p, q) * 2.0;
        let (gamma, mu) = (r.random_range(0.05..2.0), r.random_range(0.1..2.0));
        let got = linalg::unflatten(&Op::nuclear(mu, p, q).unwrap().resolvent(&linalg::flatten(&z), gamma).unwrap(), p, q);
        let svd = Svd::new(&z);
        let shrunk = DVector::from_fn(svd.s.len(), |i, _| scalar_soft_oracle(svd.s[i], gamma * mu, true));
        let want = &svd.u * DMatrix::from_diagonal(&shrunk) * svd.v.transpose();
        // the objective is convex, so no nearby point may do better
        let f = |x: &DMatrix<f64>| gamma * mu * Svd::new(x).s.sum() + 0.5 * (x - &z).norm_squared();
        for _ in 0..5 {
            let w = &want + sampling::gaussian_matrix(&mut r, p, q) * 1e-3;
            if f(&w) < f(&want) - 1e-12 {
                worst = f64::INFINITY;
            }
        }
        worst = worst.max((got - want).abs().max());
    }
    ok &= worst <= 1e-8;
    lines.push(format!("svt {worst:e}"));
    verdict(ok, lines.join(", "))
}

fn fb_rate() -> Verdict {
    let factor = 1.05;
    let mut ok = true;
    let mut detail = Vec::new();
    for seed in 1..=5u64 {
        let alpha = [0.5, 1.0, 2.0][seed as usize % 3];
        let (prob, _) = generate_elastic_net(20, 32, 4, 1.0 / 20f64.sqrt(), 0.01, 0.05, alpha, seed).unwrap();
        let l = prob.lipschitz();
        let gamma = prob.kappa() / (l * l);
        let rate = fb_rate_params(&prob, gamma).unwrap();
        let x0 = DVector::zeros(prob.dim());
        let (xbar, ubar) = reference_solution(&prob, &x0, 1e-15, 1_000_000).unwrap();
        let e0 = (&x0 - &xbar).norm();
        // record while the bound stays above the accuracy of x̄
        let k_max = ((1e-10 / e0).ln() / rate.rho.ln()).ceil() as usize;
        let trace = run_fb(&prob, gamma, &x0, k_max, 0.0).unwrap();
        let err: Vec<f64> = trace.iterates.iter().map(|x| (x - &xbar).norm()).collect();
        let mut worst_x: f64 = 0.0;
        let mut worst_u: f64 = 0.0;
        for k in 0..=trace.len() {
            worst_x = worst_x.max(err[k] / (rate.rho.powi(k as i32) * e0));
            if k >= 1 {
                let du = (trace.duals[k].as_ref().unwrap() - &ubar).norm();
                worst_u = worst_u.max(du / (2.0 / gamma * err[k - 1]));
            }
        }
        ok &= worst_x <= factor && worst_u <= factor;
        detail.push(format!("seed {seed}: {:.3}/{:.3} over {} steps", worst_x, worst_u, trace.len()));
    }
    verdict(ok, format!("worst ratio x/u: {}", detail.join(", ")))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("degenerate l1 supports", degenerate_l1),
        ("degenerate nuclear ranks", degenerate_nuclear),
        ("elastic-net bound", elastic_bound),
        ("mini-batch identification", minibatch),
        ("SAA rate", saa),
        ("radius oracle agreement", radius_oracle),
        ("resolvent identity", resolvent_identity),
        ("prox oracles", prox_oracles),
        ("FB linear rate", fb_rate),
        ("calculus checks", calculus),
    ];
    let mut failed = BTreeSet::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let v = f();
        println!("AC{:<2} {} {name}: {}", i + 1, if v.passed { "PASS" } else { "FAIL" }, v.detail);
        if !v.passed {
            failed.insert(i + 1);
        }
    }
    if failed.is_empty() {
        println!("all {} criteria passed", criteria.len());
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
