//! Forward–Backward splitting, mini-batch proximal SGD and problem generators.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::manifolds::{ManifoldDesc, Tolerance};
use crate::operators::{PartlySmoothOperator, SmoothMap};
use crate::sampling;

/// Design data of a least-squares model `(1/2)·scale·‖Ax − b‖² + μ‖x‖₁ + (α/2)‖x‖²`.
#[derive(Debug, Clone)]
pub struct LassoData {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub mu: f64,
    pub alpha: f64,
}

/// `0 ∈ A(x) + B(x)` with partly smooth `A` and single-valued `B`.
#[derive(Debug, Clone)]
pub struct CompositeProblem {
    pub nonsmooth: PartlySmoothOperator,
    pub smooth: SmoothMap,
    pub data: Option<LassoData>,
}

impl CompositeProblem {
    pub fn new(nonsmooth: PartlySmoothOperator, smooth: SmoothMap) -> Result<Self> {
        if let Some(d) = nonsmooth.dim() {
            check_dim(d, smooth.dim())?;
        }
        Ok(CompositeProblem {
            nonsmooth,
            smooth,
            data: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.smooth.dim()
    }

    pub fn lipschitz(&self) -> f64 {
        self.smooth.lipschitz
    }

    pub fn kappa(&self) -> f64 {
        self.smooth.kappa
    }

    /// Cocoercivity constant `β = 1/L`.
    pub fn beta(&self) -> f64 {
        1.0 / self.smooth.lipschitz
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    Constant { alpha: f64 },
    /// `c / (k + k0)`.
    Decay { c: f64, k0: f64 },
    /// `alpha0 / √(k + 1)`.
    InvSqrt { alpha0: f64 },
}

impl StepSchedule {
    pub fn step(&self, k: usize) -> f64 {
        let k = k as f64;
        match *self {
            StepSchedule::Constant { alpha } => alpha,
            StepSchedule::Decay { c, k0 } => c / (k + k0),
            StepSchedule::InvSqrt { alpha0 } => alpha0 / (k + 1.0).sqrt(),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepSchedule::Constant { alpha } => alpha > 0.0,
            StepSchedule::Decay { c, k0 } => c > 0.0 && k0 > 0.0,
            StepSchedule::InvSqrt { alpha0 } => alpha0 > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("nonpositive step schedule {self:?}")))
        }
    }
}

/// Per-iteration record of a run. Index `k` refers to `x^(k)`; `x^(0)` is
/// the starting point, which has no dual vector, residual or step.
#[derive(Debug, Clone, Default)]
pub struct SolverTrace {
    pub iterates: Vec<DVector<f64>>,
    pub duals: Vec<Option<DVector<f64>>>,
    /// Support size or rank of each iterate.
    pub structure: Vec<usize>,
    /// `‖x^(k) − x^(k−1)‖`, `0` at `k = 0`.
    pub residuals: Vec<f64>,
    /// Step size that produced `x^(k)`, `0` at `k = 0`.
    pub steps: Vec<f64>,
    pub seed: Option<u64>,
    /// Mini-batch index sets, one per iteration (empty for full-batch runs).
    pub batches: Vec<Vec<usize>>,
    pub converged: bool,
}

impl SolverTrace {
    fn start(x0: DVector<f64>, size: usize) -> Self {
        SolverTrace {
            iterates: vec![x0],
            duals: vec![None],
            structure: vec![size],
            residuals: vec![0.0],
            steps: vec![0.0],
            ..Default::default()
        }
    }

    /// Number of iterations performed.
    pub fn len(&self) -> usize {
        self.iterates.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn last(&self) -> &DVector<f64> {
        self.iterates.last().expect("trace holds x^(0)")
    }

    pub fn last_dual(&self) -> Option<&DVector<f64>> {
        self.duals.last().and_then(|u| u.as_ref())
    }

    fn push(&mut self, x: DVector<f64>, u: Option<DVector<f64>>, size: usize, step: f64) {
        let r = (&x - self.last()).norm();
        self.iterates.push(x);
        self.duals.push(u);
        self.structure.push(size);
        self.residuals.push(r);
        self.steps.push(step);
    }
}

/// Support size (`ℓ1`, `ℓ0`), rank (nuclear) or manifold dimension.
pub fn structure_size(op: &PartlySmoothOperator, x: &DVector<f64>) -> usize {
    fn size(m: &ManifoldDesc) -> usize {
        match m {
            ManifoldDesc::FixedSupport { support, .. } => support.len(),
            ManifoldDesc::FixedRank { rank, .. } => *rank,
            ManifoldDesc::AffineSubspace { basis, .. } => basis.ncols(),
            ManifoldDesc::Product { blocks } => blocks.iter().map(size).sum(),
        }
    }
    op.active_manifold(x, Tolerance::structural())
        .map(|m| size(&m))
        .unwrap_or(0)
}

/// `x^(k+1) = J_{γA}(x^(k) − γB(x^(k)))` with dual
/// `u^(k+1) = (x^(k) − x^(k+1))/γ − B(x^(k)) ∈ A(x^(k+1))`.
pub fn run_fb(
    prob: &CompositeProblem,
    gamma: f64,
    x0: &DVector<f64>,
    max_iter: usize,
    stop_tol: f64,
) -> Result<SolverTrace> {
    check_dim(prob.dim(), x0.len())?;
    let l = prob.lipschitz();
    if !(gamma > 0.0) || (l > 0.0 && gamma >= 2.0 / l) {
        return Err(Error::OutOfRange(format!(
            "step size {gamma} outside ]0, 2/L[ with L = {l}"
        )));
    }
    let mut trace = SolverTrace::start(x0.clone(), structure_size(&prob.nonsmooth, x0));
    let mut x = x0.clone();
    for _ in 0..max_iter {
        let g = prob.smooth.apply(&x)?;
        let next = prob.nonsmooth.resolvent(&(&x - &g * gamma), gamma)?;
        let u = (&x - &next) / gamma - g;
        let size = structure_size(&prob.nonsmooth, &next);
        trace.push(next.clone(), Some(u), size, gamma);
        x = next;
        if *trace.residuals.last().unwrap() < stop_tol {
            trace.converged = true;
            break;
        }
    }
    Ok(trace)
}

/// Mini-batch proximal SGD on a lasso problem,
/// `x^(k+1) = prox_{μα_k‖·‖₁}(x^(k) − (α_k/s)·Σ_{i∈I_k}(a_iᵀx^(k) − b_i)a_i)`.
/// Batches are drawn uniformly without replacement and sorted, so `s = m`
/// gives the same trace for every seed. Duals are normalised by `μ` and are
/// absent when `μ = 0`.
pub fn run_prox_sgd(
    prob: &CompositeProblem,
    schedule: StepSchedule,
    batch: usize,
    x0: &DVector<f64>,
    max_iter: usize,
    seed: u64,
) -> Result<SolverTrace> {
    let data = prob
        .data
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("proximal SGD needs design data".into()))?;
    let (m, n) = data.a.shape();
    check_dim(n, x0.len())?;
    if batch == 0 || batch > m {
        return Err(Error::InvalidArgument(format!("batch size {batch} outside [1, {m}]")));
    }
    schedule.validate()?;
    let mu = data.mu;
    let l1 = PartlySmoothOperator::SubdiffL1 { mu: 1.0 };
    let mut rng = sampling::rng_stream(seed, 7);
    let mut trace = SolverTrace::start(x0.clone(), structure_size(&l1, x0));
    trace.seed = Some(seed);
    let mut x = x0.clone();
    for k in 0..max_iter {
        let alpha = schedule.step(k);
        let mut idx = index::sample(&mut rng, m, batch).into_vec();
        idx.sort_unstable();
        let mut g = DVector::zeros(n);
        for &i in &idx {
            let row = data.a.row(i);
            let r = (row * &x)[0] - data.b[i];
            g += row.transpose() * r;
        }
        g /= batch as f64;
        if data.alpha > 0.0 {
            g += &x * data.alpha;
        }
        let y = &x - &g * alpha;
        let next = y.map(|v| v.signum() * (v.abs() - mu * alpha).max(0.0));
        let u = (mu > 0.0).then(|| (&x - &next) / (mu * alpha) - &g / mu);
        let size = structure_size(&l1, &next);
        trace.push(next.clone(), u, size, alpha);
        trace.batches.push(if batch == m { Vec::new() } else { idx });
        x = next;
    }
    Ok(trace)
}

/// Runs Forward–Backward with `γ = 1/L` until the residual drops below
/// `tol` and returns `(x̄, ū)`.
pub fn reference_solution(
    prob: &CompositeProblem,
    x0: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let gamma = 1.0 / prob.lipschitz();
    let trace = run_fb(prob, gamma, x0, max_iter, tol)?;
    if !trace.converged {
        return Err(Error::NotConverged(format!(
            "reference run stopped at residual {:e} after {} iterations",
            trace.residuals.last().unwrap(),
            trace.len()
        )));
    }
    let u = trace.last_dual().cloned().unwrap_or_else(|| DVector::zeros(x0.len()));
    Ok((trace.last().clone(), u))
}

/// Parameters of a generated regression instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoSpec {
    pub m: usize,
    pub n: usize,
    pub sparsity: usize,
    pub sigma1: f64,
    pub sigma2: f64,
    pub mu: f64,
}

/// Samples `a_i ~ N(0, σ₁² I)`, `b_i = a_iᵀx̃ + N(0, σ₂²)` with a fixed
/// ground truth and builds `μ‖x‖₁ + (1/2m)‖Ax − b‖²`.
pub fn generate_lasso_with_truth(
    m: usize,
    sigma1: f64,
    sigma2: f64,
    mu: f64,
    truth: &DVector<f64>,
    seed: u64,
) -> Result<CompositeProblem> {
    if m == 0 || !(sigma1 > 0.0) || sigma2 < 0.0 || mu < 0.0 {
        return Err(Error::InvalidArgument(
            "need m ≥ 1, σ₁ > 0, σ₂ ≥ 0 and μ ≥ 0".into(),
        ));
    }
    let n = truth.len();
    let mut design = sampling::rng_stream(seed, 2);
    let a = sampling::gaussian_matrix(&mut design, m, n) * sigma1;
    let mut noise = sampling::rng_stream(seed, 3);
    let b = &a * truth + sampling::gaussian_vector(&mut noise, m) * sigma2;
    let smooth = SmoothMap::least_squares(a.clone(), b.clone(), 1.0 / m as f64, 0.0)?;
    Ok(CompositeProblem {
        nonsmooth: PartlySmoothOperator::SubdiffL1 { mu },
        smooth,
        data: Some(LassoData { a, b, mu, alpha: 0.0 }),
    })
}

/// `κ`-sparse ground truth with entries `±1` at seeded positions.
pub fn sparse_truth(n: usize, sparsity: usize, seed: u64) -> Result<DVector<f64>> {
    if sparsity > n {
        return Err(Error::InvalidArgument(format!("sparsity {sparsity} exceeds n = {n}")));
    }
    let mut rng = sampling::rng_stream(seed, 1);
    let mut x = DVector::zeros(n);
    for i in index::sample(&mut rng, n, sparsity) {
        x[i] = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    }
    Ok(x)
}

/// Regression instance `(P_m)` and its ground truth `x̃`.
pub fn generate_lasso(spec: &LassoSpec, seed: u64) -> Result<(CompositeProblem, DVector<f64>)> {
    let truth = sparse_truth(spec.n, spec.sparsity, seed)?;
    let prob = generate_lasso_with_truth(spec.m, spec.sigma1, spec.sigma2, spec.mu, &truth, seed)?;
    Ok((prob, truth))
}

/// `½‖Ax − b‖² + μ‖x‖₁ + (α/2)‖x‖²` with `A_ij ~ N(0, σ₁²)`. The
/// strong-convexity constant is `λ_min(AᵀA) + α` (which is `α` when `m < n`).
pub fn generate_elastic_net(
    m: usize,
    n: usize,
    sparsity: usize,
    sigma1: f64,
    sigma2: f64,
    mu: f64,
    alpha: f64,
    seed: u64,
) -> Result<(CompositeProblem, DVector<f64>)> {
    if !(alpha > 0.0) || !(mu > 0.0) {
        return Err(Error::InvalidArgument("elastic net needs μ > 0 and α > 0".into()));
    }
    let truth = sparse_truth(n, sparsity, seed)?;
    let mut design = sampling::rng_stream(seed, 2);
    let a = sampling::gaussian_matrix(&mut design, m, n) * sigma1;
    let mut noise = sampling::rng_stream(seed, 3);
    let b = &a * &truth + sampling::gaussian_vector(&mut noise, m) * sigma2;
    let (lmin, lmax) = linalg::symmetric_eigen_range(&a.tr_mul(&a));
    let smooth = SmoothMap::least_squares(a.clone(), b.clone(), 1.0, alpha)?
        .with_constants(lmax + alpha, lmin.max(0.0) + alpha);
    Ok((
        CompositeProblem {
            nonsmooth: PartlySmoothOperator::SubdiffL1 { mu },
            smooth,
            data: Some(LassoData { a, b, mu, alpha }),
        },
        truth,
    ))
}

/// Constants of the linear rate of Forward–Backward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateParams {
    pub kappa: f64,
    pub beta: f64,
    pub rho: f64,
}

/// `ρ² = 1 − γ(2κ − γ/β²)`, certified when `γ(2κ − γ/β²) ∈ ]0, 1]`.
pub fn fb_rate_params(prob: &CompositeProblem, gamma: f64) -> Result<RateParams> {
    let kappa = prob.kappa();
    let l = prob.lipschitz();
    if !(kappa > 0.0) {
        return Err(Error::OutOfRange("linear rate needs κ > 0".into()));
    }
    let val = gamma * (2.0 * kappa - gamma * l * l);
    if !(val > 0.0 && val <= 1.0) {
        let hi = 2.0 * kappa / (l * l);
        return Err(Error::OutOfRange(format!(
            "γ(2κ − γL²) = {val} is outside ]0, 1]; admissible γ lie in ]0, {hi}[ (κ = {kappa}, L = {l})"
        )));
    }
    Ok(RateParams {
        kappa,
        beta: 1.0 / l,
        rho: (1.0 - val).max(0.0).sqrt(),
    })
}

/// Terms of the Prox-SGD dual-pair error bound for the transition
/// `x^(k) → x^(k+1)` on a lasso problem (`ℓ2` norms, duals scaled by `1/μ`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdErrorTerms {
    /// `‖(x^(k+1) + u^(k+1)) − (x̄ + ū)‖`.
    pub lhs: f64,
    /// `(1 + α²/μ)·max(‖x^(k+1) − x̄‖, ‖x^(k) − x̄‖)`, `α = max_i ‖a_i‖`.
    pub contraction: f64,
    /// `‖x^(k) − x^(k+1)‖/(μα_k)`.
    pub step: f64,
    /// `(m − s)/(μms)·‖Σ_{i∈I_k} r_i a_i‖` with `r_i = a_iᵀx̄ − b_i`.
    pub sampled: f64,
    /// `1/(μm)·‖Σ_{i∉I_k} r_i a_i‖`.
    pub unsampled: f64,
}

impl SgdErrorTerms {
    pub fn bound(&self) -> f64 {
        self.contraction + self.step + self.sampled + self.unsampled
    }
}

/// Error decomposition of every transition of a Prox-SGD trace around
/// `x̄`; the entry at index `k` describes `x^(k+1)`.
pub fn sgd_error_terms(
    prob: &CompositeProblem,
    trace: &SolverTrace,
    xbar: &DVector<f64>,
) -> Result<Vec<SgdErrorTerms>> {
    let data = prob
        .data
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("error terms need design data".into()))?;
    if !(data.mu > 0.0) || data.alpha != 0.0 {
        return Err(Error::Unsupported("error terms need μ > 0 and no ridge term".into()));
    }
    let (m, n) = data.a.shape();
    check_dim(n, xbar.len())?;
    let mu = data.mu;
    let resid = &data.a * xbar - &data.b;
    let ubar = -(data.a.transpose() * &resid) / (m as f64 * mu);
    let amax = (0..m).map(|i| data.a.row(i).norm()).fold(0.0_f64, f64::max);
    let mut out = Vec::with_capacity(trace.len());
    for k in 0..trace.len() {
        let (x, next) = (&trace.iterates[k], &trace.iterates[k + 1]);
        let u = trace.duals[k + 1]
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("missing dual at k = {}", k + 1)))?;
        let batch: Vec<usize> = match trace.batches.get(k) {
            Some(b) if !b.is_empty() => b.clone(),
            _ => (0..m).collect(),
        };
        let s = batch.len();
        let mut inside = vec![false; m];
        let mut g_in = DVector::zeros(n);
        for &i in &batch {
            inside[i] = true;
            g_in += data.a.row(i).transpose() * resid[i];
        }
        let mut g_out = DVector::zeros(n);
        for i in (0..m).filter(|&i| !inside[i]) {
            g_out += data.a.row(i).transpose() * resid[i];
        }
        let ck = (next - xbar).norm().max((x - xbar).norm());
        out.push(SgdErrorTerms {
            lhs: ((next + u) - (xbar + &ubar)).norm(),
            contraction: (1.0 + amax * amax / mu) * ck,
            step: (x - next).norm() / (mu * trace.steps[k + 1]),
            sampled: (m - s) as f64 / (mu * (m * s) as f64) * g_in.norm(),
            unsampled: g_out.norm() / (mu * m as f64),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sets::Norm;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    fn degenerate_l1() -> CompositeProblem {
        CompositeProblem::new(
            PartlySmoothOperator::l1(1.0).unwrap(),
            SmoothMap::shifted_identity(v(&[3.0, 1.0, 0.5])),
        )
        .unwrap()
    }

    #[test]
    fn fb_converges_on_degenerate_l1() {
        let t = run_fb(&degenerate_l1(), 0.1, &v(&[2.0, 2.0, 2.0]), 10_000, 1e-14).unwrap();
        assert!(t.converged);
        assert!((t.last() - v(&[2.0, 0.0, 0.0])).norm() < 1e-10);
    }

    #[test]
    fn fixed_point_takes_one_iteration() {
        let t = run_fb(&degenerate_l1(), 0.1, &v(&[2.0, 0.0, 0.0]), 100, 1e-12).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.residuals[1], 0.0);
    }

    #[test]
    fn fb_rejects_large_steps() {
        assert!(run_fb(&degenerate_l1(), 2.0, &v(&[0.0, 0.0, 0.0]), 10, 1e-12).is_err());
    }

    #[test]
    fn fb_duals_are_feasible() {
        let p = degenerate_l1();
        let t = run_fb(&p, 0.3, &v(&[-1.0, 2.0, 0.3]), 200, 1e-14).unwrap();
        for (x, u) in t.iterates.iter().zip(&t.duals).skip(1) {
            let s = p.nonsmooth.eval(x).unwrap();
            assert!(s.distance(u.as_ref().unwrap(), Norm::Linf).unwrap() <= 1e-8);
        }
    }

    #[test]
    fn isotropic_rate_is_zero() {
        let p = degenerate_l1();
        let r = fb_rate_params(&p, 1.0).unwrap();
        assert_eq!(r.rho, 0.0);
        let small = fb_rate_params(&p, 1e-9).unwrap();
        assert!(small.rho < 1.0 && small.rho > 1.0 - 1e-8);
        assert!(fb_rate_params(&p, 2.5).is_err());
    }

    #[test]
    fn full_batch_sgd_ignores_the_seed() {
        let spec = LassoSpec {
            m: 40,
            n: 10,
            sparsity: 2,
            sigma1: 1.0,
            sigma2: 0.1,
            mu: 0.05,
        };
        let (p, _) = generate_lasso(&spec, 3).unwrap();
        let x0 = DVector::zeros(10);
        let sched = StepSchedule::Constant { alpha: 1.0 / p.lipschitz() };
        let a = run_prox_sgd(&p, sched, 40, &x0, 50, 1).unwrap();
        let b = run_prox_sgd(&p, sched, 40, &x0, 50, 99).unwrap();
        assert_eq!(a.iterates, b.iterates);
        // and coincides with Forward–Backward at γ = α
        let fb = run_fb(&p, 1.0 / p.lipschitz(), &x0, 50, 0.0).unwrap();
        for (x, y) in a.iterates.iter().zip(&fb.iterates) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_regularisation_is_plain_sgd() {
        let (p, _) = generate_lasso(
            &LassoSpec {
                m: 20,
                n: 5,
                sparsity: 1,
                sigma1: 1.0,
                sigma2: 0.0,
                mu: 0.0,
            },
            4,
        )
        .unwrap();
        let x0 = DVector::from_element(5, 0.3);
        let t = run_prox_sgd(&p, StepSchedule::Constant { alpha: 0.01 }, 5, &x0, 3, 2).unwrap();
        let data = p.data.as_ref().unwrap();
        let mut x = x0.clone();
        for k in 0..3 {
            let idx = &t.batches[k];
            let mut g = DVector::zeros(5);
            for &i in idx {
                g += data.a.row(i).transpose() * ((data.a.row(i) * &x)[0] - data.b[i]);
            }
            x -= g * (0.01 / 5.0);
            assert!((&x - &t.iterates[k + 1]).norm() < 1e-14);
        }
        assert!(t.duals.iter().all(|u| u.is_none()));
    }

    #[test]
    fn generation_is_reproducible() {
        let spec = LassoSpec {
            m: 30,
            n: 12,
            sparsity: 3,
            sigma1: 1.0,
            sigma2: 0.2,
            mu: 0.1,
        };
        let (p1, t1) = generate_lasso(&spec, 8).unwrap();
        let (p2, t2) = generate_lasso(&spec, 8).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(p1.data.unwrap().a, p2.data.unwrap().a);
        assert_eq!(t1.iter().filter(|x| x.abs() == 1.0).count(), 3);
        assert!(sparse_truth(3, 4, 0).is_err());
    }

    #[test]
    fn invalid_sgd_arguments() {
        let (p, _) = generate_lasso(
            &LassoSpec {
                m: 10,
                n: 4,
                sparsity: 1,
                sigma1: 1.0,
                sigma2: 0.1,
                mu: 0.1,
            },
            0,
        )
        .unwrap();
        let x0 = DVector::zeros(4);
        assert!(run_prox_sgd(&p, StepSchedule::Constant { alpha: 0.1 }, 11, &x0, 1, 0).is_err());
        assert!(run_prox_sgd(&p, StepSchedule::Constant { alpha: -0.1 }, 2, &x0, 1, 0).is_err());
    }
}
