//! Support identification of mini-batch proximal SGD on a lasso instance
//! for several batch sizes.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::Serialize;

use pssso_core::geometry::{identification_radius, LocalUnionSpec};
use pssso_core::identification::{error_series, first_and_stable};
use pssso_core::solvers::{generate_lasso, reference_solution, run_prox_sgd, LassoSpec};
use pssso_core::{DVector, ManifoldDesc, Norm, PartlySmoothOperator};

use super::common::{base_tolerances, exact_support, half_smallest_active};
use crate::config::{self, ExperimentConfig, NormChoice, Preset, ScheduleConfig};
use crate::output::{line_chart, num, opt_num, Artifact, Check, Series, Table};
use crate::{CliError, Outcome};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub m: usize,
    pub n: usize,
    pub sparsity: usize,
    pub sigma1: f64,
    pub sigma2: f64,
    pub mu: f64,
    pub batch_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub max_iter: usize,
    /// Schedule of runs with `s < m`; `s = m` always uses the constant `1/L`.
    pub schedule: ScheduleConfig,
    pub reference_tol: f64,
    pub reference_max_iter: usize,
    /// Norm of the error series compared with the radius.
    pub norm: NormChoice,
}

/// `⌈f·m⌉`, at least 1.
pub fn batch_fraction(m: usize, f: f64) -> usize {
    ((f * m as f64).ceil() as usize).clamp(1, m)
}

impl Settings {
    pub fn desk() -> Self {
        let m = 200;
        Settings {
            m,
            n: 100,
            sparsity: 10,
            sigma1: 1.0,
            sigma2: 0.5,
            mu: 0.1,
            batch_sizes: [0.02, 0.15, 0.9, 1.0].iter().map(|&f| batch_fraction(m, f)).collect(),
            seeds: (1..=5).collect(),
            max_iter: 5000,
            schedule: ScheduleConfig::InvSqrt { alpha0: 0.0 },
            reference_tol: 1e-12,
            reference_max_iter: 500_000,
            norm: NormChoice::Linf,
        }
    }

    pub fn paper() -> Self {
        Settings {
            m: 1000,
            n: 500,
            sparsity: 50,
            batch_sizes: vec![10, 150, 900, 1000],
            seeds: vec![1],
            max_iter: 20_000,
            ..Self::desk()
        }
    }

    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let mut s = match cfg.preset {
            Preset::Desk => Self::desk(),
            Preset::Paper => Self::paper(),
        };
        let p = &cfg.problem;
        if let Some(m) = p.m {
            s.m = config::at_least("problem.m", m, 1)?;
            if cfg.solver.batch_sizes.is_none() {
                s.batch_sizes = [0.02, 0.15, 0.9, 1.0].iter().map(|&f| batch_fraction(s.m, f)).collect();
            }
        }
        if let Some(n) = p.n {
            s.n = config::at_least("problem.n", n, 1)?;
        }
        if let Some(k) = p.sparsity {
            s.sparsity = k;
        }
        if let Some(v) = p.sigma1 {
            s.sigma1 = config::positive("problem.sigma1", v)?;
        }
        if let Some(v) = p.sigma2 {
            s.sigma2 = config::nonnegative("problem.sigma2", v)?;
        }
        if let Some(v) = p.mu {
            s.mu = config::positive("problem.mu", v)?;
        }
        if let Some(b) = &cfg.solver.batch_sizes {
            s.batch_sizes = b.clone();
        }
        if let Some(seeds) = &cfg.seeds {
            s.seeds = seeds.clone();
        }
        if let Some(k) = cfg.solver.max_iter {
            s.max_iter = config::at_least("solver.max_iter", k, 1)?;
        }
        if let Some(sc) = cfg.solver.schedule {
            s.schedule = sc;
        }
        if let Some(t) = cfg.solver.stop_tol {
            s.reference_tol = config::positive("solver.stop_tol", t)?;
        }
        if let Some(nm) = cfg.norm {
            s.norm = nm;
        }
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.sparsity > self.n {
            return Err(CliError::Config(format!("sparsity {} exceeds n = {}", self.sparsity, self.n)));
        }
        if self.batch_sizes.is_empty() {
            return Err(CliError::Config("solver.batch_sizes must be nonempty".into()));
        }
        if let Some(b) = self.batch_sizes.iter().find(|&&b| b == 0 || b > self.m) {
            return Err(CliError::Config(format!("batch size {b} outside [1, {}]", self.m)));
        }
        Ok(())
    }

    fn spec(&self) -> LassoSpec {
        LassoSpec {
            m: self.m,
            n: self.n,
            sparsity: self.sparsity,
            sigma1: self.sigma1,
            sigma2: self.sigma2,
            mu: self.mu,
        }
    }
}

/// Identification statistics of one `(seed, batch)` run.
#[derive(Debug, Clone, Serialize)]
pub struct RunStats {
    pub seed: u64,
    pub batch: usize,
    pub first_identified: Option<usize>,
    pub stable_from: Option<usize>,
    pub final_support_size: usize,
    /// Iterates with error below `d` whose support differs from `S`.
    pub soundness_violations: usize,
    /// Iterates with error below `d`.
    pub within_radius: usize,
    /// Iterates on `S` whose `ℓ2` error is at least `d`.
    pub l2_above_radius_on_support: usize,
}

impl RunStats {
    /// Stable identification that starts in the first half of the run.
    pub fn identifies_in_window(&self, iterations: usize) -> bool {
        self.stable_from.is_some_and(|k| k <= iterations / 2)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedStats {
    pub seed: u64,
    pub support: Vec<usize>,
    pub radius: f64,
    pub eps: f64,
    pub runs: Vec<RunStats>,
}

struct SeedResult {
    stats: SeedStats,
    tables: Vec<(usize, Table)>,
    curves: Vec<(usize, Vec<(f64, f64)>, Vec<(f64, f64)>)>,
}

fn run_seed(s: &Settings, seed: u64) -> Result<SeedResult, CliError> {
    let (prob, _) = generate_lasso(&s.spec(), seed)?;
    let x0 = DVector::zeros(s.n);
    let (xbar, ubar) = reference_solution(&prob, &x0, s.reference_tol, s.reference_max_iter)?;
    let unorm = &ubar / s.mu;
    let support = exact_support(&xbar);
    let eps = half_smallest_active(&xbar);
    let m = ManifoldDesc::fixed_support(support.iter().copied(), s.n)?;
    let union = LocalUnionSpec::new(PartlySmoothOperator::l1(1.0)?, m, xbar.clone(), unorm.clone(), 1.0, eps)?;
    let d = identification_radius(&union, s.norm.into())?;
    let l = prob.lipschitz();
    let mut stats = SeedStats {
        seed,
        support: support.iter().copied().collect(),
        radius: d,
        eps,
        runs: Vec::new(),
    };
    let mut tables = Vec::new();
    let mut curves = Vec::new();
    for &batch in &s.batch_sizes {
        let schedule = if batch == s.m {
            ScheduleConfig::Constant { alpha: 0.0 }
        } else {
            s.schedule
        }
        .resolve(l);
        let trace = run_prox_sgd(&prob, schedule, batch, &x0, s.max_iter, seed)?;
        let supports: Vec<BTreeSet<usize>> = trace.iterates.iter().map(exact_support).collect();
        let on: Vec<bool> = supports.iter().map(|x| *x == support).collect();
        let err = error_series(&trace, &xbar, &unorm, 1.0, s.norm.into())?;
        let err2 = error_series(&trace, &xbar, &unorm, 1.0, Norm::L2)?;
        let errinf = error_series(&trace, &xbar, &unorm, 1.0, Norm::Linf)?;
        let (first, stable) = first_and_stable(&on);
        let mut run = RunStats {
            seed,
            batch,
            first_identified: first,
            stable_from: stable,
            final_support_size: supports.last().unwrap().len(),
            soundness_violations: 0,
            within_radius: 0,
            l2_above_radius_on_support: 0,
        };
        let mut t = Table::new(&[
            "iter", "support_size", "residual", "err_l2", "err_linf", "pair_err_l2", "pair_err_linf", "step", "identified",
        ]);
        for k in 0..trace.iterates.len() {
            let inside = err[k].is_some_and(|e| e < d);
            run.within_radius += usize::from(inside);
            run.soundness_violations += usize::from(inside && !on[k]);
            run.l2_above_radius_on_support += usize::from(on[k] && err2[k].is_some_and(|e| e >= d));
            let e = &trace.iterates[k] - &xbar;
            t.push(vec![
                k.to_string(),
                supports[k].len().to_string(),
                num(trace.residuals[k]),
                num(e.norm()),
                num(Norm::Linf.of(&e)),
                opt_num(err2[k]),
                opt_num(errinf[k]),
                num(trace.steps[k]),
                u8::from(on[k]).to_string(),
            ]);
        }
        curves.push((
            batch,
            supports.iter().enumerate().map(|(k, x)| (k as f64, x.len() as f64)).collect(),
            err.iter().enumerate().filter_map(|(k, e)| e.map(|e| (k as f64, e))).collect(),
        ));
        tables.push((batch, t));
        stats.runs.push(run);
    }
    Ok(SeedResult { stats, tables, curves })
}

pub fn run(s: &Settings, emit_svg: bool) -> Result<Outcome, CliError> {
    let results: Vec<SeedResult> = s
        .seeds
        .par_iter()
        .map(|&seed| run_seed(s, seed))
        .collect::<Result<_, _>>()?;
    let mut out = Outcome::default();
    out.tolerances = base_tolerances();
    out.tolerances.insert("reference_tol".into(), s.reference_tol);
    out.deviations.push(format!(
        "desk scale (m, n) = ({}, {}); batch sizes {:?}",
        s.m, s.n, s.batch_sizes
    ));
    out.deviations.push(
        "d is computed analytically for the normalized pair (x̄, ū/μ) with γ = 1 and ε = half the smallest active magnitude of x̄"
            .into(),
    );
    out.deviations.push("identification means exact support equality with x̄ from some iterate on".into());

    let mut summary = Table::new(&[
        "seed", "batch", "radius", "first_identified", "stable_from", "final_support_size", "within_radius", "soundness_violations",
        "l2_above_radius_on_support",
    ]);
    for r in &results {
        for run in &r.stats.runs {
            summary.push(vec![
                run.seed.to_string(),
                run.batch.to_string(),
                num(r.stats.radius),
                run.first_identified.map(|k| k.to_string()).unwrap_or_default(),
                run.stable_from.map(|k| k.to_string()).unwrap_or_default(),
                run.final_support_size.to_string(),
                run.within_radius.to_string(),
                run.soundness_violations.to_string(),
                run.l2_above_radius_on_support.to_string(),
            ]);
        }
        for (batch, t) in &r.tables {
            out.artifacts.push(t.to_artifact(format!("seed{}_batch{}.csv", r.stats.seed, batch)));
        }
    }
    out.artifacts.push(summary.to_artifact("minibatch_summary.csv"));
    let stats: Vec<&SeedStats> = results.iter().map(|r| &r.stats).collect();
    out.artifacts.push(Artifact::json("minibatch_report.json", &stats));

    let runs_for = |b: usize| stats.iter().flat_map(move |st| st.runs.iter().filter(move |r| r.batch == b));
    if s.batch_sizes.contains(&s.m) {
        let ok: Vec<u64> = runs_for(s.m).filter(|r| r.stable_from.is_some()).map(|r| r.seed).collect();
        out.checks.push(Check::new(
            "full batch identifies",
            ok.len() == s.seeds.len(),
            format!("stable identification within {} iterations on seeds {ok:?} of {:?}", s.max_iter, s.seeds),
        ));
    }
    let small = batch_fraction(s.m, 0.02);
    if s.batch_sizes.contains(&small) && small < s.m {
        let failed = runs_for(small).filter(|r| !r.identifies_in_window(s.max_iter)).count();
        let need = (4 * s.seeds.len()).div_ceil(5);
        out.checks.push(Check::new(
            "small batch does not identify",
            failed >= need,
            format!("s = {small}: no stable identification over the final half in {failed}/{} seeds (need {need})", s.seeds.len()),
        ));
    }
    let violations: usize = stats.iter().flat_map(|st| &st.runs).map(|r| r.soundness_violations).sum();
    let inside: usize = stats.iter().flat_map(|st| &st.runs).map(|r| r.within_radius).sum();
    out.checks.push(Check::new(
        "error below d implies support",
        violations == 0,
        format!("{violations} violations among {inside} iterates within the radius"),
    ));
    out.summary = serde_json::json!({
        "radii": stats.iter().map(|st| st.radius).collect::<Vec<_>>(),
        "support_sizes": stats.iter().map(|st| st.support.len()).collect::<Vec<_>>(),
        "stable_from": stats.iter().map(|st| st.runs.iter().map(|r| r.stable_from).collect::<Vec<_>>()).collect::<Vec<_>>(),
        "batch_sizes": s.batch_sizes,
    });
    if emit_svg {
        if let Some(r) = results.first() {
            let seed = r.stats.seed;
            let sizes: Vec<Series> = r.curves.iter().map(|(b, sz, _)| Series::new(format!("s = {b}"), sz.clone())).collect();
            out.artifacts.push(Artifact::text(
                format!("seed{seed}_support.svg"),
                line_chart("Support size vs batch size", "iteration", "support size", &sizes, false),
            ));
            let mut errs: Vec<Series> = r.curves.iter().map(|(b, _, e)| Series::new(format!("s = {b}"), e.clone())).collect();
            errs.push(Series::new("d", vec![(0.0, r.stats.radius), (s.max_iter as f64, r.stats.radius)]).dashed());
            out.artifacts.push(Artifact::text(
                format!("seed{seed}_error.svg"),
                line_chart("Dual pair error", "iteration", "error", &errs, true),
            ));
        }
    }
    Ok(out)
}
