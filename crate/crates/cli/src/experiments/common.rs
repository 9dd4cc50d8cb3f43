use std::collections::{BTreeMap, BTreeSet};

use pssso_core::{DVector, ManifoldDesc, Norm, SolverTrace, Tolerance};

use crate::config::ExperimentConfig;
use crate::output::{num, Table};

/// Support with an exact zero test.
pub fn exact_support(x: &DVector<f64>) -> BTreeSet<usize> {
    ManifoldDesc::support_of(x, Tolerance::Absolute(0.0))
}

/// Keeps iterates `0..=k`.
pub fn truncate(trace: &mut SolverTrace, k: usize) {
    let keep = k + 1;
    trace.iterates.truncate(keep);
    trace.duals.truncate(keep);
    trace.structure.truncate(keep);
    trace.residuals.truncate(keep);
    trace.steps.truncate(keep);
    trace.batches.truncate(k);
}

/// Per-iteration curve: structure size, residual, distance to `xbar` and
/// identification flag.
pub fn trace_table(
    trace: &SolverTrace,
    structure_name: &str,
    structure: &[usize],
    xbar: &DVector<f64>,
    identified: &[bool],
) -> Table {
    let mut t = Table::new(&["iter", structure_name, "residual", "err_l2", "err_linf", "step", "identified"]);
    for k in 0..trace.iterates.len() {
        let e = &trace.iterates[k] - xbar;
        t.push(vec![
            k.to_string(),
            structure[k].to_string(),
            num(trace.residuals[k]),
            num(Norm::L2.of(&e)),
            num(Norm::Linf.of(&e)),
            num(trace.steps[k]),
            u8::from(identified[k]).to_string(),
        ]);
    }
    t
}

/// Half the smallest nonzero magnitude of `x` (`1` when `x = 0`).
pub fn half_smallest_active(x: &DVector<f64>) -> f64 {
    x.iter()
        .map(|v| v.abs())
        .filter(|&a| a > 0.0)
        .fold(f64::INFINITY, f64::min)
        .min(2.0)
        * 0.5
}

pub fn base_tolerances() -> BTreeMap<String, f64> {
    BTreeMap::from([
        ("structure_rel".to_string(), pssso_core::linalg::STRUCTURE_REL_TOL),
        ("membership_slack".to_string(), pssso_core::sets::MEMBERSHIP_SLACK),
        ("union_membership".to_string(), pssso_core::geometry::MEMBERSHIP_TOL),
    ])
}

pub fn seeds_or(cfg: &ExperimentConfig, default: &[u64]) -> Vec<u64> {
    cfg.seeds.clone().unwrap_or_else(|| default.to_vec())
}

pub fn fmt_set(s: &BTreeSet<usize>) -> String {
    let items: Vec<String> = s.iter().map(|i| i.to_string()).collect();
    format!("{{{}}}", items.join(","))
}
