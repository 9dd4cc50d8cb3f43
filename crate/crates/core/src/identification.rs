//! Identification monitors and bounds on the number of steps before the
//! iterates land on the active manifold.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifolds::{ManifoldDesc, Tolerance};
use crate::sets::Norm;
use crate::solvers::SolverTrace;

/// Constants entering the step bounds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub gamma: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub length: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationReport {
    /// First `k` with `x^(k) ∈ M`.
    pub first_identified: Option<usize>,
    /// First `k` after which every recorded iterate stays on `M`.
    pub stable_from: Option<usize>,
    pub predicted_k: Option<usize>,
    pub radius: f64,
    pub norm: Norm,
    pub on_manifold: Vec<bool>,
    /// `‖(x^(k) + γu^(k)) − (x̄ + γū)‖ < d`; `false` where no dual exists.
    pub within_radius: Vec<bool>,
    pub params: BoundParams,
}

impl IdentificationReport {
    /// Iterates inside the radius but off the manifold.
    pub fn soundness_violations(&self) -> Vec<usize> {
        self.within_radius
            .iter()
            .zip(&self.on_manifold)
            .enumerate()
            .filter(|(_, (&w, &on))| w && !on)
            .map(|(k, _)| k)
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }
}

/// Manifold membership flag of every iterate.
pub fn membership_flags(trace: &SolverTrace, m: &ManifoldDesc, tol: Tolerance) -> Result<Vec<bool>> {
    trace.iterates.iter().map(|x| m.contains(x, tol)).collect()
}

/// `(first, stable_from)`: the first iterate on `M`, and the first index
/// from which every later recorded iterate is on `M`.
pub fn first_identification(
    trace: &SolverTrace,
    m: &ManifoldDesc,
    tol: impl Into<Tolerance>,
) -> Result<(Option<usize>, Option<usize>)> {
    let flags = membership_flags(trace, m, tol.into())?;
    Ok(first_and_stable(&flags))
}

pub fn first_and_stable(flags: &[bool]) -> (Option<usize>, Option<usize>) {
    let first = flags.iter().position(|&f| f);
    let stable = match flags.iter().rposition(|&f| !f) {
        None if flags.is_empty() => None,
        None => Some(0),
        Some(last_bad) if last_bad + 1 < flags.len() => Some(last_bad + 1),
        Some(_) => None,
    };
    (first, stable)
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho < 1.0 {
        Ok(())
    } else {
        Err(Error::OutOfRange(format!("ρ = {rho} is outside ]0, 1[")))
    }
}

/// Smallest `K ≥ 0` with `c0·ρ^K ≤ d`.
fn smallest_power(c0: f64, rho: f64, d: f64) -> usize {
    let holds = |k: usize| c0 * rho.powi(k as i32) <= d;
    if holds(0) {
        return 0;
    }
    let guess = ((d / c0).ln() / rho.ln()).ceil();
    let mut k = if guess.is_finite() && guess > 0.0 { guess as usize } else { 1 };
    while !holds(k) {
        k += 1;
    }
    while k > 0 && holds(k - 1) {
        k -= 1;
    }
    k
}

/// Smallest `K ≥ 0` with `(1 + γp)·C·ρ^K ≤ d`.
pub fn predicted_steps_linear(d: f64, gamma: f64, p: f64, c: f64, rho: f64) -> Result<usize> {
    check_rho(rho)?;
    if !(d > 0.0) || !(c > 0.0) || p < 0.0 || gamma < 0.0 {
        return Err(Error::InvalidArgument("need d > 0, C > 0, p ≥ 0 and γ ≥ 0".into()));
    }
    Ok(smallest_power((1.0 + gamma * p) * c, rho, d))
}

/// Smallest `k` whose residual prefix sum `Σ_{i<k} ‖x^(i) − x^(i+1)‖`
/// reaches `L − d/(1 + γp)`; `None` if the recorded series never does.
pub fn predicted_steps_finite_length(
    residuals: &[f64],
    length: f64,
    d: f64,
    gamma: f64,
    p: f64,
) -> Result<Option<usize>> {
    if residuals.iter().any(|&r| r < 0.0 || r.is_nan()) {
        return Err(Error::InvalidArgument("residuals must be nonnegative".into()));
    }
    if !(d > 0.0) {
        return Err(Error::InvalidArgument("d must be > 0".into()));
    }
    let threshold = length - d / (1.0 + gamma * p);
    if threshold <= 0.0 {
        return Ok(Some(0));
    }
    let mut acc = 0.0;
    for (k, r) in residuals.iter().enumerate() {
        acc += r;
        if acc >= threshold {
            return Ok(Some(k + 1));
        }
    }
    Ok(None)
}

/// Smallest `K` with `ρ^K·(1 + 2/ρ)·‖x0 − x̄‖ ≤ d` (Forward–Backward with a
/// linear rate).
pub fn fb_predicted_steps(
    x0: &DVector<f64>,
    xbar: &DVector<f64>,
    _gamma: f64,
    rho: f64,
    d: f64,
) -> Result<usize> {
    check_rho(rho)?;
    if !(d > 0.0) {
        return Err(Error::InvalidArgument("d must be > 0".into()));
    }
    let e0 = (x0 - xbar).norm();
    if e0 == 0.0 {
        return Ok(0);
    }
    Ok(smallest_power((1.0 + 2.0 / rho) * e0, rho, d))
}

/// `‖(x^(k) + γu^(k)) − (x̄ + γū)‖` per iterate; `None` where the trace has
/// no dual vector.
pub fn error_series(
    trace: &SolverTrace,
    xbar: &DVector<f64>,
    ubar: &DVector<f64>,
    gamma: f64,
    norm: Norm,
) -> Result<Vec<Option<f64>>> {
    if trace.len() > 0 && trace.duals.iter().all(|u| u.is_none()) {
        return Err(Error::InvalidArgument("trace carries no dual vectors".into()));
    }
    let zbar = xbar + ubar * gamma;
    Ok(trace
        .iterates
        .iter()
        .zip(&trace.duals)
        .map(|(x, u)| u.as_ref().map(|u| norm.of(&(x + u * gamma - &zbar))))
        .collect())
}

/// Assembles a report from a trace, the target manifold and the radius.
#[allow(clippy::too_many_arguments)]
pub fn monitor(
    trace: &SolverTrace,
    m: &ManifoldDesc,
    tol: Tolerance,
    xbar: &DVector<f64>,
    ubar: &DVector<f64>,
    radius: f64,
    norm: Norm,
    params: BoundParams,
    predicted_k: Option<usize>,
) -> Result<IdentificationReport> {
    let on_manifold = membership_flags(trace, m, tol)?;
    let (first_identified, stable_from) = first_and_stable(&on_manifold);
    let within_radius = error_series(trace, xbar, ubar, params.gamma, norm)?
        .into_iter()
        .map(|e| e.is_some_and(|e| e < radius))
        .collect();
    Ok(IdentificationReport {
        first_identified,
        stable_from,
        predicted_k,
        radius,
        norm,
        on_manifold,
        within_radius,
        params,
    })
}
