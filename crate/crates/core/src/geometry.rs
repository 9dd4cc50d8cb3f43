//! Local unions `U = ∪_{x ∈ M ∩ B_ε(x̄)} (x + γ A_ε(x))` and the
//! identification radius `d = dist(z̄, bdy U)`, `z̄ = x̄ + γū`.
//!
//! Balls on the manifold and around `ū` are `ℓ∞` balls, so for separable
//! operators on coordinate manifolds `U` is a box.

use nalgebra::DVector;

use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::manifolds::ManifoldDesc;
use crate::operators::{LocalizedOperator, PartlySmoothOperator, SmoothMap};
use crate::sampling;
use crate::sets::Norm;

/// Default membership tolerance for union queries.
pub const MEMBERSHIP_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct LocalUnionSpec {
    pub op: PartlySmoothOperator,
    pub manifold: ManifoldDesc,
    pub xbar: DVector<f64>,
    pub ubar: DVector<f64>,
    pub gamma: f64,
    pub eps: f64,
}

impl LocalUnionSpec {
    pub fn new(
        op: PartlySmoothOperator,
        manifold: ManifoldDesc,
        xbar: DVector<f64>,
        ubar: DVector<f64>,
        gamma: f64,
        eps: f64,
    ) -> Result<Self> {
        if !(gamma > 0.0) || !(eps > 0.0) {
            return Err(Error::InvalidArgument("gamma and eps must be positive".into()));
        }
        check_dim(manifold.ambient_dim(), xbar.len())?;
        let violation = manifold.violation(&xbar, crate::manifolds::Tolerance::structural())?;
        if violation > 0.0 {
            return Err(Error::NotOnManifold { violation });
        }
        // validates ubar ∈ A(xbar)
        op.localize(&xbar, &ubar, eps)?;
        Ok(LocalUnionSpec {
            op,
            manifold,
            xbar,
            ubar,
            gamma,
            eps,
        })
    }

    pub fn dim(&self) -> usize {
        self.xbar.len()
    }

    /// `z̄ = x̄ + γū`.
    pub fn z_bar(&self) -> DVector<f64> {
        &self.xbar + &self.ubar * self.gamma
    }

    pub fn localized(&self) -> LocalizedOperator {
        LocalizedOperator {
            base: self.op.clone(),
            xbar: self.xbar.clone(),
            ubar: self.ubar.clone(),
            eps: self.eps,
        }
    }
}

/// Returns `x = J_{γA}(z)` when it certifies `z ∈ U`: `x ∈ M`,
/// `‖x − x̄‖∞ < ε` and `(z − x)/γ ∈ A(x) ∩ B∞(ū, ε)`.
///
/// A returned witness is always valid. For nonconvex `A` (`ℓ0`) the base
/// resolvent can miss points of `U` unless it agrees with the localized
/// resolvent there, e.g. `|x̄_i| > √(2γμ) + ε` on the support and
/// `γ(|ū_i| + ε) < √(2γμ)` off it.
pub fn union_membership(spec: &LocalUnionSpec, z: &DVector<f64>, tol: f64) -> Result<Option<DVector<f64>>> {
    check_dim(spec.dim(), z.len())?;
    let x = spec.op.resolvent(z, spec.gamma)?;
    if !spec.manifold.contains(&x, tol)? {
        return Ok(None);
    }
    if linalg::linf(&(&x - &spec.xbar)) >= spec.eps {
        return Ok(None);
    }
    let u = (z - &x) / spec.gamma;
    let value = spec.localized().eval(&x)?;
    Ok(value.contains(&u, tol)?.then_some(x))
}

/// `z̄ + margin·v ∈ U` for `n_dirs` deterministic unit directions `v`.
pub fn interior_inclusion_check(spec: &LocalUnionSpec, margin: f64, n_dirs: usize) -> Result<bool> {
    if !(margin > 0.0) {
        return Err(Error::InvalidArgument("margin must be > 0".into()));
    }
    let zbar = spec.z_bar();
    if union_membership(spec, &zbar, MEMBERSHIP_TOL)?.is_none() {
        return Ok(false);
    }
    for v in sampling::sphere_directions(spec.dim(), n_dirs, 0) {
        if union_membership(spec, &(&zbar + v * margin), MEMBERSHIP_TOL)?.is_none() {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Marches from `z̄` along `n_dirs` directions in increments of `step` and
/// returns the smallest distance (in `norm`) at which membership still held.
pub fn brute_force_radius(spec: &LocalUnionSpec, norm: Norm, n_dirs: usize, step: f64) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument("step must be > 0".into()));
    }
    let zbar = spec.z_bar();
    if union_membership(spec, &zbar, MEMBERSHIP_TOL)?.is_none() {
        return Ok(0.0);
    }
    let mut best = f64::INFINITY;
    for v in sampling::sphere_directions(spec.dim(), n_dirs, 0) {
        let v = &v / norm.of(&v);
        let mut k: u64 = 0;
        loop {
            let t = (k + 1) as f64 * step;
            if t > best {
                break;
            }
            if union_membership(spec, &(&zbar + &v * t), MEMBERSHIP_TOL)?.is_none() {
                best = best.min(k as f64 * step);
                break;
            }
            k += 1;
            if k > 10_000_000 {
                return Err(Error::NotConverged("union appears unbounded".into()));
            }
        }
    }
    Ok(best)
}

/// Analytic `d = dist(z̄, bdy U)` for separable operators (`ℓ1`, `ℓ0`, box
/// normal cones, optionally plus `q·x + c`) on coordinate manifolds. `U` is
/// then a box, so the `ℓ2` and `ℓ∞` distances to its boundary coincide.
/// Returns `0` when `z̄ ∉ int U`.
pub fn identification_radius(spec: &LocalUnionSpec, _norm: Norm) -> Result<f64> {
    let (base, q, c) = separable_parts(&spec.op, spec.dim())?;
    let constraint = coordinate_constraints(&spec.manifold, spec.dim())?;
    let zbar = spec.z_bar();
    let mut d = f64::INFINITY;
    for i in 0..spec.dim() {
        let pieces = graph_pieces(&base, i, q, c[i]);
        let xbox = (spec.xbar[i] - spec.eps, spec.xbar[i] + spec.eps);
        let ubox = (spec.ubar[i] - spec.eps, spec.ubar[i] + spec.eps);
        let mut intervals: Vec<(f64, f64)> = pieces
            .iter()
            .filter_map(|p| p.z_interval(constraint[i], xbox, ubox, spec.gamma))
            .collect();
        let Some((lo, hi)) = component_containing(&mut intervals, zbar[i]) else {
            return Ok(0.0);
        };
        d = d.min(zbar[i] - lo).min(hi - zbar[i]);
    }
    Ok(d.max(0.0))
}

#[derive(Debug, Clone)]
enum SeparableBase {
    L1(f64),
    L0,
    Box(DVector<f64>, DVector<f64>),
}

fn unsupported() -> Error {
    Error::Unsupported(
        "analytic identification radius needs a separable operator on a coordinate manifold; use brute_force_radius"
            .into(),
    )
}

fn separable_parts(op: &PartlySmoothOperator, n: usize) -> Result<(SeparableBase, f64, DVector<f64>)> {
    use PartlySmoothOperator as Op;
    let base_of = |o: &Op| -> Result<SeparableBase> {
        match o {
            Op::SubdiffL1 { mu } => Ok(SeparableBase::L1(*mu)),
            Op::SubdiffL0 { .. } => Ok(SeparableBase::L0),
            Op::NormalConeBox { lo, hi } => Ok(SeparableBase::Box(lo.clone(), hi.clone())),
            _ => Err(unsupported()),
        }
    };
    let smooth_of = |maps: &[&SmoothMap]| -> Result<(f64, DVector<f64>)> {
        let mut q = 0.0;
        let mut c = DVector::zeros(n);
        for s in maps {
            let (qs, cs) = s.scalar_part().ok_or_else(unsupported)?;
            q += qs;
            c += cs;
        }
        if q < 0.0 {
            return Err(unsupported());
        }
        Ok((q, c))
    };
    match op {
        Op::Perturbed { base, smooth } => {
            let (q, c) = smooth_of(&[smooth])?;
            Ok((base_of(base)?, q, c))
        }
        Op::Sum(parts) => {
            let mut base = None;
            let mut maps = Vec::new();
            for p in parts {
                match p {
                    Op::Smooth(s) => maps.push(s),
                    other if base.is_none() => base = Some(base_of(other)?),
                    _ => return Err(unsupported()),
                }
            }
            let (q, c) = smooth_of(&maps)?;
            Ok((base.ok_or_else(unsupported)?, q, c))
        }
        other => Ok((base_of(other)?, 0.0, DVector::zeros(n))),
    }
}

/// Per-coordinate restriction imposed by the manifold: `None` free, `Some(v)`
/// fixed at `v`.
fn coordinate_constraints(m: &ManifoldDesc, n: usize) -> Result<Vec<Option<f64>>> {
    check_dim(m.ambient_dim(), n)?;
    match m {
        ManifoldDesc::FixedSupport { support, .. } => Ok((0..n)
            .map(|i| if support.contains(&i) { None } else { Some(0.0) })
            .collect()),
        ManifoldDesc::AffineSubspace { base, basis } => {
            let mut out: Vec<Option<f64>> = base.iter().map(|&b| Some(b)).collect();
            for col in basis.column_iter() {
                let nz: Vec<usize> = (0..n).filter(|&i| col[i] != 0.0).collect();
                if nz.len() != 1 {
                    return Err(unsupported());
                }
                out[nz[0]] = None;
            }
            Ok(out)
        }
        _ => Err(unsupported()),
    }
}

/// Graph segment `(x, u) = (x0 + s·dx, u0 + s·du)`, `s ∈ [s_lo, s_hi]`, with
/// `dx, du ≥ 0`.
#[derive(Debug, Clone, Copy)]
struct Piece {
    x0: f64,
    u0: f64,
    dx: f64,
    du: f64,
    s_lo: f64,
    s_hi: f64,
}

fn clip_param(lo: &mut f64, hi: &mut f64, origin: f64, rate: f64, range: (f64, f64)) -> bool {
    if rate == 0.0 {
        return range.0 <= origin && origin <= range.1;
    }
    let a = (range.0 - origin) / rate;
    let b = (range.1 - origin) / rate;
    *lo = lo.max(a.min(b));
    *hi = hi.min(a.max(b));
    lo <= hi
}

impl Piece {
    /// Interval of `z = x + γu` over the piece restricted to the boxes.
    fn z_interval(
        &self,
        fixed: Option<f64>,
        xbox: (f64, f64),
        ubox: (f64, f64),
        gamma: f64,
    ) -> Option<(f64, f64)> {
        let (mut lo, mut hi) = (self.s_lo, self.s_hi);
        if let Some(v) = fixed {
            if !clip_param(&mut lo, &mut hi, self.x0, self.dx, (v, v)) {
                return None;
            }
        }
        if !clip_param(&mut lo, &mut hi, self.x0, self.dx, xbox)
            || !clip_param(&mut lo, &mut hi, self.u0, self.du, ubox)
        {
            return None;
        }
        let z0 = self.x0 + gamma * self.u0;
        let rate = self.dx + gamma * self.du;
        Some((z0 + rate * lo, z0 + rate * hi))
    }
}

fn graph_pieces(base: &SeparableBase, i: usize, q: f64, c: f64) -> Vec<Piece> {
    let inf = f64::INFINITY;
    let vertical = |x: f64, lo: f64, hi: f64| Piece {
        x0: x,
        u0: q * x + c,
        dx: 0.0,
        du: 1.0,
        s_lo: lo,
        s_hi: hi,
    };
    let slope = |u: f64, lo: f64, hi: f64| Piece {
        x0: 0.0,
        u0: u + c,
        dx: 1.0,
        du: q,
        s_lo: lo,
        s_hi: hi,
    };
    match base {
        SeparableBase::L1(mu) => vec![
            vertical(0.0, -mu, *mu),
            slope(*mu, 0.0, inf),
            slope(-mu, -inf, 0.0),
        ],
        SeparableBase::L0 => vec![vertical(0.0, -inf, inf), slope(0.0, 0.0, inf), slope(0.0, -inf, 0.0)],
        SeparableBase::Box(lo, hi) => {
            let (l, h) = (lo[i], hi[i]);
            if l == h {
                vec![vertical(l, -inf, inf)]
            } else {
                vec![vertical(l, -inf, 0.0), slope(0.0, l, h), vertical(h, 0.0, inf)]
            }
        }
    }
}

/// Connected component of the union of closed intervals that contains `z`.
fn component_containing(intervals: &mut [(f64, f64)], z: f64) -> Option<(f64, f64)> {
    intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let slack = 1e-14 * (1.0 + z.abs());
    let mut comps: Vec<(f64, f64)> = Vec::new();
    for &(a, b) in intervals.iter() {
        match comps.last_mut() {
            Some(last) if a <= last.1 + slack => last.1 = last.1.max(b),
            _ => comps.push((a, b)),
        }
    }
    comps
        .into_iter()
        .find(|&(a, b)| a - slack <= z && z <= b + slack)
}
