//! Active-manifold descriptors: fixed support, fixed rank, affine subspaces
//! and their products.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, Svd, STRUCTURE_REL_TOL};
use crate::serde_util;
use crate::sets::StructuredSet;

/// Zero threshold for supports and ranks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Tolerance {
    /// Fixed threshold.
    Absolute(f64),
    /// `rel·(1 + scale)` where scale is `‖x‖∞` (supports) or `σ_max` (ranks).
    Relative(f64),
}

impl Tolerance {
    /// The default relative rule, `1e-10·(1 + scale)`.
    pub fn structural() -> Self {
        Tolerance::Relative(STRUCTURE_REL_TOL)
    }

    pub fn threshold(self, scale: f64) -> f64 {
        match self {
            Tolerance::Absolute(t) => t,
            Tolerance::Relative(r) => r * (1.0 + scale.abs()),
        }
    }

    fn validate(self) -> Result<()> {
        let t = match self {
            Tolerance::Absolute(t) | Tolerance::Relative(t) => t,
        };
        if t >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument("tolerance must be ≥ 0".into()))
        }
    }
}

impl From<f64> for Tolerance {
    fn from(t: f64) -> Self {
        Tolerance::Absolute(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant")]
pub enum ManifoldDesc {
    /// `{x ∈ Rⁿ : supp(x) ⊆ support}` (0-based indices).
    FixedSupport { support: BTreeSet<usize>, n: usize },
    /// `{X ∈ R^{rows×cols} : rank X = rank}`, flattened column-major.
    FixedRank { rank: usize, rows: usize, cols: usize },
    /// `base + span(basis)` with column-orthonormal basis.
    AffineSubspace {
        #[serde(with = "serde_util::vector")]
        base: DVector<f64>,
        #[serde(with = "serde_util::matrix")]
        basis: DMatrix<f64>,
    },
    Product { blocks: Vec<ManifoldDesc> },
}

/// A linear projector on the ambient space of a manifold.
#[derive(Debug, Clone, PartialEq)]
pub enum Projector {
    /// Keeps the coordinates flagged `true`.
    Mask(Vec<bool>),
    /// `Z ↦ P_U Z + Z P_V − P_U Z P_V` on flattened `rows × cols` matrices.
    LowRankTangent {
        rows: usize,
        cols: usize,
        pu: DMatrix<f64>,
        pv: DMatrix<f64>,
    },
    /// Orthogonal projector onto `span(basis)`.
    Span(DMatrix<f64>),
    Block(Vec<Projector>),
    /// `I − P`.
    Complement(Box<Projector>),
}

impl Projector {
    pub fn dim(&self) -> usize {
        match self {
            Projector::Mask(m) => m.len(),
            Projector::LowRankTangent { rows, cols, .. } => rows * cols,
            Projector::Span(b) => b.nrows(),
            Projector::Block(bs) => bs.iter().map(|b| b.dim()).sum(),
            Projector::Complement(p) => p.dim(),
        }
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Projector::Mask(m) => DVector::from_fn(v.len(), |i, _| if m[i] { v[i] } else { 0.0 }),
            Projector::LowRankTangent { rows, cols, pu, pv } => {
                let z = linalg::unflatten(v, *rows, *cols);
                let puz = pu * &z;
                let t = &puz + &z * pv - &puz * pv;
                linalg::flatten(&t)
            }
            Projector::Span(b) => b * b.tr_mul(v),
            Projector::Block(bs) => {
                let mut out = DVector::zeros(v.len());
                let mut off = 0;
                for b in bs {
                    let d = b.dim();
                    let part = b.apply(&v.rows(off, d).into_owned());
                    out.rows_mut(off, d).copy_from(&part);
                    off += d;
                }
                out
            }
            Projector::Complement(p) => v - p.apply(v),
        }
    }

    /// Dense matrix of the projector.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            m.set_column(j, &self.apply(&e));
        }
        m
    }

    /// Rank of the projector (dimension of its range).
    pub fn rank(&self) -> usize {
        let m = self.to_matrix();
        m.trace().round() as usize
    }
}

impl ManifoldDesc {
    pub fn fixed_support(support: impl IntoIterator<Item = usize>, n: usize) -> Result<Self> {
        let m = ManifoldDesc::FixedSupport {
            support: support.into_iter().collect(),
            n,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn fixed_rank(rank: usize, rows: usize, cols: usize) -> Result<Self> {
        let m = ManifoldDesc::FixedRank { rank, rows, cols };
        m.validate()?;
        Ok(m)
    }

    pub fn affine(base: DVector<f64>, basis: DMatrix<f64>) -> Result<Self> {
        let m = ManifoldDesc::AffineSubspace { base, basis };
        m.validate()?;
        Ok(m)
    }

    pub fn product(blocks: Vec<ManifoldDesc>) -> Self {
        ManifoldDesc::Product { blocks }
    }

    /// Support of `x` under the given zero rule.
    pub fn support_of(x: &DVector<f64>, tol: Tolerance) -> BTreeSet<usize> {
        let t = tol.threshold(linalg::linf(x));
        (0..x.len()).filter(|&i| x[i].abs() > t).collect()
    }

    /// Fixed-support manifold read off from `x`.
    pub fn support_at(x: &DVector<f64>, tol: Tolerance) -> Self {
        ManifoldDesc::FixedSupport {
            support: Self::support_of(x, tol),
            n: x.len(),
        }
    }

    /// Rank of the flattened matrix `x` under the given zero rule.
    pub fn rank_of(x: &DVector<f64>, rows: usize, cols: usize, tol: Tolerance) -> Result<usize> {
        check_dim(rows * cols, x.len())?;
        let svd = Svd::new(&linalg::unflatten(x, rows, cols));
        let t = tol.threshold(svd.max_singular_value());
        Ok(svd.s.iter().filter(|&&s| s > t).count())
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ManifoldDesc::FixedSupport { support, n } => match support.iter().next_back() {
                Some(&last) if last >= *n => Err(Error::InvalidArgument(format!(
                    "support index {last} out of range for dimension {n}"
                ))),
                _ => Ok(()),
            },
            ManifoldDesc::FixedRank { rank, rows, cols } => {
                if *rank > (*rows).min(*cols) {
                    Err(Error::InvalidArgument(format!(
                        "rank {rank} exceeds min({rows}, {cols})"
                    )))
                } else {
                    Ok(())
                }
            }
            ManifoldDesc::AffineSubspace { base, basis } => {
                check_dim(base.len(), basis.nrows())?;
                if linalg::is_orthonormal(basis, 1e-12) {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument("affine basis must be orthonormal".into()))
                }
            }
            ManifoldDesc::Product { blocks } => blocks.iter().try_for_each(|b| b.validate()),
        }
    }

    pub fn ambient_dim(&self) -> usize {
        match self {
            ManifoldDesc::FixedSupport { n, .. } => *n,
            ManifoldDesc::FixedRank { rows, cols, .. } => rows * cols,
            ManifoldDesc::AffineSubspace { base, .. } => base.len(),
            ManifoldDesc::Product { blocks } => blocks.iter().map(|b| b.ambient_dim()).sum(),
        }
    }

    /// Manifold dimension.
    pub fn dimension(&self) -> usize {
        match self {
            ManifoldDesc::FixedSupport { support, .. } => support.len(),
            ManifoldDesc::FixedRank { rank, rows, cols } => rank * (rows + cols - rank),
            ManifoldDesc::AffineSubspace { basis, .. } => basis.ncols(),
            ManifoldDesc::Product { blocks } => blocks.iter().map(|b| b.dimension()).sum(),
        }
    }

    pub fn codimension(&self) -> usize {
        self.ambient_dim() - self.dimension()
    }

    /// Largest violation of the defining condition; `0` on the manifold.
    pub fn violation(&self, x: &DVector<f64>, tol: Tolerance) -> Result<f64> {
        check_dim(self.ambient_dim(), x.len())?;
        tol.validate()?;
        Ok(match self {
            ManifoldDesc::FixedSupport { support, .. } => {
                let t = tol.threshold(linalg::linf(x));
                (0..x.len())
                    .filter(|i| !support.contains(i))
                    .map(|i| x[i].abs())
                    .filter(|&a| a > t)
                    .fold(0.0, f64::max)
            }
            ManifoldDesc::FixedRank { rank, rows, cols } => {
                let svd = Svd::new(&linalg::unflatten(x, *rows, *cols));
                let t = tol.threshold(svd.max_singular_value());
                let count = svd.s.iter().filter(|&&s| s > t).count();
                if count > *rank {
                    svd.s[*rank]
                } else if count < *rank {
                    // a missing direction; report how far σ_r is below the threshold
                    (t - svd.s.get(*rank - 1).copied().unwrap_or(0.0)).max(f64::MIN_POSITIVE)
                } else {
                    0.0
                }
            }
            ManifoldDesc::AffineSubspace { base, basis } => {
                let w = x - base;
                let r = &w - basis * basis.tr_mul(&w);
                let v = linalg::linf(&r);
                if v <= tol.threshold(linalg::linf(x)) {
                    0.0
                } else {
                    v
                }
            }
            ManifoldDesc::Product { blocks } => {
                let mut m: f64 = 0.0;
                let mut off = 0;
                for b in blocks {
                    let d = b.ambient_dim();
                    m = m.max(b.violation(&x.rows(off, d).into_owned(), tol)?);
                    off += d;
                }
                m
            }
        })
    }

    /// `x ∈ M` within tolerance. For fixed support every off-support entry
    /// must satisfy `|x_j| ≤ tol`; for fixed rank exactly `rank` singular
    /// values must exceed `tol`.
    pub fn contains(&self, x: &DVector<f64>, tol: impl Into<Tolerance>) -> Result<bool> {
        Ok(self.violation(x, tol.into())? == 0.0)
    }

    /// Tangent and normal projectors at `x ∈ M`.
    pub fn projectors(
        &self,
        x: &DVector<f64>,
        tol: impl Into<Tolerance>,
    ) -> Result<(Projector, Projector)> {
        let tol = tol.into();
        let violation = self.violation(x, tol)?;
        if violation > 0.0 {
            return Err(Error::NotOnManifold { violation });
        }
        let t = self.tangent(x);
        let n = Projector::Complement(Box::new(t.clone()));
        Ok((t, n))
    }

    fn tangent(&self, x: &DVector<f64>) -> Projector {
        match self {
            ManifoldDesc::FixedSupport { support, n } => {
                Projector::Mask((0..*n).map(|i| support.contains(&i)).collect())
            }
            ManifoldDesc::FixedRank { rank, rows, cols } => {
                let svd = Svd::new(&linalg::unflatten(x, *rows, *cols));
                let (u, v) = svd.leading(*rank);
                Projector::LowRankTangent {
                    rows: *rows,
                    cols: *cols,
                    pu: &u * u.transpose(),
                    pv: &v * v.transpose(),
                }
            }
            ManifoldDesc::AffineSubspace { basis, .. } => Projector::Span(basis.clone()),
            ManifoldDesc::Product { blocks } => {
                let mut out = Vec::with_capacity(blocks.len());
                let mut off = 0;
                for b in blocks {
                    let d = b.ambient_dim();
                    out.push(b.tangent(&x.rows(off, d).into_owned()));
                    off += d;
                }
                Projector::Block(out)
            }
        }
    }

    /// Random point of `M` within `ℓ∞` distance `radius` of `xbar ∈ M`.
    pub fn sample_near(
        &self,
        xbar: &DVector<f64>,
        radius: f64,
        rng: &mut impl rand::Rng,
    ) -> Result<DVector<f64>> {
        check_dim(self.ambient_dim(), xbar.len())?;
        let scale = radius * rng.random_range(0.05..=1.0);
        Ok(match self {
            ManifoldDesc::FixedSupport { support, .. } => {
                let mut x = xbar.clone();
                for &i in support {
                    x[i] += rng.random_range(-scale..=scale);
                }
                x
            }
            ManifoldDesc::FixedRank { rank, rows, cols } => {
                let base = linalg::unflatten(xbar, *rows, *cols);
                let g = crate::sampling::gaussian_matrix(rng, *rows, *cols);
                let g = &g / g.iter().fold(0.0_f64, |m, x| m.max(x.abs())).max(1e-300);
                let mut step = scale;
                loop {
                    let svd = Svd::new(&(&base + &g * step));
                    let (u, v) = svd.leading(*rank);
                    let s = DMatrix::from_diagonal(&svd.s.rows(0, *rank).into_owned());
                    let x = &u * s * v.transpose();
                    let out = linalg::flatten(&x);
                    if linalg::linf(&(&out - xbar)) <= radius || step < 1e-14 {
                        break out;
                    }
                    step *= 0.5;
                }
            }
            ManifoldDesc::AffineSubspace { basis, .. } => {
                let t = crate::sampling::uniform_vector(rng, basis.ncols(), -1.0, 1.0);
                let d = basis * t;
                let n = linalg::linf(&d);
                if n == 0.0 {
                    xbar.clone()
                } else {
                    xbar + d * (scale / n)
                }
            }
            ManifoldDesc::Product { blocks } => {
                let mut parts = Vec::with_capacity(blocks.len());
                let mut off = 0;
                for b in blocks {
                    let d = b.ambient_dim();
                    parts.push(b.sample_near(&xbar.rows(off, d).into_owned(), radius, rng)?);
                    off += d;
                }
                crate::sets::concat(&parts)
            }
        })
    }

    /// Intersection of two fixed-support manifolds.
    pub fn intersect(&self, other: &ManifoldDesc) -> Result<ManifoldDesc> {
        match (self, other) {
            (
                ManifoldDesc::FixedSupport { support: a, n },
                ManifoldDesc::FixedSupport { support: b, n: m },
            ) => {
                check_dim(*n, *m)?;
                Ok(ManifoldDesc::FixedSupport {
                    support: a.intersection(b).copied().collect(),
                    n: *n,
                })
            }
            (a, b) if a == b => Ok(a.clone()),
            _ => Err(Error::Unsupported(
                "intersection is only available for fixed-support manifolds".into(),
            )),
        }
    }

    /// `T_{M₁}(x) + T_{M₂}(x) = Rⁿ`.
    pub fn transversal_at(&self, other: &ManifoldDesc, x: &DVector<f64>) -> Result<bool> {
        check_dim(self.ambient_dim(), other.ambient_dim())?;
        let (t1, _) = self.projectors(x, Tolerance::structural())?;
        let (t2, _) = other.projectors(x, Tolerance::structural())?;
        let n = self.ambient_dim();
        let mut stacked = DMatrix::zeros(n, 2 * n);
        stacked.view_mut((0, 0), (n, n)).copy_from(&t1.to_matrix());
        stacked.view_mut((0, n), (n, n)).copy_from(&t2.to_matrix());
        Ok(linalg::numerical_rank(&stacked, 1e-10) == n)
    }
}

/// Smallest enlargement of `m` for which `ubar` becomes a relative-interior
/// point of the subdifferential. Fixed support gains every free coordinate
/// whose dual entry lies within `margin` of a box face; fixed rank gains
/// every singular direction of the off-block part of `ubar` within `margin`
/// of the spectral radius.
pub fn enlarge_manifold(
    m: &ManifoldDesc,
    a_at_xbar: &StructuredSet,
    ubar: &DVector<f64>,
    margin: f64,
) -> Result<ManifoldDesc> {
    if !(margin > 0.0) {
        return Err(Error::InvalidArgument("margin must be > 0".into()));
    }
    check_dim(m.ambient_dim(), ubar.len())?;
    let member_tol = linalg::structure_tol(linalg::linf(ubar));
    let dist = a_at_xbar.distance(ubar, crate::sets::Norm::Linf)?;
    if dist > member_tol {
        return Err(Error::NotAMember { distance: dist });
    }
    if a_at_xbar.in_relative_interior(ubar, margin)? {
        return Ok(m.clone());
    }
    match (m, a_at_xbar) {
        (ManifoldDesc::FixedSupport { support, n }, StructuredSet::BoxProduct { lo, hi }) => {
            let mut s = support.clone();
            for j in 0..*n {
                if s.contains(&j) || lo[j] == hi[j] {
                    continue;
                }
                if ubar[j] - lo[j] <= margin || hi[j] - ubar[j] <= margin {
                    s.insert(j);
                }
            }
            Ok(ManifoldDesc::FixedSupport { support: s, n: *n })
        }
        (
            ManifoldDesc::FixedRank { rank, rows, cols },
            StructuredSet::Spectral {
                center,
                u_r,
                v_r,
                radius,
                ..
            },
        ) => {
            let z = linalg::unflatten(&(ubar - center), *rows, *cols);
            let pu = u_r * u_r.transpose();
            let pv = v_r * v_r.transpose();
            let w = &z - &pu * &z - &z * &pv + &pu * &z * &pv;
            let svd = Svd::new(&w);
            let degenerate = svd.s.iter().filter(|&&s| s >= radius - margin).count();
            let new_rank = (*rank).max(u_r.ncols() + degenerate).min((*rows).min(*cols));
            Ok(ManifoldDesc::FixedRank {
                rank: new_rank,
                rows: *rows,
                cols: *cols,
            })
        }
        _ => Err(Error::Unsupported(
            "enlargement is implemented for fixed support with a box value and fixed rank with a spectral value"
                .into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    #[test]
    fn support_membership() {
        let m = ManifoldDesc::fixed_support([0], 3).unwrap();
        assert!(m.contains(&v(&[2.0, 0.0, 0.0]), 1e-12).unwrap());
        assert!(!m.contains(&v(&[2.0, 1e-6, 0.0]), 1e-12).unwrap());
        assert!(m.contains(&v(&[2.0]), 1e-12).is_err());
    }

    #[test]
    fn rank_membership() {
        let m = ManifoldDesc::fixed_rank(1, 3, 3).unwrap();
        let x = DMatrix::from_diagonal(&v(&[2.0, 0.0, 0.0]));
        assert!(m.contains(&linalg::flatten(&x), Tolerance::structural()).unwrap());
        let x2 = DMatrix::from_diagonal(&v(&[2.0, 1e-3, 0.0]));
        assert!(!m.contains(&linalg::flatten(&x2), Tolerance::structural()).unwrap());
    }

    #[test]
    fn invalid_descriptors() {
        assert!(ManifoldDesc::fixed_support([3], 3).is_err());
        assert!(ManifoldDesc::fixed_rank(3, 2, 4).is_err());
    }

    #[test]
    fn support_projector_is_a_mask() {
        let m = ManifoldDesc::fixed_support([0], 3).unwrap();
        let (t, n) = m.projectors(&v(&[2.0, 0.0, 0.0]), 1e-12).unwrap();
        assert_eq!(t.to_matrix(), DMatrix::from_diagonal(&v(&[1.0, 0.0, 0.0])));
        assert_eq!(n.to_matrix(), DMatrix::from_diagonal(&v(&[0.0, 1.0, 1.0])));
    }

    #[test]
    fn rank_normal_projector_at_diagonal_point() {
        let m = ManifoldDesc::fixed_rank(1, 2, 2).unwrap();
        let x = linalg::flatten(&DMatrix::from_diagonal(&v(&[2.0, 0.0])));
        let (_, n) = m.projectors(&x, Tolerance::structural()).unwrap();
        let z = linalg::flatten(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let out = linalg::unflatten(&n.apply(&z), 2, 2);
        assert_eq!(out, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 4.0]));
    }

    #[test]
    fn rank_tangent_matches_curve_derivatives() {
        // derivatives of t ↦ (u + tδu) σ (v + tδv)ᵀ must be fixed by P_T
        let m = ManifoldDesc::fixed_rank(1, 2, 2).unwrap();
        let x = linalg::flatten(&DMatrix::from_diagonal(&v(&[2.0, 0.0])));
        let (t, _) = m.projectors(&x, Tolerance::structural()).unwrap();
        let u = v(&[1.0, 0.0]);
        let w = v(&[1.0, 0.0]);
        for (du, dw) in [(v(&[0.0, 1.0]), v(&[0.0, 0.0])), (v(&[0.3, -0.2]), v(&[0.1, 0.7]))] {
            let h = 1e-6;
            let curve = |s: f64| (&u + &du * s) * 2.0 * (&w + &dw * s).transpose();
            let d = (curve(h) - curve(-h)) / (2.0 * h);
            let fd = linalg::flatten(&d);
            assert!((t.apply(&fd) - &fd).norm() < 1e-8);
        }
    }

    #[test]
    fn product_projector_is_block_diagonal() {
        let m = ManifoldDesc::product(vec![
            ManifoldDesc::fixed_support([0], 2).unwrap(),
            ManifoldDesc::fixed_support([1], 2).unwrap(),
        ]);
        let (t, _) = m.projectors(&v(&[1.0, 0.0, 0.0, 2.0]), 1e-12).unwrap();
        assert_eq!(t.to_matrix(), DMatrix::from_diagonal(&v(&[1.0, 0.0, 0.0, 1.0])));
        assert_eq!(m.dimension(), 2);
    }

    #[test]
    fn projectors_refuse_points_off_the_manifold() {
        let m = ManifoldDesc::fixed_support([0], 3).unwrap();
        assert!(matches!(
            m.projectors(&v(&[1.0, 1.0, 0.0]), 1e-12),
            Err(Error::NotOnManifold { .. })
        ));
    }

    #[test]
    fn enlarge_degenerate_l1() {
        let m = ManifoldDesc::fixed_support([0], 3).unwrap();
        let a = StructuredSet::boxed(v(&[1.0, -1.0, -1.0]), v(&[1.0, 1.0, 1.0])).unwrap();
        let e = enlarge_manifold(&m, &a, &v(&[1.0, 1.0, 0.0]), 1e-8).unwrap();
        assert_eq!(e, ManifoldDesc::fixed_support([0, 1], 3).unwrap());
        let same = enlarge_manifold(&m, &a, &v(&[1.0, 0.3, 0.0]), 0.1).unwrap();
        assert_eq!(same, m);
        assert!(enlarge_manifold(&m, &a, &v(&[1.0, 2.0, 0.0]), 0.1).is_err());
    }

    #[test]
    fn enlarge_degenerate_nuclear() {
        let e = |i: usize| DMatrix::from_fn(3, 1, |r, _| f64::from(u8::from(r == i)));
        let a = StructuredSet::spectral(e(0), e(0), 1.0).unwrap();
        let ubar = e(0) * e(0).transpose() + e(1) * e(1).transpose();
        let m = ManifoldDesc::fixed_rank(1, 3, 3).unwrap();
        let out = enlarge_manifold(&m, &a, &linalg::flatten(&ubar), 1e-8).unwrap();
        assert_eq!(out, ManifoldDesc::fixed_rank(2, 3, 3).unwrap());
    }

    #[test]
    fn transversality_of_supports() {
        let x = v(&[1.0, 0.0, 0.0]);
        let a = ManifoldDesc::fixed_support([0, 1], 3).unwrap();
        let b = ManifoldDesc::fixed_support([0, 2], 3).unwrap();
        let c = ManifoldDesc::fixed_support([0], 3).unwrap();
        assert!(a.transversal_at(&b, &x).unwrap());
        assert!(!a.transversal_at(&c, &x).unwrap());
    }

    #[test]
    fn json_round_trip() {
        let m = ManifoldDesc::product(vec![
            ManifoldDesc::fixed_support([0, 2], 4).unwrap(),
            ManifoldDesc::fixed_rank(1, 2, 3).unwrap(),
        ]);
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<ManifoldDesc>(&s).unwrap(), m);
    }
}
