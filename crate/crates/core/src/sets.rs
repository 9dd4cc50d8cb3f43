//! Exact, finitely described closed convex sets.
//!
//! Every subdifferential value in the crate is one of these: coordinate boxes
//! (`∂‖·‖₁`, `∂‖·‖₀`, box normal cones), affine slices of boxes, spectral sets
//! (`∂‖·‖_*`), and their linear images, products and `ℓ∞`-clippings.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, Svd};
use crate::serde_util;

/// Equality tolerance for fixed (zero-width) directions in relative-interior tests.
pub const FIXED_DIRECTION_TOL: f64 = 1e-12;

/// Orthonormality tolerance for direction matrices.
pub const ORTHONORMAL_TOL: f64 = 1e-12;

/// Absolute slack added to every membership tolerance.
pub const MEMBERSHIP_SLACK: f64 = 1e-12;

/// Relative rank threshold used by [`span_dimension`].
pub const SPAN_RANK_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L2,
    Linf,
}

impl Norm {
    pub fn of(self, v: &DVector<f64>) -> f64 {
        match self {
            Norm::L2 => v.norm(),
            Norm::Linf => linalg::linf(v),
        }
    }
}

impl std::str::FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Norm::L2),
            "linf" => Ok(Norm::Linf),
            other => Err(Error::InvalidArgument(format!("unknown norm {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant")]
pub enum StructuredSet {
    Empty {
        dim: usize,
    },
    Singleton {
        #[serde(with = "serde_util::vector")]
        point: DVector<f64>,
    },
    /// `Π [lo_i, hi_i]`, infinite bounds allowed.
    BoxProduct {
        #[serde(with = "serde_util::vector")]
        lo: DVector<f64>,
        #[serde(with = "serde_util::vector")]
        hi: DVector<f64>,
    },
    /// `base + dirs·t`, `t ∈ [lo, hi]`, with column-orthonormal `dirs`.
    AffinePlusBox {
        #[serde(with = "serde_util::vector")]
        base: DVector<f64>,
        #[serde(with = "serde_util::matrix")]
        dirs: DMatrix<f64>,
        #[serde(with = "serde_util::vector")]
        lo: DVector<f64>,
        #[serde(with = "serde_util::vector")]
        hi: DVector<f64>,
    },
    /// `center + { W : U_rᵀW = 0, W V_r = 0, ‖W‖_op ≤ radius }` on
    /// `rows × cols` matrices flattened column-major. The subdifferential of
    /// the nuclear norm has `center = U_r V_rᵀ`.
    Spectral {
        rows: usize,
        cols: usize,
        #[serde(with = "serde_util::vector")]
        center: DVector<f64>,
        #[serde(with = "serde_util::matrix")]
        u_r: DMatrix<f64>,
        #[serde(with = "serde_util::matrix")]
        v_r: DMatrix<f64>,
        radius: f64,
    },
    /// `center + generators·t`, `t ∈ [lo, hi]`, generators arbitrary. Arises
    /// as `Gᵀ·box` under linear precomposition and as Minkowski sums.
    LinearImage {
        #[serde(with = "serde_util::vector")]
        center: DVector<f64>,
        #[serde(with = "serde_util::matrix")]
        generators: DMatrix<f64>,
        #[serde(with = "serde_util::vector")]
        lo: DVector<f64>,
        #[serde(with = "serde_util::vector")]
        hi: DVector<f64>,
    },
    Product {
        blocks: Vec<StructuredSet>,
    },
    /// `inner ∩ Π [lo_i, hi_i]`.
    Clipped {
        inner: Box<StructuredSet>,
        #[serde(with = "serde_util::vector")]
        lo: DVector<f64>,
        #[serde(with = "serde_util::vector")]
        hi: DVector<f64>,
    },
}

/// A set given as `point + gens·t`, `t ∈ [lo, hi]`.
#[derive(Debug, Clone)]
struct Parametrized {
    point: DVector<f64>,
    gens: DMatrix<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Parametrized {
    fn free_columns(&self) -> Vec<usize> {
        (0..self.gens.ncols()).filter(|&k| self.lo[k] < self.hi[k]).collect()
    }

    fn param_center(&self) -> DVector<f64> {
        DVector::from_fn(self.lo.len(), |k, _| interval_center(self.lo[k], self.hi[k]))
    }
}

fn interval_center(lo: f64, hi: f64) -> f64 {
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => 0.5 * (lo + hi),
        (true, false) => lo,
        (false, true) => hi,
        (false, false) => 0.0,
    }
}

fn clamp(x: f64, lo: f64, hi: f64) -> f64 {
    x.max(lo).min(hi)
}

fn excess(x: f64, lo: f64, hi: f64) -> f64 {
    if x < lo {
        lo - x
    } else if x > hi {
        x - hi
    } else {
        0.0
    }
}

impl StructuredSet {
    pub fn singleton(point: DVector<f64>) -> Self {
        StructuredSet::Singleton { point }
    }

    pub fn boxed(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        let s = StructuredSet::BoxProduct { lo, hi };
        s.validate()?;
        Ok(s)
    }

    pub fn affine_plus_box(
        base: DVector<f64>,
        dirs: DMatrix<f64>,
        lo: DVector<f64>,
        hi: DVector<f64>,
    ) -> Result<Self> {
        let s = StructuredSet::AffinePlusBox { base, dirs, lo, hi };
        s.validate()?;
        Ok(s)
    }

    /// `{ U_r V_rᵀ + W : U_rᵀW = 0, W V_r = 0, ‖W‖_op ≤ radius }`.
    pub fn spectral(u_r: DMatrix<f64>, v_r: DMatrix<f64>, radius: f64) -> Result<Self> {
        Self::spectral_scaled(u_r, v_r, 1.0, radius)
    }

    /// Spectral set centred at `scale·U_r V_rᵀ`.
    pub fn spectral_scaled(
        u_r: DMatrix<f64>,
        v_r: DMatrix<f64>,
        scale: f64,
        radius: f64,
    ) -> Result<Self> {
        let rows = u_r.nrows();
        let cols = v_r.nrows();
        let center = linalg::flatten(&(&u_r * v_r.transpose() * scale));
        let s = StructuredSet::Spectral {
            rows,
            cols,
            center,
            u_r,
            v_r,
            radius,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn linear_image_of(
        center: DVector<f64>,
        generators: DMatrix<f64>,
        lo: DVector<f64>,
        hi: DVector<f64>,
    ) -> Result<Self> {
        let s = StructuredSet::LinearImage {
            center,
            generators,
            lo,
            hi,
        };
        s.validate()?;
        Ok(s)
    }

    /// Cartesian product; boxes and points are merged into a single box.
    pub fn product(blocks: Vec<StructuredSet>) -> Self {
        let dim: usize = blocks.iter().map(|b| b.dim()).sum();
        if blocks.iter().any(|b| matches!(b, StructuredSet::Empty { .. })) {
            return StructuredSet::Empty { dim };
        }
        let all_boxes = blocks.iter().all(|b| {
            matches!(
                b,
                StructuredSet::BoxProduct { .. } | StructuredSet::Singleton { .. }
            )
        });
        if all_boxes {
            let mut lo = Vec::with_capacity(dim);
            let mut hi = Vec::with_capacity(dim);
            for b in &blocks {
                match b {
                    StructuredSet::BoxProduct { lo: l, hi: h } => {
                        lo.extend(l.iter());
                        hi.extend(h.iter());
                    }
                    StructuredSet::Singleton { point } => {
                        lo.extend(point.iter());
                        hi.extend(point.iter());
                    }
                    _ => unreachable!(),
                }
            }
            return StructuredSet::BoxProduct {
                lo: DVector::from_vec(lo),
                hi: DVector::from_vec(hi),
            };
        }
        StructuredSet::Product { blocks }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let set: StructuredSet = serde_json::from_str(s)
            .map_err(|e| Error::InvalidArgument(format!("bad set JSON: {e}")))?;
        set.validate()?;
        Ok(set)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("sets always serialize")
    }

    /// Checks the representation invariants.
    pub fn validate(&self) -> Result<()> {
        match self {
            StructuredSet::Empty { .. } | StructuredSet::Singleton { .. } => Ok(()),
            StructuredSet::BoxProduct { lo, hi } => {
                check_dim(lo.len(), hi.len())?;
                check_bounds(lo, hi)
            }
            StructuredSet::AffinePlusBox { base, dirs, lo, hi } => {
                check_dim(base.len(), dirs.nrows())?;
                check_dim(dirs.ncols(), lo.len())?;
                check_dim(dirs.ncols(), hi.len())?;
                if base.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidArgument("base must be finite".into()));
                }
                if !linalg::is_orthonormal(dirs, ORTHONORMAL_TOL) {
                    return Err(Error::InvalidArgument(
                        "AffinePlusBox directions must be orthonormal".into(),
                    ));
                }
                check_bounds(lo, hi)
            }
            StructuredSet::Spectral {
                rows,
                cols,
                center,
                u_r,
                v_r,
                radius,
            } => {
                check_dim(rows * cols, center.len())?;
                check_dim(*rows, u_r.nrows())?;
                check_dim(*cols, v_r.nrows())?;
                check_dim(u_r.ncols(), v_r.ncols())?;
                if !(*radius >= 0.0) {
                    return Err(Error::InvalidArgument("spectral radius must be ≥ 0".into()));
                }
                if !linalg::is_orthonormal(u_r, ORTHONORMAL_TOL)
                    || !linalg::is_orthonormal(v_r, ORTHONORMAL_TOL)
                {
                    return Err(Error::InvalidArgument(
                        "spectral frames must be column-orthonormal".into(),
                    ));
                }
                Ok(())
            }
            StructuredSet::LinearImage {
                center,
                generators,
                lo,
                hi,
            } => {
                check_dim(center.len(), generators.nrows())?;
                check_dim(generators.ncols(), lo.len())?;
                check_dim(generators.ncols(), hi.len())?;
                check_bounds(lo, hi)
            }
            StructuredSet::Product { blocks } => blocks.iter().try_for_each(|b| b.validate()),
            StructuredSet::Clipped { inner, lo, hi } => {
                inner.validate()?;
                check_dim(inner.dim(), lo.len())?;
                check_dim(lo.len(), hi.len())?;
                check_bounds(lo, hi)
            }
        }
    }

    /// Ambient dimension.
    pub fn dim(&self) -> usize {
        match self {
            StructuredSet::Empty { dim } => *dim,
            StructuredSet::Singleton { point } => point.len(),
            StructuredSet::BoxProduct { lo, .. } => lo.len(),
            StructuredSet::AffinePlusBox { base, .. } => base.len(),
            StructuredSet::Spectral { center, .. } => center.len(),
            StructuredSet::LinearImage { center, .. } => center.len(),
            StructuredSet::Product { blocks } => blocks.iter().map(|b| b.dim()).sum(),
            StructuredSet::Clipped { lo, .. } => lo.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, StructuredSet::Empty { .. })
    }

    /// A canonical point of the set (finite even for unbounded sets).
    pub fn center(&self) -> Option<DVector<f64>> {
        match self {
            StructuredSet::Empty { .. } => None,
            StructuredSet::Spectral { center, .. } => Some(center.clone()),
            StructuredSet::Product { blocks } => {
                let parts: Option<Vec<DVector<f64>>> = blocks.iter().map(|b| b.center()).collect();
                parts.map(|p| concat(&p))
            }
            StructuredSet::Clipped { inner, lo, hi } => {
                let c = inner.center()?;
                let boxed = DVector::from_fn(c.len(), |i, _| clamp(c[i], lo[i], hi[i]));
                self.project(&boxed).ok()
            }
            _ => {
                let p = self.parametrized().expect("box-like variant");
                Some(&p.point + &p.gens * p.param_center())
            }
        }
    }

    fn parametrized(&self) -> Option<Parametrized> {
        match self {
            StructuredSet::Singleton { point } => Some(Parametrized {
                point: point.clone(),
                gens: DMatrix::zeros(point.len(), 0),
                lo: vec![],
                hi: vec![],
            }),
            StructuredSet::BoxProduct { lo, hi } => {
                let n = lo.len();
                let mut point = DVector::zeros(n);
                let mut free = Vec::new();
                for i in 0..n {
                    if lo[i] == hi[i] {
                        point[i] = lo[i];
                    } else {
                        free.push(i);
                    }
                }
                let gens = DMatrix::from_fn(n, free.len(), |i, k| f64::from(u8::from(i == free[k])));
                Some(Parametrized {
                    point,
                    gens,
                    lo: free.iter().map(|&i| lo[i]).collect(),
                    hi: free.iter().map(|&i| hi[i]).collect(),
                })
            }
            StructuredSet::AffinePlusBox { base, dirs, lo, hi } => Some(Parametrized {
                point: base.clone(),
                gens: dirs.clone(),
                lo: lo.iter().copied().collect(),
                hi: hi.iter().copied().collect(),
            }),
            StructuredSet::LinearImage {
                center,
                generators,
                lo,
                hi,
            } => Some(Parametrized {
                point: center.clone(),
                gens: generators.clone(),
                lo: lo.iter().copied().collect(),
                hi: hi.iter().copied().collect(),
            }),
            StructuredSet::Product { blocks } => {
                let parts: Option<Vec<Parametrized>> =
                    blocks.iter().map(|b| b.parametrized()).collect();
                let parts = parts?;
                let n: usize = parts.iter().map(|p| p.point.len()).sum();
                let k: usize = parts.iter().map(|p| p.gens.ncols()).sum();
                let mut gens = DMatrix::zeros(n, k);
                let (mut r0, mut c0) = (0, 0);
                let mut lo = Vec::with_capacity(k);
                let mut hi = Vec::with_capacity(k);
                for p in &parts {
                    gens.view_mut((r0, c0), p.gens.shape()).copy_from(&p.gens);
                    r0 += p.point.len();
                    c0 += p.gens.ncols();
                    lo.extend_from_slice(&p.lo);
                    hi.extend_from_slice(&p.hi);
                }
                let points: Vec<DVector<f64>> = parts.iter().map(|p| p.point.clone()).collect();
                Some(Parametrized {
                    point: concat(&points),
                    gens,
                    lo,
                    hi,
                })
            }
            _ => None,
        }
    }

    /// Euclidean projection onto the set.
    pub fn project(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), v.len())?;
        Ok(match self {
            StructuredSet::Empty { .. } => {
                return Err(Error::InvalidArgument("projection onto the empty set".into()))
            }
            StructuredSet::Singleton { point } => point.clone(),
            StructuredSet::BoxProduct { lo, hi } => {
                DVector::from_fn(v.len(), |i, _| clamp(v[i], lo[i], hi[i]))
            }
            StructuredSet::AffinePlusBox { base, dirs, lo, hi } => {
                let t = dirs.tr_mul(&(v - base));
                let tc = DVector::from_fn(t.len(), |k, _| clamp(t[k], lo[k], hi[k]));
                base + dirs * tc
            }
            StructuredSet::Spectral { .. } => self.spectral_parts(v).projection,
            StructuredSet::LinearImage { .. } => {
                let p = self.parametrized().expect("linear image");
                let t = bounded_least_squares(&p.gens, &(v - &p.point), &p.lo, &p.hi);
                &p.point + &p.gens * t
            }
            StructuredSet::Product { blocks } => {
                let mut out = Vec::with_capacity(blocks.len());
                let mut off = 0;
                for b in blocks {
                    let d = b.dim();
                    out.push(b.project(&v.rows(off, d).into_owned())?);
                    off += d;
                }
                concat(&out)
            }
            StructuredSet::Clipped { inner, lo, hi } => dykstra(inner, lo, hi, v)?,
        })
    }

    /// Distance from `v` to the set.
    ///
    /// `L2` is the exact Euclidean distance. `Linf` is exact for points,
    /// boxes and products of them; for the remaining variants it is the gauge
    /// that [`contains`](Self::contains) thresholds: the larger of the
    /// residual off the affine hull and the violation of the parameter bounds
    /// (affine-plus-box), or of the off-block residual and the operator-norm
    /// excess (spectral). Linear images use the Euclidean distance.
    pub fn distance(&self, v: &DVector<f64>, norm: Norm) -> Result<f64> {
        check_dim(self.dim(), v.len())?;
        match norm {
            Norm::L2 => match self {
                StructuredSet::Empty { .. } => Ok(f64::INFINITY),
                StructuredSet::BoxProduct { lo, hi } => Ok((0..v.len())
                    .map(|i| excess(v[i], lo[i], hi[i]).powi(2))
                    .sum::<f64>()
                    .sqrt()),
                StructuredSet::Product { blocks } => {
                    let mut acc = 0.0;
                    let mut off = 0;
                    for b in blocks {
                        let d = b.dim();
                        acc += b.distance(&v.rows(off, d).into_owned(), Norm::L2)?.powi(2);
                        off += d;
                    }
                    Ok(acc.sqrt())
                }
                _ => Ok((v - self.project(v)?).norm()),
            },
            Norm::Linf => self.linf_gauge(v),
        }
    }

    fn linf_gauge(&self, v: &DVector<f64>) -> Result<f64> {
        Ok(match self {
            StructuredSet::Empty { .. } => f64::INFINITY,
            StructuredSet::Singleton { point } => linalg::linf(&(v - point)),
            StructuredSet::BoxProduct { lo, hi } => {
                (0..v.len()).fold(0.0_f64, |m, i| m.max(excess(v[i], lo[i], hi[i])))
            }
            StructuredSet::AffinePlusBox { base, dirs, lo, hi } => {
                let w = v - base;
                let t = dirs.tr_mul(&w);
                let off = &w - dirs * &t;
                let box_ex = (0..t.len()).fold(0.0_f64, |m, k| m.max(excess(t[k], lo[k], hi[k])));
                linalg::linf(&off).max(box_ex)
            }
            StructuredSet::Spectral { radius, .. } => {
                let parts = self.spectral_parts(v);
                parts.off_block_max.max((parts.block_norm - radius).max(0.0))
            }
            StructuredSet::LinearImage { .. } => (v - self.project(v)?).norm(),
            StructuredSet::Product { blocks } => {
                let mut m: f64 = 0.0;
                let mut off = 0;
                for b in blocks {
                    let d = b.dim();
                    m = m.max(b.linf_gauge(&v.rows(off, d).into_owned())?);
                    off += d;
                }
                m
            }
            StructuredSet::Clipped { inner, lo, hi } => {
                let box_ex = (0..v.len()).fold(0.0_f64, |m, i| m.max(excess(v[i], lo[i], hi[i])));
                inner.linf_gauge(v)?.max(box_ex)
            }
        })
    }

    /// Membership within tolerance: `distance(v, Linf) ≤ tol + 1e-12`.
    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> Result<bool> {
        if tol < 0.0 {
            return Err(Error::InvalidArgument("tolerance must be ≥ 0".into()));
        }
        Ok(self.linf_gauge_checked(v)? <= tol + MEMBERSHIP_SLACK)
    }

    fn linf_gauge_checked(&self, v: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), v.len())?;
        self.linf_gauge(v)
    }

    /// `v` lies in the set and at `ℓ∞` distance at least `margin` from its
    /// relative boundary, measured inside the affine hull.
    pub fn in_relative_interior(&self, v: &DVector<f64>, margin: f64) -> Result<bool> {
        check_dim(self.dim(), v.len())?;
        if !(margin > 0.0) {
            return Err(Error::InvalidArgument("margin must be > 0".into()));
        }
        let eq = FIXED_DIRECTION_TOL;
        Ok(match self {
            StructuredSet::Empty { .. } => false,
            StructuredSet::Singleton { point } => linalg::linf(&(v - point)) <= eq,
            StructuredSet::BoxProduct { lo, hi } => (0..v.len()).all(|i| {
                if lo[i] == hi[i] {
                    (v[i] - lo[i]).abs() <= eq
                } else {
                    v[i] - lo[i] >= margin && hi[i] - v[i] >= margin
                }
            }),
            StructuredSet::AffinePlusBox { base, dirs, lo, hi } => {
                let w = v - base;
                let t = dirs.tr_mul(&w);
                let off = &w - dirs * &t;
                linalg::linf(&off) <= eq
                    && (0..t.len()).all(|k| {
                        if lo[k] == hi[k] {
                            (t[k] - lo[k]).abs() <= eq
                        } else {
                            t[k] - lo[k] >= margin && hi[k] - t[k] >= margin
                        }
                    })
            }
            StructuredSet::Spectral {
                rows,
                cols,
                u_r,
                radius,
                ..
            } => {
                let parts = self.spectral_parts(v);
                let r = u_r.ncols();
                let block_trivial = r >= *rows || r >= *cols || *radius == 0.0;
                parts.off_block_max <= eq
                    && if block_trivial {
                        parts.block_norm <= eq
                    } else {
                        radius - parts.block_norm >= margin
                    }
            }
            StructuredSet::LinearImage { .. } => {
                let p = self.parametrized().expect("linear image");
                let free = p.free_columns();
                let g = DMatrix::from_fn(p.gens.nrows(), free.len(), |i, k| p.gens[(i, free[k])]);
                let fixed_shift = (0..p.gens.ncols())
                    .filter(|k| !free.contains(k))
                    .fold(DVector::zeros(v.len()), |acc, k| acc + p.gens.column(k) * p.lo[k]);
                if free.len() > 0 && linalg::numerical_rank(&g, 1e-12) < free.len() {
                    return Err(Error::Unsupported(
                        "relative interior of a linear image with dependent generators".into(),
                    ));
                }
                let rhs = v - &p.point - fixed_shift;
                let t = if free.is_empty() {
                    DVector::zeros(0)
                } else {
                    Svd::new(&g).solve(&rhs, 1e-14)
                };
                let resid = &rhs - &g * &t;
                linalg::linf(&resid) <= eq
                    && free.iter().enumerate().all(|(k, &col)| {
                        t[k] - p.lo[col] >= margin && p.hi[col] - t[k] >= margin
                    })
            }
            StructuredSet::Product { blocks } => {
                let mut off = 0;
                for b in blocks {
                    let d = b.dim();
                    if !b.in_relative_interior(&v.rows(off, d).into_owned(), margin)? {
                        return Ok(false);
                    }
                    off += d;
                }
                true
            }
            StructuredSet::Clipped { inner, lo, hi } => {
                inner.in_relative_interior(v, margin)?
                    && (0..v.len()).all(|i| {
                        lo[i] == hi[i] || (v[i] - lo[i] >= margin && hi[i] - v[i] >= margin)
                    })
            }
        })
    }

    /// A point of the affine hull together with directions spanning it.
    pub fn affine_hull(&self) -> Option<(DVector<f64>, DMatrix<f64>)> {
        match self {
            StructuredSet::Empty { .. } => None,
            StructuredSet::Spectral {
                rows,
                cols,
                center,
                u_r,
                v_r,
                radius,
            } => {
                let n = rows * cols;
                if *radius == 0.0 {
                    return Some((center.clone(), DMatrix::zeros(n, 0)));
                }
                let u_perp = linalg::orthonormal_complement(u_r);
                let v_perp = linalg::orthonormal_complement(v_r);
                let mut dirs = DMatrix::zeros(n, u_perp.ncols() * v_perp.ncols());
                let mut k = 0;
                for i in 0..u_perp.ncols() {
                    for j in 0..v_perp.ncols() {
                        let e = u_perp.column(i) * v_perp.column(j).transpose();
                        dirs.set_column(k, &linalg::flatten(&e));
                        k += 1;
                    }
                }
                Some((center.clone(), dirs))
            }
            StructuredSet::Product { blocks } if self.parametrized().is_none() => {
                let hulls: Option<Vec<(DVector<f64>, DMatrix<f64>)>> =
                    blocks.iter().map(|b| b.affine_hull()).collect();
                let hulls = hulls?;
                let n: usize = hulls.iter().map(|h| h.0.len()).sum();
                let k: usize = hulls.iter().map(|h| h.1.ncols()).sum();
                let mut dirs = DMatrix::zeros(n, k);
                let (mut r0, mut c0) = (0, 0);
                for (p, d) in &hulls {
                    dirs.view_mut((r0, c0), d.shape()).copy_from(d);
                    r0 += p.len();
                    c0 += d.ncols();
                }
                let pts: Vec<DVector<f64>> = hulls.into_iter().map(|h| h.0).collect();
                Some((concat(&pts), dirs))
            }
            StructuredSet::Clipped { inner, lo, hi } => {
                let point = self.center()?;
                let (_, dirs) = inner.affine_hull()?;
                // directions along which the clip box has zero width are lost
                let keep: Vec<usize> = (0..dirs.ncols())
                    .filter(|&k| {
                        dirs.column(k)
                            .iter()
                            .enumerate()
                            .all(|(i, &x)| x.abs() <= 1e-14 || lo[i] < hi[i])
                    })
                    .collect();
                Some((point, DMatrix::from_fn(dirs.nrows(), keep.len(), |i, k| dirs[(i, keep[k])])))
            }
            _ => {
                let p = self.parametrized()?;
                let free = p.free_columns();
                let point = &p.point + &p.gens * p.param_center();
                let dirs = DMatrix::from_fn(p.gens.nrows(), free.len(), |i, k| p.gens[(i, free[k])]);
                Some((point, dirs))
            }
        }
    }

    /// Dimension of the affine hull.
    pub fn affine_dimension(&self) -> Option<usize> {
        self.affine_hull()
            .map(|(_, d)| linalg::numerical_rank(&d, SPAN_RANK_REL_TOL))
    }

    pub fn translate(&self, shift: &DVector<f64>) -> Result<Self> {
        check_dim(self.dim(), shift.len())?;
        Ok(match self {
            StructuredSet::Empty { dim } => StructuredSet::Empty { dim: *dim },
            StructuredSet::Singleton { point } => StructuredSet::Singleton {
                point: point + shift,
            },
            StructuredSet::BoxProduct { lo, hi } => StructuredSet::BoxProduct {
                lo: lo + shift,
                hi: hi + shift,
            },
            StructuredSet::AffinePlusBox { base, dirs, lo, hi } => StructuredSet::AffinePlusBox {
                base: base + shift,
                dirs: dirs.clone(),
                lo: lo.clone(),
                hi: hi.clone(),
            },
            StructuredSet::Spectral {
                rows,
                cols,
                center,
                u_r,
                v_r,
                radius,
            } => StructuredSet::Spectral {
                rows: *rows,
                cols: *cols,
                center: center + shift,
                u_r: u_r.clone(),
                v_r: v_r.clone(),
                radius: *radius,
            },
            StructuredSet::LinearImage {
                center,
                generators,
                lo,
                hi,
            } => StructuredSet::LinearImage {
                center: center + shift,
                generators: generators.clone(),
                lo: lo.clone(),
                hi: hi.clone(),
            },
            StructuredSet::Product { blocks } => {
                let mut out = Vec::with_capacity(blocks.len());
                let mut off = 0;
                for b in blocks {
                    let d = b.dim();
                    out.push(b.translate(&shift.rows(off, d).into_owned())?);
                    off += d;
                }
                StructuredSet::Product { blocks: out }
            }
            StructuredSet::Clipped { inner, lo, hi } => StructuredSet::Clipped {
                inner: Box::new(inner.translate(shift)?),
                lo: lo + shift,
                hi: hi + shift,
            },
        })
    }

    /// Minkowski sum, when it stays representable.
    pub fn minkowski_sum(&self, other: &StructuredSet) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        use StructuredSet::*;
        match (self, other) {
            (Empty { dim }, _) | (_, Empty { dim }) => Ok(Empty { dim: *dim }),
            (Singleton { point }, s) | (s, Singleton { point }) => s.translate(point),
            (BoxProduct { lo: l1, hi: h1 }, BoxProduct { lo: l2, hi: h2 }) => Ok(BoxProduct {
                lo: l1 + l2,
                hi: h1 + h2,
            }),
            (Product { blocks: a }, Product { blocks: b })
                if a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.dim() == y.dim()) =>
            {
                let blocks = a
                    .iter()
                    .zip(b)
                    .map(|(x, y)| x.minkowski_sum(y))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Product { blocks })
            }
            (a, b) => match (a.parametrized(), b.parametrized()) {
                (Some(pa), Some(pb)) => {
                    let n = pa.point.len();
                    let k = pa.gens.ncols() + pb.gens.ncols();
                    let mut gens = DMatrix::zeros(n, k);
                    gens.view_mut((0, 0), pa.gens.shape()).copy_from(&pa.gens);
                    gens.view_mut((0, pa.gens.ncols()), pb.gens.shape())
                        .copy_from(&pb.gens);
                    let lo: Vec<f64> = pa.lo.iter().chain(&pb.lo).copied().collect();
                    let hi: Vec<f64> = pa.hi.iter().chain(&pb.hi).copied().collect();
                    Ok(LinearImage {
                        center: &pa.point + &pb.point,
                        generators: gens,
                        lo: DVector::from_vec(lo),
                        hi: DVector::from_vec(hi),
                    })
                }
                _ => Err(Error::NotRepresentable(
                    "Minkowski sum of a spectral or clipped set; decompose the operator".into(),
                )),
            },
        }
    }

    /// Image `{ M v : v ∈ S }` under a linear map.
    pub fn linear_image(&self, m: &DMatrix<f64>) -> Result<Self> {
        check_dim(self.dim(), m.ncols())?;
        if let StructuredSet::Empty { .. } = self {
            return Ok(StructuredSet::Empty { dim: m.nrows() });
        }
        let p = self.parametrized().ok_or_else(|| {
            Error::NotRepresentable("linear image of a spectral or clipped set".into())
        })?;
        let free = p.free_columns();
        let fixed = (0..p.gens.ncols())
            .filter(|k| !free.contains(k))
            .fold(p.point.clone(), |acc, k| acc + p.gens.column(k) * p.lo[k]);
        let center = m * fixed;
        if free.is_empty() {
            return Ok(StructuredSet::Singleton { point: center });
        }
        let gens = DMatrix::from_fn(p.gens.nrows(), free.len(), |i, k| p.gens[(i, free[k])]);
        Ok(StructuredSet::LinearImage {
            center,
            generators: m * gens,
            lo: DVector::from_iterator(free.len(), free.iter().map(|&k| p.lo[k])),
            hi: DVector::from_iterator(free.len(), free.iter().map(|&k| p.hi[k])),
        })
    }

    /// Intersection with the closed box `Π [c_i − r, c_i + r]`.
    pub fn intersect_linf_ball(&self, c: &DVector<f64>, r: f64) -> Result<Self> {
        let lo = c.map(|x| x - r);
        let hi = c.map(|x| x + r);
        self.intersect_box(&lo, &hi)
    }

    /// Intersection with an axis-aligned box.
    pub fn intersect_box(&self, lo: &DVector<f64>, hi: &DVector<f64>) -> Result<Self> {
        check_dim(self.dim(), lo.len())?;
        check_dim(lo.len(), hi.len())?;
        let dim = self.dim();
        Ok(match self {
            StructuredSet::Empty { .. } => self.clone(),
            StructuredSet::Singleton { point } => {
                if (0..dim).all(|i| lo[i] <= point[i] && point[i] <= hi[i]) {
                    self.clone()
                } else {
                    StructuredSet::Empty { dim }
                }
            }
            StructuredSet::BoxProduct { lo: l, hi: h } => {
                let nl = DVector::from_fn(dim, |i, _| l[i].max(lo[i]));
                let nh = DVector::from_fn(dim, |i, _| h[i].min(hi[i]));
                if (0..dim).any(|i| nl[i] > nh[i]) {
                    StructuredSet::Empty { dim }
                } else {
                    StructuredSet::BoxProduct { lo: nl, hi: nh }
                }
            }
            StructuredSet::AffinePlusBox { .. } if self.as_axis_box().is_some() => {
                self.as_axis_box().unwrap().intersect_box(lo, hi)?
            }
            StructuredSet::Product { blocks } => {
                let mut out = Vec::with_capacity(blocks.len());
                let mut off = 0;
                for b in blocks {
                    let d = b.dim();
                    out.push(b.intersect_box(
                        &lo.rows(off, d).into_owned(),
                        &hi.rows(off, d).into_owned(),
                    )?);
                    off += d;
                }
                StructuredSet::product(out)
            }
            StructuredSet::Clipped {
                inner,
                lo: l,
                hi: h,
            } => {
                let nl = DVector::from_fn(dim, |i, _| l[i].max(lo[i]));
                let nh = DVector::from_fn(dim, |i, _| h[i].min(hi[i]));
                if (0..dim).any(|i| nl[i] > nh[i]) {
                    StructuredSet::Empty { dim }
                } else {
                    StructuredSet::Clipped {
                        inner: inner.clone(),
                        lo: nl,
                        hi: nh,
                    }
                }
            }
            _ => StructuredSet::Clipped {
                inner: Box::new(self.clone()),
                lo: lo.clone(),
                hi: hi.clone(),
            },
        })
    }

    /// Rewrites an affine-plus-box set whose directions are signed
    /// coordinate axes as a plain box.
    fn as_axis_box(&self) -> Option<StructuredSet> {
        let StructuredSet::AffinePlusBox { base, dirs, lo, hi } = self else {
            return None;
        };
        let mut l = base.clone();
        let mut h = base.clone();
        for k in 0..dirs.ncols() {
            let col = dirs.column(k);
            let nz: Vec<usize> = (0..col.len()).filter(|&i| col[i] != 0.0).collect();
            if nz.len() != 1 || col[nz[0]].abs() != 1.0 {
                return None;
            }
            let i = nz[0];
            let s = col[i];
            let (a, b) = if s > 0.0 { (lo[k], hi[k]) } else { (-hi[k], -lo[k]) };
            l[i] = base[i] + a;
            h[i] = base[i] + b;
        }
        Some(StructuredSet::BoxProduct { lo: l, hi: h })
    }

    /// Random member, or `None` when none is found; infinite parameter
    /// bounds are replaced by `±scale`.
    pub fn sample(&self, rng: &mut impl Rng, scale: f64) -> Option<DVector<f64>> {
        match self {
            StructuredSet::Empty { .. } => None,
            StructuredSet::Spectral {
                rows,
                cols,
                center,
                u_r,
                v_r,
                radius,
            } => {
                let u_perp = linalg::orthonormal_complement(u_r);
                let v_perp = linalg::orthonormal_complement(v_r);
                if u_perp.ncols() == 0 || v_perp.ncols() == 0 || *radius == 0.0 {
                    return Some(center.clone());
                }
                let g = crate::sampling::gaussian_matrix(rng, u_perp.ncols(), v_perp.ncols());
                let w = &u_perp * g * v_perp.transpose();
                let nw = linalg::op_norm(&w);
                let target = radius * rng.random_range(0.0..1.0);
                let w = if nw > 0.0 { w * (target / nw) } else { w };
                debug_assert_eq!(w.shape(), (*rows, *cols));
                Some(center + linalg::flatten(&w))
            }
            StructuredSet::Product { blocks } if self.parametrized().is_none() => {
                let parts: Option<Vec<DVector<f64>>> =
                    blocks.iter().map(|b| b.sample(rng, scale)).collect();
                parts.map(|p| concat(&p))
            }
            StructuredSet::Clipped { inner, lo, hi } => {
                for _ in 0..200 {
                    let s = inner.sample(rng, scale)?;
                    if (0..s.len()).all(|i| lo[i] <= s[i] && s[i] <= hi[i]) {
                        return Some(s);
                    }
                }
                // the intersection may be empty; only a certified member is returned
                self.center()
                    .filter(|c| self.contains(c, linalg::structure_tol(linalg::linf(c))).unwrap_or(false))
            }
            _ => {
                let p = self.parametrized()?;
                let t = DVector::from_fn(p.lo.len(), |k, _| {
                    let lo = if p.lo[k].is_finite() { p.lo[k] } else { -scale };
                    let hi = if p.hi[k].is_finite() { p.hi[k] } else { scale };
                    let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, hi) };
                    if lo == hi {
                        lo
                    } else {
                        rng.random_range(lo..=hi)
                    }
                });
                Some(&p.point + &p.gens * t)
            }
        }
    }

    /// Largest discrepancy between the describing parameters of two sets of
    /// the same shape (`∞` when the shapes differ). Used to test continuity of
    /// set-valued maps along a manifold.
    pub fn face_distance(&self, other: &StructuredSet) -> f64 {
        use StructuredSet::*;
        if self.dim() != other.dim() {
            return f64::INFINITY;
        }
        match (self, other) {
            (Empty { .. }, Empty { .. }) => 0.0,
            (Singleton { point: a }, Singleton { point: b }) => linalg::linf(&(a - b)),
            (BoxProduct { lo: l1, hi: h1 }, BoxProduct { lo: l2, hi: h2 }) => {
                bound_distance(l1, l2).max(bound_distance(h1, h2))
            }
            (
                AffinePlusBox {
                    base: b1,
                    dirs: d1,
                    lo: l1,
                    hi: h1,
                },
                AffinePlusBox {
                    base: b2,
                    dirs: d2,
                    lo: l2,
                    hi: h2,
                },
            ) if d1.shape() == d2.shape() => linalg::linf(&(b1 - b2))
                .max(max_abs(&(d1 - d2)))
                .max(bound_distance(l1, l2))
                .max(bound_distance(h1, h2)),
            (
                Spectral {
                    center: c1,
                    u_r: u1,
                    v_r: v1,
                    radius: r1,
                    ..
                },
                Spectral {
                    center: c2,
                    u_r: u2,
                    v_r: v2,
                    radius: r2,
                    ..
                },
            ) if u1.ncols() == u2.ncols() => {
                let pu = u1 * u1.transpose() - u2 * u2.transpose();
                let pv = v1 * v1.transpose() - v2 * v2.transpose();
                linalg::linf(&(c1 - c2))
                    .max((r1 - r2).abs())
                    .max(max_abs(&pu))
                    .max(max_abs(&pv))
            }
            (
                LinearImage {
                    center: c1,
                    generators: g1,
                    lo: l1,
                    hi: h1,
                },
                LinearImage {
                    center: c2,
                    generators: g2,
                    lo: l2,
                    hi: h2,
                },
            ) if g1.shape() == g2.shape() => linalg::linf(&(c1 - c2))
                .max(max_abs(&(g1 - g2)))
                .max(bound_distance(l1, l2))
                .max(bound_distance(h1, h2)),
            (Product { blocks: a }, Product { blocks: b }) if a.len() == b.len() => a
                .iter()
                .zip(b)
                .map(|(x, y)| x.face_distance(y))
                .fold(0.0, f64::max),
            (
                Clipped {
                    inner: i1,
                    lo: l1,
                    hi: h1,
                },
                Clipped {
                    inner: i2,
                    lo: l2,
                    hi: h2,
                },
            ) => i1
                .face_distance(i2)
                .max(bound_distance(l1, l2))
                .max(bound_distance(h1, h2)),
            _ => f64::INFINITY,
        }
    }

    fn spectral_parts(&self, v: &DVector<f64>) -> SpectralParts {
        let StructuredSet::Spectral {
            rows,
            cols,
            center,
            u_r,
            v_r,
            radius,
        } = self
        else {
            unreachable!("spectral_parts on a non-spectral set");
        };
        let z = linalg::unflatten(&(v - center), *rows, *cols);
        let pu = u_r * u_r.transpose();
        let pv = v_r * v_r.transpose();
        let block = &z - &pu * &z - &z * &pv + &pu * &z * &pv;
        let off = &z - &block;
        let svd = Svd::new(&block);
        let block_norm = svd.max_singular_value();
        let clipped = svd.recompose_with(|s| s.min(*radius));
        SpectralParts {
            off_block_max: max_abs(&off),
            block_norm,
            projection: center + linalg::flatten(&clipped),
        }
    }
}

struct SpectralParts {
    off_block_max: f64,
    block_norm: f64,
    projection: DVector<f64>,
}

fn check_bounds(lo: &DVector<f64>, hi: &DVector<f64>) -> Result<()> {
    for i in 0..lo.len() {
        if lo[i].is_nan() || hi[i].is_nan() || lo[i] > hi[i] {
            return Err(Error::InvalidArgument(format!(
                "bounds violate lo ≤ hi at index {i}: [{}, {}]",
                lo[i], hi[i]
            )));
        }
    }
    Ok(())
}

fn bound_distance(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| if x == y { 0.0 } else { (x - y).abs() })
        .fold(0.0, f64::max)
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

pub(crate) fn concat(parts: &[DVector<f64>]) -> DVector<f64> {
    let n = parts.iter().map(|p| p.len()).sum();
    DVector::from_iterator(n, parts.iter().flat_map(|p| p.iter().copied()))
}

/// `argmin_{t ∈ [lo, hi]} ½‖G t − r‖²` by accelerated projected gradient.
fn bounded_least_squares(g: &DMatrix<f64>, r: &DVector<f64>, lo: &[f64], hi: &[f64]) -> DVector<f64> {
    let k = g.ncols();
    if k == 0 {
        return DVector::zeros(0);
    }
    let proj = |t: &DVector<f64>| DVector::from_fn(k, |j, _| clamp(t[j], lo[j], hi[j]));
    let lip = linalg::op_norm(g).powi(2);
    if lip == 0.0 {
        return proj(&DVector::zeros(k));
    }
    let start = Svd::new(g).solve(r, 1e-14);
    let mut t = proj(&start);
    let mut y = t.clone();
    let mut theta: f64 = 1.0;
    let step = 1.0 / lip;
    for _ in 0..20_000 {
        let grad = g.tr_mul(&(g * &y - r));
        let next = proj(&(&y - grad * step));
        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let moved = (&next - &t).norm();
        y = &next + (&next - &t) * ((theta - 1.0) / theta_next);
        t = next;
        theta = theta_next;
        if moved <= 1e-15 * (1.0 + t.norm()) {
            break;
        }
    }
    t
}

/// Projection onto `inner ∩ box` by Dykstra's alternating projections.
fn dykstra(
    inner: &StructuredSet,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = v.len();
    let mut x = v.clone();
    let mut p = DVector::zeros(n);
    let mut q = DVector::zeros(n);
    for _ in 0..10_000 {
        let y = inner.project(&(&x + &p))?;
        p = &x + &p - &y;
        let xn = DVector::from_fn(n, |i, _| clamp(y[i] + q[i], lo[i], hi[i]));
        q = &y + &q - &xn;
        let change = (&xn - &x).norm();
        x = xn;
        if change <= 1e-15 * (1.0 + x.norm()) {
            break;
        }
    }
    Ok(x)
}

/// Dimension of the linear span of `∪ (anchor + S)`.
pub fn span_dimension(sets: &[(DVector<f64>, StructuredSet)]) -> Result<usize> {
    let Some((first, _)) = sets.first() else {
        return Err(Error::InvalidArgument("span_dimension of an empty list".into()));
    };
    let n = first.len();
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for (anchor, s) in sets {
        check_dim(n, anchor.len())?;
        check_dim(n, s.dim())?;
        if let Some((point, dirs)) = s.affine_hull() {
            cols.push(anchor + point);
            cols.extend(dirs.column_iter().map(|c| c.into_owned()));
        }
    }
    if cols.is_empty() {
        return Ok(0);
    }
    let m = DMatrix::from_columns(&cols);
    Ok(linalg::numerical_rank(&m, SPAN_RANK_REL_TOL))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    #[test]
    fn empty_clipped_set_has_no_sample() {
        // the unit-radius disc block around e₁e₁ᵀ never reaches entry (0,0) = 3
        let u = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let s = StructuredSet::spectral(u.clone(), u, 1.0).unwrap();
        let lo = DVector::from_element(4, 2.5);
        let hi = DVector::from_element(4, 3.5);
        let clipped = s.intersect_box(&lo, &hi).unwrap();
        assert!(clipped.sample(&mut sampling::rng(0), 1.0).is_none());
    }

    fn l1_subdiff_at_200() -> StructuredSet {
        StructuredSet::boxed(v(&[1.0, -1.0, -1.0]), v(&[1.0, 1.0, 1.0])).unwrap()
    }

    #[test]
    fn box_center_is_member() {
        let s = StructuredSet::boxed(v(&[-1.0, -1.0]), v(&[1.0, 1.0])).unwrap();
        assert!(s.contains(&v(&[0.0, 0.0]), 0.0).unwrap());
    }

    #[test]
    fn degenerate_dual_is_member_but_on_boundary() {
        let s = l1_subdiff_at_200();
        let u = v(&[1.0, 1.0, 0.0]);
        assert!(s.contains(&u, 0.0).unwrap());
        assert!(!s.in_relative_interior(&u, 1e-8).unwrap());
        assert!(s.in_relative_interior(&v(&[1.0, 0.0, 0.0]), 0.5).unwrap());
    }

    #[test]
    fn singleton_relative_interior() {
        let p = v(&[0.3, -2.0]);
        let s = StructuredSet::singleton(p.clone());
        assert!(s.in_relative_interior(&p, 10.0).unwrap());
    }

    #[test]
    fn box_distances() {
        let s = StructuredSet::boxed(v(&[-1.0, -1.0]), v(&[1.0, 1.0])).unwrap();
        assert_eq!(s.distance(&v(&[2.0, 0.0]), Norm::Linf).unwrap(), 1.0);
        let d = s.distance(&v(&[2.0, 2.0]), Norm::L2).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let s = l1_subdiff_at_200();
        assert!(matches!(
            s.contains(&v(&[1.0]), 0.0),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(s.distance(&v(&[1.0, 2.0]), Norm::L2).is_err());
    }

    #[test]
    fn invalid_box_rejected() {
        assert!(StructuredSet::boxed(v(&[1.0]), v(&[0.0])).is_err());
    }

    #[test]
    fn spectral_membership_rejects_large_residual() {
        // U_r = e1, V_r = e1 in 3x3; w = e2, w' = e3
        let e = |i: usize| DMatrix::from_fn(3, 1, |r, _| f64::from(u8::from(r == i)));
        let s = StructuredSet::spectral(e(0), e(0), 1.0).unwrap();
        let m = e(0) * e(0).transpose() + e(1) * e(2).transpose() * 1.5;
        let flat = linalg::flatten(&m);
        assert!(!s.contains(&flat, 1e-9).unwrap());
        let m_in = e(0) * e(0).transpose() + e(1) * e(2).transpose() * 0.5;
        assert!(s.contains(&linalg::flatten(&m_in), 1e-9).unwrap());
        assert!(s.in_relative_interior(&linalg::flatten(&m_in), 0.4).unwrap());
        assert!(!s.in_relative_interior(&linalg::flatten(&m_in), 0.6).unwrap());
    }

    #[test]
    fn span_dimension_examples() {
        let origin = StructuredSet::singleton(DVector::zeros(3));
        assert_eq!(span_dimension(&[(DVector::zeros(3), origin)]).unwrap(), 0);

        // ℓ0 local union {([t,0], {0}×R)}
        let l0 = StructuredSet::boxed(v(&[0.0, f64::NEG_INFINITY]), v(&[0.0, f64::INFINITY])).unwrap();
        let sets: Vec<_> = [0.9, 1.0, 1.1].iter().map(|&t| (v(&[t, 0.0]), l0.clone())).collect();
        assert_eq!(span_dimension(&sets).unwrap(), 2);

        assert!(span_dimension(&[]).is_err());
    }

    #[test]
    fn example_l1_union_has_full_dimension() {
        // A(x) = sign(x) + x - [7, 1/2, 1/2] sampled along [t, 0, 0]
        let sets: Vec<_> = [5.8, 5.9, 6.0, 6.1, 6.2]
            .iter()
            .map(|&t| {
                let a = StructuredSet::boxed(
                    v(&[t + 1.0 - 7.0, -1.5, -1.5]),
                    v(&[t + 1.0 - 7.0, 0.5, 0.5]),
                )
                .unwrap();
                (v(&[t, 0.0, 0.0]), a)
            })
            .collect();
        assert_eq!(span_dimension(&sets).unwrap(), 3);
    }

    #[test]
    fn clipping_of_boxes_is_exact() {
        let s = l1_subdiff_at_200()
            .intersect_linf_ball(&v(&[1.0, 0.0, 0.0]), 0.5)
            .unwrap();
        assert_eq!(
            s,
            StructuredSet::BoxProduct {
                lo: v(&[1.0, -0.5, -0.5]),
                hi: v(&[1.0, 0.5, 0.5])
            }
        );
        let far = l1_subdiff_at_200()
            .intersect_linf_ball(&v(&[5.0, 0.0, 0.0]), 0.5)
            .unwrap();
        assert!(far.is_empty());
    }

    #[test]
    fn affine_plus_box_distance_matches_projected_gradient() {
        let mut rng = sampling::rng(11);
        for _ in 0..20 {
            let q = sampling::random_orthogonal(&mut rng, 3);
            let dirs = q.columns(0, 2).into_owned();
            let base = sampling::gaussian_vector(&mut rng, 3);
            let lo = v(&[-0.5, -1.0]);
            let hi = v(&[0.7, 0.2]);
            let s = StructuredSet::affine_plus_box(base.clone(), dirs.clone(), lo.clone(), hi.clone())
                .unwrap();
            let x = sampling::gaussian_vector(&mut rng, 3) * 2.0;
            // oracle: projected gradient on t for ½‖base + D t − x‖²
            let mut t = DVector::zeros(2);
            for _ in 0..5000 {
                let g = dirs.tr_mul(&(&base + &dirs * &t - &x));
                t -= g * 0.5;
                for k in 0..2 {
                    t[k] = t[k].clamp(lo[k], hi[k]);
                }
            }
            let oracle = (&base + &dirs * &t - &x).norm();
            let d = s.distance(&x, Norm::L2).unwrap();
            assert!((d - oracle).abs() < 1e-8, "{d} vs {oracle}");
        }
    }

    #[test]
    fn json_round_trip_with_infinite_bounds() {
        let s = StructuredSet::boxed(v(&[0.0, f64::NEG_INFINITY]), v(&[0.0, f64::INFINITY])).unwrap();
        let text = s.to_json();
        assert!(text.contains("\"variant\":\"BoxProduct\""));
        assert!(text.contains("\"-inf\""));
        assert_eq!(StructuredSet::from_json(&text).unwrap(), s);
    }

    #[test]
    fn json_rejects_invalid_payload() {
        let bad = r#"{"variant":"BoxProduct","lo":[1.0],"hi":[0.0]}"#;
        assert!(StructuredSet::from_json(bad).is_err());
    }

    #[test]
    fn minkowski_sum_of_boxes_and_points() {
        let a = StructuredSet::boxed(v(&[-1.0, 0.0]), v(&[1.0, 0.0])).unwrap();
        let b = StructuredSet::singleton(v(&[2.0, 3.0]));
        let s = a.minkowski_sum(&b).unwrap();
        assert_eq!(
            s,
            StructuredSet::BoxProduct {
                lo: v(&[1.0, 3.0]),
                hi: v(&[3.0, 3.0])
            }
        );
    }

    #[test]
    fn linear_image_membership() {
        let b = StructuredSet::boxed(v(&[-1.0, -1.0]), v(&[1.0, 1.0])).unwrap();
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let img = b.linear_image(&m).unwrap();
        assert!(img.contains(&v(&[0.5, -0.5, 0.0]), 1e-9).unwrap());
        assert!(!img.contains(&v(&[0.5, -0.5, 1.0]), 1e-6).unwrap());
        assert_eq!(img.affine_dimension(), Some(2));
    }

    #[test]
    fn clipped_spectral_projection_is_feasible() {
        let e = |i: usize| DMatrix::from_fn(2, 1, |r, _| f64::from(u8::from(r == i)));
        let s = StructuredSet::spectral(e(0), e(0), 1.0).unwrap();
        let c = s.center().unwrap();
        let clipped = s.intersect_linf_ball(&c, 0.3).unwrap();
        assert!(matches!(clipped, StructuredSet::Clipped { .. }));
        let p = clipped.project(&v(&[3.0, 1.0, 1.0, 2.0])).unwrap();
        assert!(clipped.contains(&p, 1e-9).unwrap());
    }
}
