//! Partly smooth set-valued operators and their calculus.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, Svd};
use crate::manifolds::{ManifoldDesc, Tolerance};
use crate::sampling;
use crate::sets::{Norm, StructuredSet};

/// Gradient callback of a smooth map.
pub type GradientFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

#[derive(Clone)]
pub enum SmoothKind {
    /// `x ↦ M x + c`.
    Affine {
        matrix: DMatrix<f64>,
        offset: DVector<f64>,
    },
    /// `x ↦ scale·Aᵀ(Ax − b) + ridge·x`.
    LeastSquares {
        a: DMatrix<f64>,
        b: DVector<f64>,
        scale: f64,
        ridge: f64,
    },
    Callable { dim: usize, grad: GradientFn },
}

impl fmt::Debug for SmoothKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SmoothKind::Affine { matrix, offset } => f
                .debug_struct("Affine")
                .field("matrix", matrix)
                .field("offset", offset)
                .finish(),
            SmoothKind::LeastSquares { a, b, scale, ridge } => f
                .debug_struct("LeastSquares")
                .field("a", &a.shape())
                .field("b", &b.len())
                .field("scale", scale)
                .field("ridge", ridge)
                .finish(),
            SmoothKind::Callable { dim, .. } => {
                f.debug_struct("Callable").field("dim", dim).finish()
            }
        }
    }
}

/// A single-valued Lipschitz monotone map `B` with constants
/// `‖B x − B y‖ ≤ L‖x − y‖` and `⟨B x − B y, x − y⟩ ≥ κ‖x − y‖²`.
#[derive(Debug, Clone)]
pub struct SmoothMap {
    pub kind: SmoothKind,
    pub lipschitz: f64,
    pub kappa: f64,
}

impl SmoothMap {
    /// `x ↦ M x + c`; `L = ‖M‖` and `κ = λ_min((M + Mᵀ)/2)`, clipped at 0.
    pub fn affine(matrix: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::InvalidArgument("affine map must be square".into()));
        }
        check_dim(matrix.nrows(), offset.len())?;
        let lipschitz = linalg::op_norm(&matrix);
        let sym = (&matrix + matrix.transpose()) * 0.5;
        let (kappa, _) = linalg::symmetric_eigen_range(&sym);
        Ok(SmoothMap {
            kind: SmoothKind::Affine { matrix, offset },
            lipschitz,
            kappa: kappa.max(0.0),
        })
    }

    /// `x ↦ x − c`, the gradient of `½‖x − c‖²`.
    pub fn shifted_identity(c: DVector<f64>) -> Self {
        let n = c.len();
        SmoothMap {
            kind: SmoothKind::Affine {
                matrix: DMatrix::identity(n, n),
                offset: -c,
            },
            lipschitz: 1.0,
            kappa: 1.0,
        }
    }

    /// Gradient of `(scale/2)‖Ax − b‖² + (ridge/2)‖x‖²`. The Lipschitz constant
    /// comes from power iteration; `kappa` is set to `ridge` (use
    /// [`with_constants`](Self::with_constants) when a sharper value is known).
    pub fn least_squares(a: DMatrix<f64>, b: DVector<f64>, scale: f64, ridge: f64) -> Result<Self> {
        check_dim(a.nrows(), b.len())?;
        if scale < 0.0 || ridge < 0.0 {
            return Err(Error::InvalidArgument("scale and ridge must be ≥ 0".into()));
        }
        let lipschitz = linalg::gram_max_eigenvalue(&a, scale) + ridge;
        Ok(SmoothMap {
            kind: SmoothKind::LeastSquares { a, b, scale, ridge },
            lipschitz,
            kappa: ridge,
        })
    }

    pub fn callable(dim: usize, grad: GradientFn, lipschitz: f64, kappa: f64) -> Self {
        SmoothMap {
            kind: SmoothKind::Callable { dim, grad },
            lipschitz,
            kappa,
        }
    }

    pub fn with_constants(mut self, lipschitz: f64, kappa: f64) -> Self {
        self.lipschitz = lipschitz;
        self.kappa = kappa;
        self
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            SmoothKind::Affine { matrix, .. } => matrix.ncols(),
            SmoothKind::LeastSquares { a, .. } => a.ncols(),
            SmoothKind::Callable { dim, .. } => *dim,
        }
    }

    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(match &self.kind {
            SmoothKind::Affine { matrix, offset } => matrix * x + offset,
            SmoothKind::LeastSquares { a, b, scale, ridge } => {
                a.tr_mul(&(a * x - b)) * *scale + x * *ridge
            }
            SmoothKind::Callable { grad, .. } => {
                let g = grad(x);
                check_dim(x.len(), g.len())?;
                g
            }
        })
    }

    /// `(Q, c)` with `B x = Q x + c`, when the map is affine.
    pub fn linear_part(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        match &self.kind {
            SmoothKind::Affine { matrix, offset } => Some((matrix.clone(), offset.clone())),
            SmoothKind::LeastSquares { a, b, scale, ridge } => {
                let n = a.ncols();
                let q = a.tr_mul(a) * *scale + DMatrix::identity(n, n) * *ridge;
                Some((q, -a.tr_mul(b) * *scale))
            }
            SmoothKind::Callable { .. } => None,
        }
    }

    /// `(q, c)` when `B x = q x + c`.
    pub fn scalar_part(&self) -> Option<(f64, DVector<f64>)> {
        match &self.kind {
            SmoothKind::Affine { matrix, offset } => {
                let n = matrix.nrows();
                let q = if n == 0 { 0.0 } else { matrix[(0, 0)] };
                let dev = (matrix - DMatrix::identity(n, n) * q)
                    .iter()
                    .fold(0.0_f64, |m, x| m.max(x.abs()));
                (dev <= 1e-14 * (1.0 + q.abs())).then(|| (q, offset.clone()))
            }
            SmoothKind::LeastSquares { a, b, scale, ridge } => {
                let degenerate = *scale == 0.0 || a.iter().all(|&v| v == 0.0);
                degenerate.then(|| (*ridge, -a.tr_mul(b) * *scale))
            }
            SmoothKind::Callable { .. } => None,
        }
    }

    /// `(I + γB)⁻¹ z`: a linear solve for affine maps, otherwise a damped
    /// fixed-point iteration to residual `1e-12`.
    pub fn resolvent(&self, z: &DVector<f64>, gamma: f64) -> Result<DVector<f64>> {
        check_dim(self.dim(), z.len())?;
        if let Some((q, c)) = self.linear_part() {
            let n = z.len();
            let sys = DMatrix::identity(n, n) + q * gamma;
            let rhs = z - c * gamma;
            return sys
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::NotConverged("singular resolvent system".into()));
        }
        let tau = 1.0 / (1.0 + gamma * self.lipschitz).powi(2);
        let mut x = z.clone();
        for _ in 0..1_000_000 {
            let r = &x + self.apply(&x)? * gamma - z;
            if r.norm() <= 1e-12 * (1.0 + z.norm()) {
                return Ok(x);
            }
            x -= r * tau;
        }
        Err(Error::NotConverged("smooth resolvent fixed point".into()))
    }
}

#[derive(Debug, Clone)]
pub enum PartlySmoothOperator {
    /// `μ·∂‖·‖₁`.
    SubdiffL1 { mu: f64 },
    /// `μ·∂‖·‖₀` (limiting subdifferential).
    SubdiffL0 { mu: f64 },
    /// `μ·∂‖·‖_*` on flattened `rows × cols` matrices.
    SubdiffNuclear { mu: f64, rows: usize, cols: usize },
    /// Normal cone of `Π [lo_i, hi_i]`.
    NormalConeBox { lo: DVector<f64>, hi: DVector<f64> },
    Smooth(SmoothMap),
    Sum(Vec<PartlySmoothOperator>),
    /// `z ↦ Gᵀ A(G z + h)`.
    LinearPrecompose {
        inner: Box<PartlySmoothOperator>,
        g: DMatrix<f64>,
        h: DVector<f64>,
    },
    /// `A₁ × ⋯ × A_m` acting on consecutive blocks of sizes `dims`.
    Product {
        blocks: Vec<PartlySmoothOperator>,
        dims: Vec<usize>,
    },
    /// `A + B` with smooth `B`.
    Perturbed {
        base: Box<PartlySmoothOperator>,
        smooth: SmoothMap,
    },
}

use PartlySmoothOperator as Op;

fn soft_threshold(z: &DVector<f64>, t: f64) -> DVector<f64> {
    z.map(|v| v.signum() * (v.abs() - t).max(0.0))
}

fn hard_threshold(z: &DVector<f64>, t: f64) -> DVector<f64> {
    // ties go to zero
    z.map(|v| if v.abs() <= t { 0.0 } else { v })
}

impl PartlySmoothOperator {
    pub fn l1(mu: f64) -> Result<Self> {
        positive(mu, "mu")?;
        Ok(Op::SubdiffL1 { mu })
    }

    pub fn l0(mu: f64) -> Result<Self> {
        positive(mu, "mu")?;
        Ok(Op::SubdiffL0 { mu })
    }

    pub fn nuclear(mu: f64, rows: usize, cols: usize) -> Result<Self> {
        positive(mu, "mu")?;
        Ok(Op::SubdiffNuclear { mu, rows, cols })
    }

    pub fn normal_cone_box(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        StructuredSet::boxed(lo.clone(), hi.clone())?;
        Ok(Op::NormalConeBox { lo, hi })
    }

    pub fn sum(parts: Vec<PartlySmoothOperator>) -> Result<Self> {
        let dims: Vec<usize> = parts.iter().filter_map(|p| p.dim()).collect();
        if let Some(&d) = dims.first() {
            if let Some(&bad) = dims.iter().find(|&&e| e != d) {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: bad,
                });
            }
        }
        Ok(Op::Sum(parts))
    }

    pub fn precompose(inner: PartlySmoothOperator, g: DMatrix<f64>, h: DVector<f64>) -> Result<Self> {
        check_dim(g.nrows(), h.len())?;
        if let Some(d) = inner.dim() {
            check_dim(d, g.nrows())?;
        }
        Ok(Op::LinearPrecompose {
            inner: Box::new(inner),
            g,
            h,
        })
    }

    pub fn product(blocks: Vec<(PartlySmoothOperator, usize)>) -> Result<Self> {
        for (op, d) in &blocks {
            if let Some(od) = op.dim() {
                check_dim(od, *d)?;
            }
        }
        let (blocks, dims) = blocks.into_iter().unzip();
        Ok(Op::Product { blocks, dims })
    }

    pub fn perturbed(base: PartlySmoothOperator, smooth: SmoothMap) -> Result<Self> {
        if let Some(d) = base.dim() {
            check_dim(d, smooth.dim())?;
        }
        Ok(Op::Perturbed {
            base: Box::new(base),
            smooth,
        })
    }

    /// Fixed ambient dimension, if the operator has one.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Op::SubdiffL1 { .. } | Op::SubdiffL0 { .. } => None,
            Op::SubdiffNuclear { rows, cols, .. } => Some(rows * cols),
            Op::NormalConeBox { lo, .. } => Some(lo.len()),
            Op::Smooth(s) => Some(s.dim()),
            Op::Sum(parts) => parts.iter().find_map(|p| p.dim()),
            Op::LinearPrecompose { g, .. } => Some(g.ncols()),
            Op::Product { dims, .. } => Some(dims.iter().sum()),
            Op::Perturbed { smooth, .. } => Some(smooth.dim()),
        }
    }

    /// Whether the operator is the subdifferential of a convex function or a
    /// monotone combination of such.
    pub fn is_monotone(&self) -> bool {
        match self {
            Op::SubdiffL0 { .. } => false,
            Op::Sum(p) => p.iter().all(|o| o.is_monotone()),
            Op::LinearPrecompose { inner, .. } => inner.is_monotone(),
            Op::Product { blocks, .. } => blocks.iter().all(|o| o.is_monotone()),
            Op::Perturbed { base, .. } => base.is_monotone(),
            _ => true,
        }
    }

    fn check_point(&self, x: &DVector<f64>) -> Result<()> {
        match self.dim() {
            Some(d) => check_dim(d, x.len()),
            None => Ok(()),
        }
    }

    /// `A(x)` as an exact structured set.
    pub fn eval(&self, x: &DVector<f64>) -> Result<StructuredSet> {
        self.check_point(x)?;
        match self {
            Op::SubdiffL1 { mu } => {
                let lo = x.map(|v| if v == 0.0 { -mu } else { mu * v.signum() });
                let hi = x.map(|v| if v == 0.0 { *mu } else { mu * v.signum() });
                Ok(StructuredSet::BoxProduct { lo, hi })
            }
            Op::SubdiffL0 { .. } => {
                let lo = x.map(|v| if v == 0.0 { f64::NEG_INFINITY } else { 0.0 });
                let hi = x.map(|v| if v == 0.0 { f64::INFINITY } else { 0.0 });
                Ok(StructuredSet::BoxProduct { lo, hi })
            }
            Op::SubdiffNuclear { mu, rows, cols } => {
                let svd = Svd::new(&linalg::unflatten(x, *rows, *cols));
                let r = svd.structural_rank();
                let (u, v) = svd.leading(r);
                StructuredSet::spectral_scaled(u, v, *mu, *mu)
            }
            Op::NormalConeBox { lo, hi } => {
                let n = x.len();
                let mut l = DVector::zeros(n);
                let mut h = DVector::zeros(n);
                for i in 0..n {
                    if x[i] < lo[i] || x[i] > hi[i] || x[i].is_nan() {
                        return Err(Error::EmptyDomain {
                            point: x.iter().copied().collect(),
                        });
                    }
                    if x[i] == lo[i] {
                        l[i] = f64::NEG_INFINITY;
                    }
                    if x[i] == hi[i] {
                        h[i] = f64::INFINITY;
                    }
                }
                Ok(StructuredSet::BoxProduct { lo: l, hi: h })
            }
            Op::Smooth(s) => Ok(StructuredSet::singleton(s.apply(x)?)),
            Op::Sum(parts) => {
                let mut acc: Option<StructuredSet> = None;
                for p in parts {
                    let v = p.eval(x)?;
                    acc = Some(match acc {
                        None => v,
                        Some(a) => a.minkowski_sum(&v)?,
                    });
                }
                acc.ok_or_else(|| Error::InvalidArgument("empty sum".into()))
            }
            Op::LinearPrecompose { inner, g, h } => {
                let y = g * x + h;
                inner.eval(&y)?.linear_image(&g.transpose())
            }
            Op::Product { blocks, dims } => {
                let mut out = Vec::with_capacity(blocks.len());
                let mut off = 0;
                for (b, &d) in blocks.iter().zip(dims) {
                    out.push(b.eval(&x.rows(off, d).into_owned())?);
                    off += d;
                }
                Ok(StructuredSet::product(out))
            }
            Op::Perturbed { base, smooth } => base.eval(x)?.translate(&smooth.apply(x)?),
        }
    }

    /// `J_{γA}(z) = (I + γA)⁻¹ z`.
    pub fn resolvent(&self, z: &DVector<f64>, gamma: f64) -> Result<DVector<f64>> {
        positive(gamma, "gamma")?;
        self.check_point(z)?;
        match self {
            Op::SubdiffL1 { mu } => Ok(soft_threshold(z, gamma * mu)),
            Op::SubdiffL0 { mu } => Ok(hard_threshold(z, (2.0 * gamma * mu).sqrt())),
            Op::SubdiffNuclear { mu, rows, cols } => {
                let svd = Svd::new(&linalg::unflatten(z, *rows, *cols));
                let t = gamma * mu;
                Ok(linalg::flatten(&svd.recompose_with(|s| (s - t).max(0.0))))
            }
            Op::NormalConeBox { lo, hi } => {
                Ok(DVector::from_fn(z.len(), |i, _| z[i].max(lo[i]).min(hi[i])))
            }
            Op::Smooth(s) => s.resolvent(z, gamma),
            Op::Perturbed { base, smooth } => shifted_resolvent(base, &[smooth], z, gamma),
            Op::Sum(parts) => {
                let (smooth, rest): (Vec<_>, Vec<_>) =
                    parts.iter().partition(|p| matches!(p, Op::Smooth(_)));
                let smooth: Vec<&SmoothMap> = smooth
                    .into_iter()
                    .map(|p| match p {
                        Op::Smooth(s) => s,
                        _ => unreachable!(),
                    })
                    .collect();
                match rest.as_slice() {
                    [] => Err(Error::NoClosedForm("sum of smooth maps".into())),
                    [base] => shifted_resolvent(base, &smooth, z, gamma),
                    _ => Err(Error::NoClosedForm(
                        "resolvent of a sum of several nonsmooth operators".into(),
                    )),
                }
            }
            Op::Product { blocks, dims } => {
                let mut out = Vec::with_capacity(blocks.len());
                let mut off = 0;
                for (b, &d) in blocks.iter().zip(dims) {
                    out.push(b.resolvent(&z.rows(off, d).into_owned(), gamma)?);
                    off += d;
                }
                Ok(crate::sets::concat(&out))
            }
            Op::LinearPrecompose { .. } => Err(Error::NoClosedForm(
                "resolvent of a linear precomposition".into(),
            )),
        }
    }

    /// Active manifold at `x`.
    pub fn active_manifold(&self, x: &DVector<f64>, tol: Tolerance) -> Result<ManifoldDesc> {
        self.check_point(x)?;
        match self {
            Op::SubdiffL1 { .. } | Op::SubdiffL0 { .. } => Ok(ManifoldDesc::support_at(x, tol)),
            Op::SubdiffNuclear { rows, cols, .. } => Ok(ManifoldDesc::FixedRank {
                rank: ManifoldDesc::rank_of(x, *rows, *cols, tol)?,
                rows: *rows,
                cols: *cols,
            }),
            Op::NormalConeBox { lo, hi } => {
                let n = x.len();
                let t = tol.threshold(linalg::linf(x));
                let mut base = x.clone();
                let mut free = Vec::new();
                for i in 0..n {
                    if (x[i] - lo[i]).abs() <= t {
                        base[i] = lo[i];
                    } else if (x[i] - hi[i]).abs() <= t {
                        base[i] = hi[i];
                    } else {
                        free.push(i);
                    }
                }
                let basis = DMatrix::from_fn(n, free.len(), |i, k| f64::from(u8::from(i == free[k])));
                ManifoldDesc::affine(base, basis)
            }
            Op::Product { blocks, dims } => {
                let mut out = Vec::with_capacity(blocks.len());
                let mut off = 0;
                for (b, &d) in blocks.iter().zip(dims) {
                    out.push(b.active_manifold(&x.rows(off, d).into_owned(), tol)?);
                    off += d;
                }
                Ok(ManifoldDesc::product(out))
            }
            Op::Perturbed { base, .. } => base.active_manifold(x, tol),
            Op::Sum(parts) => {
                let mut acc: Option<ManifoldDesc> = None;
                for p in parts.iter().filter(|p| !matches!(p, Op::Smooth(_))) {
                    let m = p.active_manifold(x, tol)?;
                    acc = Some(match acc {
                        None => m,
                        Some(a) => a.intersect(&m)?,
                    });
                }
                acc.ok_or_else(|| Error::NoManifold("sum without a nonsmooth summand".into()))
            }
            Op::Smooth(_) => Err(Error::NoManifold("smooth map has no nonsmooth anchor".into())),
            Op::LinearPrecompose { .. } => Err(Error::NoManifold(
                "linear precomposition carries no manifold metadata".into(),
            )),
        }
    }

    /// ε-localization around `(xbar, ubar)`.
    pub fn localize(
        &self,
        xbar: &DVector<f64>,
        ubar: &DVector<f64>,
        eps: f64,
    ) -> Result<LocalizedOperator> {
        positive(eps, "eps")?;
        check_dim(xbar.len(), ubar.len())?;
        let value = self.eval(xbar)?;
        let dist = value.distance(ubar, Norm::Linf)?;
        if dist > linalg::structure_tol(linalg::linf(ubar)) {
            return Err(Error::NotAMember { distance: dist });
        }
        Ok(LocalizedOperator {
            base: self.clone(),
            xbar: xbar.clone(),
            ubar: ubar.clone(),
            eps,
        })
    }
}

fn positive(v: f64, name: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive and finite, got {v}")))
    }
}

/// `J_{γ(A + B)}` for `B x = q x + c`:
/// `x = J_{(γ/(1+γq))A}((z − γc)/(1 + γq))`.
fn shifted_resolvent(
    base: &Op,
    smooth: &[&SmoothMap],
    z: &DVector<f64>,
    gamma: f64,
) -> Result<DVector<f64>> {
    let mut q = 0.0;
    let mut c = DVector::zeros(z.len());
    for s in smooth {
        let (qs, cs) = s.scalar_part().ok_or_else(|| {
            Error::NoClosedForm("smooth part is not a scalar multiple of the identity plus a shift".into())
        })?;
        check_dim(z.len(), cs.len())?;
        q += qs;
        c += cs;
    }
    let scale = 1.0 + gamma * q;
    if scale <= 0.0 {
        return Err(Error::InvalidArgument("1 + γq must be positive".into()));
    }
    base.resolvent(&((z - c * gamma) / scale), gamma / scale)
}

/// `A_ε(x) = A(x) ∩ {‖u − ū‖∞ ≤ ε}` for `‖x − x̄‖∞ < ε`, empty otherwise.
#[derive(Debug, Clone)]
pub struct LocalizedOperator {
    pub base: PartlySmoothOperator,
    pub xbar: DVector<f64>,
    pub ubar: DVector<f64>,
    pub eps: f64,
}

impl LocalizedOperator {
    pub fn eval(&self, x: &DVector<f64>) -> Result<StructuredSet> {
        check_dim(self.xbar.len(), x.len())?;
        if linalg::linf(&(x - &self.xbar)) >= self.eps {
            return Ok(StructuredSet::Empty { dim: x.len() });
        }
        self.base.eval(x)?.intersect_linf_ball(&self.ubar, self.eps)
    }

    /// `J_{γA_ε}(z)` when `z` lies in the local union, where it coincides with
    /// the resolvent of the base operator; `None` otherwise.
    pub fn resolvent(&self, z: &DVector<f64>, gamma: f64, tol: f64) -> Result<Option<DVector<f64>>> {
        let x = self.base.resolvent(z, gamma)?;
        if linalg::linf(&(&x - &self.xbar)) >= self.eps {
            return Ok(None);
        }
        let u = (z - &x) / gamma;
        let value = self.eval(&x)?;
        Ok(value.contains(&u, tol)?.then_some(x))
    }
}

/// Outcome of [`check_continuity_along_manifold`].
#[derive(Debug, Clone)]
pub struct ContinuityCheck {
    pub continuous: bool,
    /// First sampled point violating the bound.
    pub witness: Option<DVector<f64>>,
    /// Slope estimated on the outer shell.
    pub slope: f64,
}

/// Samples `x ∈ M` on shells of radius `radius·2^{-k}` around `xbar` and
/// requires the face parameters of `A(x)` to approach those of `A(xbar)`:
/// `face_dist ≤ tol + 2·L̂·‖x − x̄‖∞`, with `L̂` the largest ratio observed on
/// the outer shell. A jump keeps `face_dist` bounded away from zero on the
/// inner shells and is reported with a witness.
pub fn check_continuity_along_manifold(
    op: &PartlySmoothOperator,
    m: &ManifoldDesc,
    xbar: &DVector<f64>,
    radius: f64,
    n_samples: usize,
    tol: f64,
    seed: u64,
) -> Result<ContinuityCheck> {
    positive(radius, "radius")?;
    let reference = op.eval(xbar)?;
    let mut rng = sampling::rng(seed);
    let shells = 6;
    let per_shell = n_samples.div_ceil(shells).max(1);
    let mut slope: f64 = 0.0;
    for k in 0..shells {
        let r = radius / f64::from(1u32 << k);
        for _ in 0..per_shell {
            let x = m.sample_near(xbar, r, &mut rng)?;
            let dx = linalg::linf(&(&x - xbar));
            let fd = op.eval(&x)?.face_distance(&reference);
            if k == 0 {
                if dx > 0.0 {
                    slope = slope.max(fd / dx);
                }
                if !fd.is_finite() {
                    return Ok(ContinuityCheck {
                        continuous: false,
                        witness: Some(x),
                        slope,
                    });
                }
            } else if fd > tol + 2.0 * slope * dx {
                return Ok(ContinuityCheck {
                    continuous: false,
                    witness: Some(x),
                    slope,
                });
            }
        }
    }
    Ok(ContinuityCheck {
        continuous: true,
        witness: None,
        slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    #[test]
    fn l1_eval_at_sparse_point() {
        let a = Op::l1(1.0).unwrap();
        let s = a.eval(&v(&[2.0, 0.0, 0.0])).unwrap();
        assert_eq!(
            s,
            StructuredSet::BoxProduct {
                lo: v(&[1.0, -1.0, -1.0]),
                hi: v(&[1.0, 1.0, 1.0])
            }
        );
    }

    #[test]
    fn l0_eval_is_unbounded_off_support() {
        let s = Op::l0(1.0).unwrap().eval(&v(&[1.0, 0.0])).unwrap();
        assert_eq!(
            s,
            StructuredSet::BoxProduct {
                lo: v(&[0.0, f64::NEG_INFINITY]),
                hi: v(&[0.0, f64::INFINITY])
            }
        );
    }

    #[test]
    fn smooth_root_evaluates_to_zero() {
        let c = v(&[1.0, -2.0]);
        let s = Op::Smooth(SmoothMap::shifted_identity(c.clone())).eval(&c).unwrap();
        assert_eq!(s, StructuredSet::singleton(v(&[0.0, 0.0])));
    }

    #[test]
    fn normal_cone_outside_box_is_an_error() {
        let a = Op::normal_cone_box(v(&[0.0, 0.0]), v(&[1.0, 1.0])).unwrap();
        assert!(matches!(a.eval(&v(&[2.0, 0.5])), Err(Error::EmptyDomain { .. })));
        let face = a.eval(&v(&[1.0, 0.5])).unwrap();
        assert_eq!(
            face,
            StructuredSet::BoxProduct {
                lo: v(&[0.0, 0.0]),
                hi: v(&[f64::INFINITY, 0.0])
            }
        );
    }

    #[test]
    fn soft_threshold_example() {
        let x = Op::l1(1.0).unwrap().resolvent(&v(&[3.0, 1.0, 0.5]), 1.0).unwrap();
        assert_eq!(x, v(&[2.0, 0.0, 0.0]));
    }

    #[test]
    fn hard_threshold_example() {
        let x = Op::l0(1.0).unwrap().resolvent(&v(&[1.0, 0.1]), 0.1).unwrap();
        assert_eq!(x, v(&[1.0, 0.0]));
        // tie goes to zero
        let t = (2.0f64 * 0.5).sqrt();
        let y = Op::l0(1.0).unwrap().resolvent(&v(&[t]), 0.5).unwrap();
        assert_eq!(y, v(&[0.0]));
    }

    #[test]
    fn svt_example() {
        let mut rng = sampling::rng(5);
        let q1 = sampling::random_orthogonal(&mut rng, 3);
        let q2 = sampling::random_orthogonal(&mut rng, 3);
        let z = &q1 * DMatrix::from_diagonal(&v(&[3.0, 1.0, 0.5])) * q2.transpose();
        let a = Op::nuclear(1.0, 3, 3).unwrap();
        let x = linalg::unflatten(&a.resolvent(&linalg::flatten(&z), 1.0).unwrap(), 3, 3);
        let expect = &q1 * DMatrix::from_diagonal(&v(&[2.0, 0.0, 0.0])) * q2.transpose();
        assert!((x - expect).norm() < 1e-12);
    }

    #[test]
    fn active_manifolds() {
        let a = Op::l1(1.0).unwrap();
        let tol = Tolerance::structural();
        assert_eq!(
            a.active_manifold(&v(&[2.0, 0.0, 0.0]), tol).unwrap(),
            ManifoldDesc::fixed_support([0], 3).unwrap()
        );
        let p = Op::product(vec![(Op::l1(1.0).unwrap(), 2), (Op::l1(1.0).unwrap(), 2)]).unwrap();
        assert_eq!(
            p.active_manifold(&v(&[1.0, 0.0, 0.0, 2.0]), tol).unwrap(),
            ManifoldDesc::product(vec![
                ManifoldDesc::fixed_support([0], 2).unwrap(),
                ManifoldDesc::fixed_support([1], 2).unwrap()
            ])
        );
        let pert = Op::perturbed(
            Op::l1(1.0).unwrap(),
            SmoothMap::shifted_identity(v(&[7.0, 0.5, 0.5])),
        )
        .unwrap();
        assert_eq!(
            pert.active_manifold(&v(&[6.0, 0.0, 0.0]), tol).unwrap(),
            ManifoldDesc::fixed_support([0], 3).unwrap()
        );
        let smooth = Op::Smooth(SmoothMap::shifted_identity(v(&[1.0])));
        assert!(matches!(
            smooth.active_manifold(&v(&[1.0]), tol),
            Err(Error::NoManifold(_))
        ));
    }

    #[test]
    fn localization_examples() {
        let a = Op::l1(1.0).unwrap();
        let loc = a.localize(&v(&[2.0, 0.0, 0.0]), &v(&[1.0, 0.0, 0.0]), 0.5).unwrap();
        assert_eq!(
            loc.eval(&v(&[2.0, 0.0, 0.0])).unwrap(),
            StructuredSet::BoxProduct {
                lo: v(&[1.0, -0.5, -0.5]),
                hi: v(&[1.0, 0.5, 0.5])
            }
        );
        assert!(loc.eval(&v(&[2.6, 0.0, 0.0])).unwrap().is_empty());
        assert!(a.localize(&v(&[2.0, 0.0, 0.0]), &v(&[0.0, 0.0, 0.0]), 0.5).is_err());

        let eps = 0.2;
        let l0 = Op::l0(1.0).unwrap().localize(&v(&[1.0, 0.0]), &v(&[0.0, 0.0]), eps).unwrap();
        assert_eq!(
            l0.eval(&v(&[1.1, 0.0])).unwrap(),
            StructuredSet::BoxProduct {
                lo: v(&[0.0, -eps]),
                hi: v(&[0.0, eps])
            }
        );
    }

    #[test]
    fn perturbed_resolvent_matches_direct_formula() {
        // J_{γ(∂‖·‖₁ + (· − c))}(z) = soft((z + γc)/(1+γ), γ/(1+γ))
        let c = v(&[7.0, 0.5, 0.5]);
        let a = Op::perturbed(Op::l1(1.0).unwrap(), SmoothMap::shifted_identity(c.clone())).unwrap();
        let z = v(&[3.0, -1.0, 0.2]);
        let g = 0.5;
        let x = a.resolvent(&z, g).unwrap();
        let expect = soft_threshold(&((&z + &c * g) / (1.0 + g)), g / (1.0 + g));
        assert!((x - expect).norm() < 1e-15);
    }

    #[test]
    fn unsupported_composite_resolvent() {
        let a = Op::sum(vec![Op::l1(1.0).unwrap(), Op::l0(1.0).unwrap()]).unwrap();
        assert!(matches!(
            a.resolvent(&v(&[1.0]), 1.0),
            Err(Error::NoClosedForm(_))
        ));
    }

    #[test]
    fn callable_resolvent_converges() {
        let grad: GradientFn = Arc::new(|x: &DVector<f64>| x.map(|t| t.atan() + 0.5 * t));
        let s = SmoothMap::callable(2, grad, 1.5, 0.5);
        let z = v(&[2.0, -1.0]);
        let x = s.resolvent(&z, 0.7).unwrap();
        let r = &x + s.apply(&x).unwrap() * 0.7 - &z;
        assert!(r.norm() < 1e-11);
    }

    #[test]
    fn continuity_examples() {
        let a = Op::l1(1.0).unwrap();
        let xbar = v(&[6.0, 0.0, 0.0]);
        let m = ManifoldDesc::fixed_support([0], 3).unwrap();
        let c = check_continuity_along_manifold(&a, &m, &xbar, 0.5, 60, 1e-12, 1).unwrap();
        assert!(c.continuous);

        let mut rng = sampling::rng(2);
        let q1 = sampling::random_orthogonal(&mut rng, 3);
        let q2 = sampling::random_orthogonal(&mut rng, 3);
        let xb = &q1 * DMatrix::from_diagonal(&v(&[2.0, 0.0, 0.0])) * q2.transpose();
        let nuc = Op::nuclear(1.0, 3, 3).unwrap();
        let mr = ManifoldDesc::fixed_rank(1, 3, 3).unwrap();
        let c = check_continuity_along_manifold(&nuc, &mr, &linalg::flatten(&xb), 0.1, 60, 1e-6, 3)
            .unwrap();
        assert!(c.continuous);

        // M crosses the kink of |x₁|: the value jumps at the origin
        let line = ManifoldDesc::affine(v(&[0.0, 0.0]), DMatrix::from_column_slice(2, 1, &[1.0, 0.0]))
            .unwrap();
        let c = check_continuity_along_manifold(&a, &line, &v(&[0.0, 0.0]), 0.5, 60, 1e-6, 4).unwrap();
        assert!(!c.continuous);
        assert!(c.witness.is_some());
    }
}
