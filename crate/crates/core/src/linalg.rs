//! Small dense linear-algebra helpers. Matrices are nalgebra types; the
//! SVD and symmetric eigensolver run on faer.

use faer::{Mat, Side};
use nalgebra::{DMatrix, DVector};

/// Relative threshold used for support and rank detection.
pub const STRUCTURE_REL_TOL: f64 = 1e-10;

/// Thin SVD with singular values sorted in decreasing order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl Svd {
    pub fn new(m: &DMatrix<f64>) -> Self {
        let (p, q) = m.shape();
        let k = p.min(q);
        if k == 0 {
            return Svd {
                u: DMatrix::zeros(p, 0),
                s: DVector::zeros(0),
                v: DMatrix::zeros(q, 0),
            };
        }
        let svd = to_faer(m).thin_svd().expect("SVD of a finite matrix");
        let (u, v) = (svd.U(), svd.V());
        let s = svd.S().column_vector();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
        Svd {
            u: DMatrix::from_fn(p, k, |i, j| u[(i, order[j])]),
            s: DVector::from_fn(k, |j, _| s[order[j]]),
            v: DMatrix::from_fn(q, k, |i, j| v[(i, order[j])]),
        }
    }

    /// Minimum-norm least-squares solution of `M t = b`, ignoring singular
    /// values below `rel·σ_max`.
    pub fn solve(&self, b: &DVector<f64>, rel: f64) -> DVector<f64> {
        let cut = rel * self.max_singular_value();
        let mut coef = self.u.tr_mul(b);
        for (c, &s) in coef.iter_mut().zip(self.s.iter()) {
            *c = if s > cut && s > 0.0 { *c / s } else { 0.0 };
        }
        &self.v * coef
    }

    pub fn max_singular_value(&self) -> f64 {
        self.s.iter().copied().fold(0.0, f64::max)
    }

    /// Number of singular values above `STRUCTURE_REL_TOL * (1 + σ_max)`.
    pub fn structural_rank(&self) -> usize {
        let tol = structure_tol(self.max_singular_value());
        self.s.iter().filter(|&&s| s > tol).count()
    }

    /// Leading `r` left and right singular vectors.
    pub fn leading(&self, r: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.u.columns(0, r).into_owned(), self.v.columns(0, r).into_owned())
    }

    /// `U diag(f(s)) Vᵀ`.
    pub fn recompose_with(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let scaled = DVector::from_iterator(self.s.len(), self.s.iter().map(|&s| f(s)));
        let mut us = self.u.clone();
        for (j, mut col) in us.column_iter_mut().enumerate() {
            col *= scaled[j];
        }
        us * self.v.transpose()
    }
}

/// Zero threshold for an entry or singular value given the scale of the object.
pub fn structure_tol(scale: f64) -> f64 {
    STRUCTURE_REL_TOL * (1.0 + scale.abs())
}

pub fn linf(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    Svd::new(m).max_singular_value()
}

/// Rank with singular values below `rel * σ_max` treated as zero.
pub fn numerical_rank(m: &DMatrix<f64>, rel: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let svd = Svd::new(m);
    let smax = svd.max_singular_value();
    if smax == 0.0 {
        return 0;
    }
    svd.s.iter().filter(|&&s| s > rel * smax).count()
}

/// Column-major flattening.
pub fn flatten(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

pub fn unflatten(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

pub fn is_orthonormal(m: &DMatrix<f64>, tol: f64) -> bool {
    let g = m.transpose() * m;
    let k = g.nrows();
    (g - DMatrix::identity(k, k)).iter().all(|x| x.abs() <= tol)
}

/// Orthonormal basis of the orthogonal complement of the column space of a
/// column-orthonormal `basis`.
pub fn orthonormal_complement(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let p = basis.nrows();
    let r = basis.ncols();
    if r == 0 {
        return DMatrix::identity(p, p);
    }
    let proj = DMatrix::identity(p, p) - basis * basis.transpose();
    let (vals, vecs) = symmetric_eigen(&proj);
    let mut idx: Vec<usize> = (0..p).collect();
    idx.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    let keep: Vec<usize> = idx.into_iter().take(p - r).collect();
    DMatrix::from_fn(p, keep.len(), |i, j| vecs[(i, keep[j])])
}

fn to_faer(m: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Eigenvalues and eigenvectors (as columns) of a symmetric matrix.
pub fn symmetric_eigen(q: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = q.nrows();
    let eig = to_faer(q)
        .self_adjoint_eigen(Side::Lower)
        .expect("eigendecomposition of a finite symmetric matrix");
    let s = eig.S().column_vector();
    let u = eig.U();
    (
        DVector::from_fn(n, |i, _| s[i]),
        DMatrix::from_fn(n, n, |i, j| u[(i, j)]),
    )
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn symmetric_eigen_range(q: &DMatrix<f64>) -> (f64, f64) {
    if q.is_empty() {
        return (0.0, 0.0);
    }
    let sym = (q + q.transpose()) * 0.5;
    let (vals, _) = symmetric_eigen(&sym);
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Largest eigenvalue of `scale·AᵀA` by power iteration, without forming the
/// Gram matrix.
pub fn gram_max_eigenvalue(a: &DMatrix<f64>, scale: f64) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_033_988_7).fract());
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..500 {
        let w = a.tr_mul(&(a * &v)) * scale;
        let nw = w.norm();
        if nw == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / nw;
        if (next - lambda).abs() <= 1e-13 * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    // power iteration approaches from below; pad slightly so step sizes stay admissible
    lambda * (1.0 + 1e-9)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svd_sorted_and_reconstructs() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.5, -1.0, 3.0, 0.0]);
        let svd = Svd::new(&m);
        assert!(svd.s[0] >= svd.s[1]);
        let back = svd.recompose_with(|s| s);
        assert!((back - &m).norm() <= 1e-12 * m.norm());
    }

    #[test]
    fn complement_is_orthogonal() {
        let b = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let c = orthonormal_complement(&b);
        assert_eq!(c.ncols(), 2);
        assert!((b.transpose() * &c).norm() < 1e-12);
        assert!(is_orthonormal(&c, 1e-12));
    }

    #[test]
    fn power_iteration_matches_eigen() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.5, -1.0, 3.0, 0.0]);
        let (_, max) = symmetric_eigen_range(&(a.transpose() * &a));
        let pi = gram_max_eigenvalue(&a, 1.0);
        assert!((pi - max).abs() < 1e-7 * max);
    }

    #[test]
    fn rank_detection() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert_eq!(numerical_rank(&m, 1e-10), 1);
    }
}
