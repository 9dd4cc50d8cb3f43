#![allow(dead_code)]

use pssso_core::sampling::{self, SeededRng};
use pssso_core::{DMatrix, DVector, StructuredSet};
use rand::Rng;

pub fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(x)
}

pub fn columns(q: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    q.columns(0, k).into_owned()
}

pub fn random_box(rng: &mut SeededRng, n: usize) -> StructuredSet {
    let lo = sampling::gaussian_vector(rng, n);
    let width = DVector::from_fn(n, |_, _| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.1..2.0) });
    StructuredSet::boxed(lo.clone(), lo + width).unwrap()
}

pub fn random_affine_box(rng: &mut SeededRng, n: usize) -> StructuredSet {
    let k = rng.random_range(1..=n);
    let dirs = columns(&sampling::random_orthogonal(rng, n), k);
    let lo = sampling::gaussian_vector(rng, k);
    let hi = &lo + DVector::from_fn(k, |_, _| rng.random_range(0.1..2.0));
    StructuredSet::affine_plus_box(sampling::gaussian_vector(rng, n), dirs, lo, hi).unwrap()
}

pub fn random_spectral(rng: &mut SeededRng) -> StructuredSet {
    let rows = rng.random_range(2..=4);
    let cols = rng.random_range(2..=4);
    let r = rng.random_range(0..rows.min(cols));
    let u = columns(&sampling::random_orthogonal(rng, rows), r);
    let w = columns(&sampling::random_orthogonal(rng, cols), r);
    StructuredSet::spectral(u, w, rng.random_range(0.5..2.0)).unwrap()
}

pub fn random_linear_image(rng: &mut SeededRng, n: usize) -> StructuredSet {
    let k = rng.random_range(1..=n);
    let g = sampling::gaussian_matrix(rng, n, k);
    let lo = sampling::uniform_vector(rng, k, -1.0, 0.0);
    let hi = sampling::uniform_vector(rng, k, 0.1, 1.0);
    StructuredSet::linear_image_of(sampling::gaussian_vector(rng, n), g, lo, hi).unwrap()
}

/// Random set of the given variant index:
/// 0 box, 1 point, 2 affine-plus-box, 3 spectral, 4 linear image,
/// 5 product, 6 clipped spectral.
pub fn random_set(rng: &mut SeededRng, variant: usize) -> StructuredSet {
    let n = rng.random_range(1..=4);
    match variant {
        0 => random_box(rng, n),
        1 => StructuredSet::singleton(sampling::gaussian_vector(rng, n)),
        2 => random_affine_box(rng, n.max(2)),
        3 => random_spectral(rng),
        4 => random_linear_image(rng, n.max(2)),
        5 => StructuredSet::product(vec![random_spectral(rng), random_box(rng, n)]),
        _ => {
            let s = random_spectral(rng);
            let c = s.center().unwrap();
            let lo = c.map(|x| x - 0.6);
            let hi = c.map(|x| x + 0.4);
            s.intersect_box(&lo, &hi).unwrap()
        }
    }
}

/// A member of `s` pushed by Gaussian noise of a random scale (zero with
/// probability 1/4).
pub fn probe(rng: &mut SeededRng, s: &StructuredSet) -> Option<DVector<f64>> {
    let base = s.sample(rng, 3.0)?;
    let scale = [0.0, 0.01, 0.3, 1.0][rng.random_range(0..4)];
    let noise = sampling::gaussian_vector(rng, base.len());
    Some(base + noise * scale)
}

pub fn soft(z: f64, t: f64) -> f64 {
    z.signum() * (z.abs() - t).max(0.0)
}

/// Random supported local-union instance in `R^3`:
/// 0 `ℓ1`, 1 `ℓ0`, 2 box normal cone, 3 `ℓ1 + q·x + c`.
/// With `degenerate`, one off-support dual coordinate sits on the boundary.
pub fn random_union_spec(
    r: &mut SeededRng,
    kind: usize,
    degenerate: bool,
) -> pssso_core::LocalUnionSpec {
    use pssso_core::{ManifoldDesc, PartlySmoothOperator as Op, SmoothMap, Tolerance};
    let n = 3;
    let gamma: f64 = r.random_range(0.1..2.0);
    let eps: f64 = r.random_range(0.05..0.4);
    let mu: f64 = r.random_range(0.2..2.0);
    let sign = |r: &mut SeededRng| if r.random_bool(0.5) { 1.0 } else { -1.0 };
    let mut support: Vec<usize> = (0..n).filter(|_| r.random_bool(0.5)).collect();
    if degenerate && support.len() == n {
        support.pop();
    }
    let on = |i: usize| support.contains(&i);
    // ℓ0 instances stay where the hard-threshold prox inverts I + γA_ε
    let floor = if kind == 1 { (2.0 * gamma * mu).sqrt() + eps } else { 0.0 };
    let mut xbar = DVector::zeros(n);
    for &i in &support {
        xbar[i] = sign(r) * (floor + r.random_range(0.5..2.0));
    }
    let first_off = (0..n).find(|&i| !on(i));
    let (op, ubar) = match kind {
        1 => {
            let cap = (2.0 * mu / gamma).sqrt() - eps;
            assert!(cap > 0.0);
            let u = DVector::from_fn(n, |i, _| if on(i) { 0.0 } else { r.random_range(-0.9..0.9) * cap });
            (Op::l0(mu).unwrap(), u)
        }
        2 => {
            let lo = DVector::from_element(n, -1.0);
            let hi = DVector::from_element(n, 1.0);
            let mut u = DVector::zeros(n);
            for i in 0..n {
                match r.random_range(0..3) {
                    0 => {
                        xbar[i] = -1.0;
                        u[i] = -r.random_range(0.1..2.0);
                    }
                    1 => {
                        xbar[i] = 1.0;
                        u[i] = r.random_range(0.1..2.0);
                    }
                    _ => xbar[i] = r.random_range(-0.5..0.5),
                }
            }
            if degenerate {
                xbar[0] = 1.0;
                u[0] = 0.0;
            }
            let op = Op::normal_cone_box(lo, hi).unwrap();
            let m = op.active_manifold(&xbar, Tolerance::structural()).unwrap();
            return pssso_core::LocalUnionSpec::new(op, m, xbar, u, gamma, eps).unwrap();
        }
        _ => {
            let mut s = DVector::from_fn(n, |i, _| if on(i) { xbar[i].signum() } else { r.random_range(-0.9..0.9) });
            if let (true, Some(j)) = (degenerate, first_off) {
                s[j] = sign(r);
            }
            if kind == 3 {
                let q = r.random_range(0.1..1.5);
                let c = sampling::gaussian_vector(r, n);
                let u = s * mu + &xbar * q + &c;
                let smooth = SmoothMap::affine(DMatrix::identity(n, n) * q, c).unwrap();
                (Op::perturbed(Op::l1(mu).unwrap(), smooth).unwrap(), u)
            } else {
                (Op::l1(mu).unwrap(), s * mu)
            }
        }
    };
    let m = ManifoldDesc::fixed_support(support, n).unwrap();
    pssso_core::LocalUnionSpec::new(op, m, xbar, ubar, gamma, eps).unwrap()
}
