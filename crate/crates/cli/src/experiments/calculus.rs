//! Checks of the calculus rules on seeded small instances: the sum rule on
//! coordinate manifolds, the qualification condition of linear
//! precomposition, and monotonicity of the saddle-point and
//! variational-inequality operators.

use std::collections::BTreeSet;

use rand::Rng;
use serde::Serialize;

use pssso_core::{linalg, sampling, DMatrix, DVector, ManifoldDesc, PartlySmoothOperator, SmoothMap, Tolerance};

use super::common::{base_tolerances, fmt_set};
use crate::config::{self, ExperimentConfig};
use crate::output::{num, Artifact, Check, Table};
use crate::{CliError, Outcome};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub pairs: usize,
    pub monotonicity_samples: usize,
    pub max_dim: usize,
    pub seed: u64,
    /// Slack in `⟨Δz, Δw⟩ ≥ −tol·(1 + ‖Δz‖‖Δw‖)`.
    pub monotonicity_tol: f64,
}

impl Settings {
    pub fn desk() -> Self {
        Settings {
            pairs: 100,
            monotonicity_samples: 10_000,
            max_dim: 8,
            seed: 1,
            monotonicity_tol: 1e-12,
        }
    }

    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        // both presets share the desk sizes
        let mut s = Self::desk();
        let c = &cfg.calculus;
        if let Some(p) = c.pairs {
            s.pairs = config::at_least("calculus.pairs", p, 2)?;
        }
        if let Some(k) = c.monotonicity_samples {
            s.monotonicity_samples = config::at_least("calculus.monotonicity_samples", k, 1)?;
        }
        if let Some(d) = c.max_dim {
            s.max_dim = config::at_least("calculus.max_dim", d, 3)?;
        }
        if let Some(seed) = cfg.seeds.as_ref().and_then(|v| v.first()) {
            s.seed = *seed;
        }
        Ok(s)
    }
}

fn normal_basis(m: &ManifoldDesc, x: &DVector<f64>) -> Result<DMatrix<f64>, CliError> {
    let (_, n) = m.projectors(x, Tolerance::structural())?;
    Ok(n.to_matrix())
}

fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((0, a.ncols()), b.shape()).copy_from(b);
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct PairResult {
    pub n: usize,
    pub s1: BTreeSet<usize>,
    pub s2: BTreeSet<usize>,
    pub transversal_by_construction: bool,
    pub transversal_reported: bool,
    pub normal_dim_intersection: usize,
    pub normal_dim_sum: usize,
    pub codim_additive: bool,
}

impl PairResult {
    fn ok(&self) -> bool {
        self.transversal_reported == self.transversal_by_construction
            && self.normal_dim_intersection == self.normal_dim_sum
            && self.codim_additive == self.transversal_by_construction
    }
}

/// Supports with `S₁ ∩ S₂ ≠ ∅` whose union is everything (`transversal`) or
/// misses at least one coordinate.
fn random_pair(rng: &mut impl Rng, max_dim: usize, transversal: bool) -> (usize, BTreeSet<usize>, BTreeSet<usize>) {
    let n = rng.random_range(3..=max_dim);
    let shared = rng.random_range(0..n);
    let missing = if transversal {
        None
    } else {
        Some((shared + rng.random_range(1..n)) % n)
    };
    let mut s1 = BTreeSet::from([shared]);
    let mut s2 = BTreeSet::from([shared]);
    for i in (0..n).filter(|&i| i != shared && Some(i) != missing) {
        match rng.random_range(0..3) {
            0 => {
                s1.insert(i);
            }
            1 => {
                s2.insert(i);
            }
            _ => {
                s1.insert(i);
                s2.insert(i);
            }
        }
    }
    (n, s1, s2)
}

pub fn check_pair(n: usize, s1: &BTreeSet<usize>, s2: &BTreeSet<usize>, transversal: bool, rng: &mut impl Rng) -> Result<PairResult, CliError> {
    let m1 = ManifoldDesc::fixed_support(s1.iter().copied(), n)?;
    let m2 = ManifoldDesc::fixed_support(s2.iter().copied(), n)?;
    let both = m1.intersect(&m2)?;
    let mut x = DVector::zeros(n);
    if let ManifoldDesc::FixedSupport { support, .. } = &both {
        for &i in support {
            x[i] = rng.random_range(0.5..2.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        }
    }
    let n1 = normal_basis(&m1, &x)?;
    let n2 = normal_basis(&m2, &x)?;
    let n12 = normal_basis(&both, &x)?;
    let rel = linalg::STRUCTURE_REL_TOL;
    Ok(PairResult {
        n,
        s1: s1.clone(),
        s2: s2.clone(),
        transversal_by_construction: transversal,
        transversal_reported: m1.transversal_at(&m2, &x)?,
        normal_dim_intersection: linalg::numerical_rank(&n12, rel),
        normal_dim_sum: linalg::numerical_rank(&hcat(&n1, &n2), rel),
        codim_additive: both.codimension() == m1.codimension() + m2.codimension(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct QualificationResult {
    pub n: usize,
    pub violated_by_construction: bool,
    pub normal_dim: usize,
    /// `rank(Gᵀ N)`; the condition holds iff it equals `normal_dim`.
    pub image_rank: usize,
    pub qualified: bool,
    /// Affine dimension of `Gᵀ ∂‖·‖₁(Gz + h)`.
    pub composed_dim: Option<usize>,
}

/// `ker(Gᵀ) ∩ N_M(Gz + h) = {0}` for `A = Gᵀ ∂‖·‖₁(G · + h)`; a violation is
/// built by zeroing a row of `G` at a coordinate off the support of `Gz + h`.
pub fn check_qualification(rng: &mut impl Rng, max_dim: usize, violate: bool) -> Result<QualificationResult, CliError> {
    let n = rng.random_range(3..=max_dim);
    let mut g = sampling::gaussian_matrix(rng, n, n);
    let z = sampling::gaussian_vector(rng, n);
    let mut y = sampling::gaussian_vector(rng, n);
    let zero_at = rng.random_range(0..n);
    for i in 0..n {
        if i == zero_at || rng.random_bool(0.4) {
            y[i] = 0.0;
        }
    }
    if violate {
        g.row_mut(zero_at).fill(0.0);
    }
    let h = &y - &g * &z;
    let gz = &g * &z + &h;
    let m = ManifoldDesc::support_at(&gz, Tolerance::structural());
    let nb = normal_basis(&m, &gz)?;
    let normal_dim = linalg::numerical_rank(&nb, linalg::STRUCTURE_REL_TOL);
    let image_rank = linalg::numerical_rank(&(g.transpose() * &nb), linalg::STRUCTURE_REL_TOL);
    let qualified = image_rank == normal_dim;
    let op = PartlySmoothOperator::precompose(PartlySmoothOperator::l1(1.0)?, g, h)?;
    Ok(QualificationResult {
        n,
        violated_by_construction: violate,
        normal_dim,
        image_rank,
        qualified,
        composed_dim: op.eval(&z)?.affine_dimension(),
    })
}

/// `z ↦ (μ∂‖x‖₁ + Px + Kᵀy, N_{[−1,1]ᵐ}(y) + Qy − Kx)` with `P, Q ⪰ 0`.
pub fn saddle_operator(rng: &mut impl Rng, n: usize, m: usize, mu: f64) -> Result<PartlySmoothOperator, CliError> {
    let a = sampling::gaussian_matrix(rng, n, n);
    let b = sampling::gaussian_matrix(rng, m, m);
    let p = &a * a.transpose() * 0.1;
    let q = &b * b.transpose() * 0.1;
    let k = sampling::gaussian_matrix(rng, m, n);
    let mut lin = DMatrix::zeros(n + m, n + m);
    lin.view_mut((0, 0), (n, n)).copy_from(&p);
    lin.view_mut((0, n), (n, m)).copy_from(&k.transpose());
    lin.view_mut((n, 0), (m, n)).copy_from(&(-&k));
    lin.view_mut((n, n), (m, m)).copy_from(&q);
    let offset = sampling::gaussian_vector(rng, n + m);
    let base = PartlySmoothOperator::product(vec![
        (PartlySmoothOperator::l1(mu)?, n),
        (PartlySmoothOperator::normal_cone_box(DVector::from_element(m, -1.0), DVector::from_element(m, 1.0))?, m),
    ])?;
    Ok(PartlySmoothOperator::perturbed(base, SmoothMap::affine(lin, offset)?)?)
}

/// `(x, y, λ) ↦ (μ∂‖x‖₁ − Cᵀλ, ν∂‖y‖₁ − Dᵀλ, Cx + Dy − e)`.
pub fn vi_operator(rng: &mut impl Rng, n: usize, m: usize, l: usize, mu: f64, nu: f64) -> Result<PartlySmoothOperator, CliError> {
    let c = sampling::gaussian_matrix(rng, l, n);
    let d = sampling::gaussian_matrix(rng, l, m);
    let e = sampling::gaussian_vector(rng, l);
    let dim = n + m + l;
    let mut lin = DMatrix::zeros(dim, dim);
    lin.view_mut((0, n + m), (n, l)).copy_from(&(-c.transpose()));
    lin.view_mut((n, n + m), (m, l)).copy_from(&(-d.transpose()));
    lin.view_mut((n + m, 0), (l, n)).copy_from(&c);
    lin.view_mut((n + m, n), (l, m)).copy_from(&d);
    let mut offset = DVector::zeros(dim);
    offset.rows_mut(n + m, l).copy_from(&(-e));
    let inner = PartlySmoothOperator::product(vec![(PartlySmoothOperator::l1(mu)?, n), (PartlySmoothOperator::l1(nu)?, m)])?;
    // lifts ∂f × ∂g into the (x, y, λ) space with a zero λ block
    let lift = DMatrix::from_fn(n + m, dim, |i, j| f64::from(u8::from(i == j)));
    let nonsmooth = PartlySmoothOperator::precompose(inner, lift, DVector::zeros(n + m))?;
    Ok(PartlySmoothOperator::perturbed(nonsmooth, SmoothMap::affine(lin, offset)?)?)
}

/// Coordinates in `free` are Gaussian with a zero at probability ⅓; those in
/// `boxed` are uniform on `[−1, 1]` with a face at probability ⅓.
fn structured_point(rng: &mut impl Rng, free: usize, boxed: usize, tail: usize) -> DVector<f64> {
    let mut z = DVector::zeros(free + boxed + tail);
    for i in 0..free {
        z[i] = if rng.random_bool(1.0 / 3.0) { 0.0 } else { sampling::gaussian_vector(rng, 1)[0] };
    }
    for i in free..free + boxed {
        z[i] = if rng.random_bool(1.0 / 3.0) {
            if rng.random_bool(0.5) { 1.0 } else { -1.0 }
        } else {
            rng.random_range(-1.0..1.0)
        };
    }
    for i in free + boxed..z.len() {
        z[i] = sampling::gaussian_vector(rng, 1)[0];
    }
    z
}

#[derive(Debug, Clone, Serialize)]
pub struct MonotonicityResult {
    pub operator: &'static str,
    pub samples: usize,
    pub violations: usize,
    pub worst_scaled_product: f64,
}

fn monotonicity(
    name: &'static str,
    op: &PartlySmoothOperator,
    samples: usize,
    tol: f64,
    point: impl Fn(&mut sampling::SeededRng) -> DVector<f64>,
    rng: &mut sampling::SeededRng,
) -> Result<MonotonicityResult, CliError> {
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    let mut k = 0;
    while k < samples {
        let z1 = point(rng);
        let z2 = point(rng);
        let (Some(w1), Some(w2)) = (op.eval(&z1)?.sample(rng, 10.0), op.eval(&z2)?.sample(rng, 10.0)) else {
            continue;
        };
        let dz = &z1 - &z2;
        let dw = &w1 - &w2;
        let scale = 1.0 + dz.norm() * dw.norm();
        let scaled = dz.dot(&dw) / scale;
        worst = worst.min(scaled);
        if scaled < -tol {
            violations += 1;
        }
        k += 1;
    }
    Ok(MonotonicityResult {
        operator: name,
        samples,
        violations,
        worst_scaled_product: worst,
    })
}

pub fn run(s: &Settings) -> Result<Outcome, CliError> {
    let mut out = Outcome::default();
    out.tolerances = base_tolerances();
    out.tolerances.insert("monotonicity".into(), s.monotonicity_tol);
    out.deviations.push("coordinates are 0-based".into());

    // sum rule on coordinate manifolds
    let mut rng = sampling::rng_stream(s.seed, 31);
    let mut pairs = Vec::with_capacity(s.pairs);
    for i in 0..s.pairs {
        let transversal = i % 2 == 0;
        let (n, s1, s2) = random_pair(&mut rng, s.max_dim, transversal);
        pairs.push(check_pair(n, &s1, &s2, transversal, &mut rng)?);
    }
    let bad = pairs.iter().filter(|p| !p.ok()).count();
    out.checks.push(Check::new(
        "sum rule: normal spaces and transversality",
        bad == 0,
        format!("{bad} of {} pairs disagree", pairs.len()),
    ));
    let mut t = Table::new(&["n", "s1", "s2", "transversal", "reported", "dim_n_intersection", "dim_n1_plus_n2", "codim_additive"]);
    for p in &pairs {
        t.push(vec![
            p.n.to_string(),
            fmt_set(&p.s1),
            fmt_set(&p.s2),
            u8::from(p.transversal_by_construction).to_string(),
            u8::from(p.transversal_reported).to_string(),
            p.normal_dim_intersection.to_string(),
            p.normal_dim_sum.to_string(),
            u8::from(p.codim_additive).to_string(),
        ]);
    }
    out.artifacts.push(t.to_artifact("sum_rule_pairs.csv"));

    // qualification before linear precomposition
    let mut rng = sampling::rng_stream(s.seed, 32);
    let mut quals = Vec::with_capacity(s.pairs);
    for i in 0..s.pairs {
        quals.push(check_qualification(&mut rng, s.max_dim, i % 2 == 1)?);
    }
    let misdetected = quals.iter().filter(|q| q.qualified == q.violated_by_construction).count();
    let regular = quals
        .iter()
        .filter(|q| q.qualified)
        .all(|q| q.composed_dim == Some(q.normal_dim));
    out.checks.push(Check::new(
        "precomposition qualification gating",
        misdetected == 0 && regular,
        format!(
            "{misdetected} of {} instances misclassified; qualified images keep dimension dim N: {regular}",
            quals.len()
        ),
    ));
    let mut t = Table::new(&["n", "violated", "dim_normal", "rank_gt_normal", "qualified", "composed_dim"]);
    for q in &quals {
        t.push(vec![
            q.n.to_string(),
            u8::from(q.violated_by_construction).to_string(),
            q.normal_dim.to_string(),
            q.image_rank.to_string(),
            u8::from(q.qualified).to_string(),
            q.composed_dim.map(|d| d.to_string()).unwrap_or_default(),
        ]);
    }
    out.artifacts.push(t.to_artifact("qualification.csv"));

    // monotone operators built from the combinators
    let (n, m, l) = (4, 3, 2);
    let mut rng = sampling::rng_stream(s.seed, 33);
    let saddle = saddle_operator(&mut rng, n, m, 0.5)?;
    let vi = vi_operator(&mut rng, n, m, l, 0.5, 0.3)?;
    let mut results = Vec::new();
    results.push(monotonicity("saddle-point", &saddle, s.monotonicity_samples, s.monotonicity_tol, |r| structured_point(r, n, m, 0), &mut rng)?);
    results.push(monotonicity("variational-inequality", &vi, s.monotonicity_samples, s.monotonicity_tol, |r| structured_point(r, n + m, 0, l), &mut rng)?);
    for r in &results {
        out.checks.push(Check::new(
            format!("{} operator is monotone", r.operator),
            r.violations == 0,
            format!("{} violations in {} pairs, worst scaled ⟨Δz, Δw⟩ = {:e}", r.violations, r.samples, r.worst_scaled_product),
        ));
    }

    // dim A(z) equals the codimension of the active manifold
    let mut mismatches = 0;
    let regular_samples = 200;
    for _ in 0..regular_samples {
        let z = structured_point(&mut rng, n, m, 0);
        let dim = saddle.eval(&z)?.affine_dimension();
        let codim = saddle.active_manifold(&z, Tolerance::structural())?.codimension();
        if dim != Some(codim) {
            mismatches += 1;
        }
    }
    out.checks.push(Check::new(
        "saddle-point operator: dim A(z) = codim M(z)",
        mismatches == 0,
        format!("{mismatches} of {regular_samples} points disagree"),
    ));
    let mut t = Table::new(&["operator", "samples", "violations", "worst_scaled_product"]);
    for r in &results {
        t.push(vec![r.operator.into(), r.samples.to_string(), r.violations.to_string(), num(r.worst_scaled_product)]);
    }
    out.artifacts.push(t.to_artifact("monotonicity.csv"));
    out.artifacts.push(Artifact::json(
        "calculus_report.json",
        &serde_json::json!({
            "pairs": pairs,
            "qualification": quals,
            "monotonicity": results,
            "regularity_mismatches": mismatches,
        }),
    ));
    out.summary = serde_json::json!({
        "pair_disagreements": bad,
        "qualification_misclassified": misdetected,
        "monotonicity_violations": results.iter().map(|r| r.violations).sum::<usize>(),
        "regularity_mismatches": mismatches,
    });
    Ok(out)
}
