//! Point clouds of local unions `U = ∪ (x + γA_ε(x))` for small instances,
//! plus the proximal-point trajectory `x⁽ᵏ⁾ + γu⁽ᵏ⁾` entering `U`.

use rand::Rng;
use serde::Serialize;

use pssso_core::geometry::{brute_force_radius, identification_radius, union_membership, LocalUnionSpec, MEMBERSHIP_TOL};
use pssso_core::{sampling, DVector, Norm, PartlySmoothOperator, SmoothMap, Tolerance};

use super::common::base_tolerances;
use crate::config::{self, ExperimentConfig, Preset};
use crate::output::{line_chart, num, Artifact, Check, Series, Table};
use crate::{CliError, Outcome};

/// Offset `c` of the shifted identity in the three-dimensional example.
const SHIFT: [f64; 3] = [7.0, 0.5, 0.5];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub eps: f64,
    pub gamma: f64,
    pub x0: Vec<f64>,
    pub iterations: usize,
    pub box_dims: Vec<usize>,
    pub cloud_points: usize,
    pub seed: u64,
    /// Brute-force radius march: directions and step.
    pub brute_dirs: usize,
    pub brute_step: f64,
}

impl Settings {
    pub fn desk() -> Self {
        Settings {
            eps: 0.5,
            gamma: 1.0,
            x0: vec![3.0, 2.0, -2.0],
            iterations: 12,
            box_dims: vec![2, 3],
            cloud_points: 500,
            seed: 1,
            brute_dirs: 200,
            brute_step: 1e-3,
        }
    }

    pub fn paper() -> Self {
        Settings {
            cloud_points: 4000,
            brute_dirs: 500,
            ..Self::desk()
        }
    }

    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let mut s = match cfg.preset {
            Preset::Desk => Self::desk(),
            Preset::Paper => Self::paper(),
        };
        let u = &cfg.union;
        if let Some(e) = u.eps {
            s.eps = config::positive("union.eps", e)?;
        }
        if let Some(x0) = &u.x0 {
            if x0.len() != 3 || x0.iter().any(|v| !v.is_finite()) {
                return Err(CliError::Config("union.x0 must hold three finite numbers".into()));
            }
            s.x0 = x0.clone();
        }
        if let Some(dims) = &u.box_dims {
            if let Some(d) = dims.iter().find(|&&d| !(2..=3).contains(&d)) {
                return Err(CliError::Config(format!(
                    "union.box_dims: only 2-D and 3-D instances are supported, got {d}"
                )));
            }
            s.box_dims = dims.clone();
        }
        if let Some(k) = u.cloud_points {
            s.cloud_points = config::at_least("union.cloud_points", k, 1)?;
        }
        if let Some(g) = cfg.solver.gamma {
            s.gamma = config::positive("solver.gamma", g)?;
        }
        if let Some(k) = cfg.solver.max_iter {
            s.iterations = config::at_least("solver.max_iter", k, 3)?;
        }
        if let Some(seed) = cfg.seeds.as_ref().and_then(|v| v.first()) {
            s.seed = *seed;
        }
        Ok(s)
    }
}

fn vec_cols(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

fn cloud_table(n: usize) -> Table {
    let mut header = vec_cols("x", n);
    header.extend(vec_cols("u", n));
    header.extend(vec_cols("z", n));
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    Table::new(&refs)
}

/// Samples of `(x, u, x + γu)` with `x ∈ M`, `‖x − x̄‖∞ < ε`, `u ∈ A_ε(x)`.
fn sample_cloud(spec: &LocalUnionSpec, count: usize, rng: &mut impl Rng) -> Result<Vec<[DVector<f64>; 3]>, CliError> {
    let local = spec.localized();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let x = spec.manifold.sample_near(&spec.xbar, spec.eps * 0.999, rng)?;
        let Some(u) = local.eval(&x)?.sample(rng, spec.eps) else {
            continue;
        };
        let z = &x + &u * spec.gamma;
        out.push([x, u, z]);
    }
    Ok(out)
}

fn push_cloud(t: &mut Table, cloud: &[[DVector<f64>; 3]]) {
    for [x, u, z] in cloud {
        t.push(x.iter().chain(u.iter()).chain(z.iter()).map(|&v| num(v)).collect());
    }
}

/// `z` and its coordinate neighbours at distance `h` all lie in `U`.
fn interior(spec: &LocalUnionSpec, z: &DVector<f64>, h: f64) -> Result<bool, CliError> {
    if union_membership(spec, z, MEMBERSHIP_TOL)?.is_none() {
        return Ok(false);
    }
    for i in 0..z.len() {
        for sign in [-1.0, 1.0] {
            let mut p = z.clone();
            p[i] += sign * h;
            if union_membership(spec, &p, MEMBERSHIP_TOL)?.is_none() {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// `∂‖·‖₁ + (· − c)` at `x̄ = soft(c, 1)` with `ū = 0`.
pub fn example_spec(eps: f64, gamma: f64) -> Result<LocalUnionSpec, CliError> {
    let c = DVector::from_row_slice(&SHIFT);
    let op = PartlySmoothOperator::perturbed(PartlySmoothOperator::l1(1.0)?, SmoothMap::shifted_identity(c.clone()))?;
    let xbar = c.map(|v| v.signum() * (v.abs() - 1.0).max(0.0));
    let m = op.active_manifold(&xbar, Tolerance::structural())?;
    Ok(LocalUnionSpec::new(op, m, xbar, DVector::zeros(3), gamma, eps)?)
}

#[derive(Debug, Clone, Serialize)]
struct TrajectoryPoint {
    k: usize,
    z: Vec<f64>,
    in_union: bool,
    interior: bool,
}

#[derive(Debug, Clone, Serialize)]
struct BoxReport {
    dim: usize,
    kind: &'static str,
    xbar: Vec<f64>,
    ubar: Vec<f64>,
    eps: f64,
    radius: f64,
    brute_force_radius: f64,
    cloud_min: Vec<f64>,
    cloud_max: Vec<f64>,
}

fn bounds(cloud: &[[DVector<f64>; 3]], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for p in cloud {
        for i in 0..n {
            lo[i] = lo[i].min(p[2][i]);
            hi[i] = hi[i].max(p[2][i]);
        }
    }
    (lo, hi)
}

pub fn run(s: &Settings, emit_svg: bool) -> Result<Outcome, CliError> {
    let mut out = Outcome::default();
    out.tolerances = base_tolerances();
    out.tolerances.insert("brute_force_step".into(), s.brute_step);
    out.deviations.push("the trajectory is the proximal-point iteration x⁽ᵏ⁺¹⁾ = J_{γA}(x⁽ᵏ⁾), whose points x⁽ᵏ⁾ + γu⁽ᵏ⁾ equal x⁽ᵏ⁻¹⁾".into());
    out.deviations.push("balls in the localization are ℓ∞ balls".into());
    out.deviations.push("coordinates are 0-based".into());

    // three-dimensional example
    let spec = example_spec(s.eps, s.gamma)?;
    let zbar = spec.z_bar();
    let d = identification_radius(&spec, Norm::Linf)?;
    let mut rng = sampling::rng_stream(s.seed, 21);
    let cloud = sample_cloud(&spec, s.cloud_points, &mut rng)?;
    let mut misses = 0;
    for p in &cloud {
        if union_membership(&spec, &p[2], MEMBERSHIP_TOL)?.is_none() {
            misses += 1;
        }
    }
    out.checks.push(Check::new(
        "example cloud lies in U",
        misses == 0,
        format!("{misses} of {} sampled points rejected", cloud.len()),
    ));
    let mut t = cloud_table(3);
    push_cloud(&mut t, &cloud);
    out.artifacts.push(t.to_artifact("example_cloud.csv"));

    let h = 1e-6;
    let mut x = DVector::from_row_slice(&s.x0);
    let mut traj = Vec::with_capacity(s.iterations);
    for k in 1..=s.iterations {
        let next = spec.op.resolvent(&x, s.gamma)?;
        // x⁽ᵏ⁾ + γu⁽ᵏ⁾ with u⁽ᵏ⁾ = (x⁽ᵏ⁻¹⁾ − x⁽ᵏ⁾)/γ
        let z = x.clone();
        traj.push(TrajectoryPoint {
            k,
            in_union: union_membership(&spec, &z, MEMBERSHIP_TOL)?.is_some(),
            interior: interior(&spec, &z, h)?,
            z: z.iter().copied().collect(),
        });
        x = next;
    }
    let outside_first_two = traj.iter().take(2).all(|p| !p.in_union);
    let inside_from_third = traj.iter().skip(2).all(|p| p.interior);
    out.checks.push(Check::new(
        "trajectory points 1-2 outside U",
        outside_first_two,
        format!("membership of the first points: {:?}", traj.iter().take(2).map(|p| p.in_union).collect::<Vec<_>>()),
    ));
    out.checks.push(Check::new(
        "trajectory inside int U from point 3",
        inside_from_third,
        format!(
            "first interior point {:?}",
            traj.iter().find(|p| p.interior).map(|p| p.k)
        ),
    ));
    let mut tt = Table::new(&["k", "z1", "z2", "z3", "in_union", "interior"]);
    for p in &traj {
        tt.push(vec![
            p.k.to_string(),
            num(p.z[0]),
            num(p.z[1]),
            num(p.z[2]),
            u8::from(p.in_union).to_string(),
            u8::from(p.interior).to_string(),
        ]);
    }
    out.artifacts.push(tt.to_artifact("example_trajectory.csv"));
    let mut zt = Table::new(&["instance", "z1", "z2", "z3", "radius"]);
    zt.push(vec!["example".into(), num(zbar[0]), num(zbar[1]), num(zbar[2]), num(d)]);

    // box indicators
    let mut reports = Vec::new();
    for &n in &s.box_dims {
        let lo = DVector::zeros(n);
        let hi = DVector::from_element(n, 1.0);
        let op = PartlySmoothOperator::normal_cone_box(lo, hi.clone())?;
        let eps = 0.25;
        let cases = [
            ("interior", DVector::from_element(n, 0.5), DVector::zeros(n)),
            ("face", DVector::from_fn(n, |i, _| if i == 0 { 1.0 } else { 0.5 }), DVector::from_fn(n, |i, _| f64::from(u8::from(i == 0)))),
        ];
        for (kind, xbar, ubar) in cases {
            let m = op.active_manifold(&xbar, Tolerance::structural())?;
            let spec = LocalUnionSpec::new(op.clone(), m, xbar.clone(), ubar.clone(), s.gamma, eps)?;
            let radius = identification_radius(&spec, Norm::L2)?;
            let brute = brute_force_radius(&spec, Norm::L2, s.brute_dirs, s.brute_step)?;
            let mut rng = sampling::rng_stream(s.seed, 22 + n as u64);
            let cloud = sample_cloud(&spec, s.cloud_points, &mut rng)?;
            let (cmin, cmax) = bounds(&cloud, n);
            let zb = spec.z_bar();
            match kind {
                "interior" => {
                    let slab = cloud.iter().all(|p| p[1].iter().all(|&v| v == 0.0));
                    out.checks.push(Check::new(
                        format!("{n}-D box interior: U is the ε-slab"),
                        slab && (radius - eps).abs() <= 1e-12,
                        format!("radius {radius}, ε = {eps}, all sampled u = 0: {slab}"),
                    ));
                }
                _ => {
                    let beyond = cloud.iter().all(|p| p[2][0] > hi[0]);
                    let along = (1..=4).all(|j| {
                        let z = &zb + DVector::from_fn(n, |i, _| if i == 0 { 0.05 * j as f64 } else { 0.0 });
                        matches!(union_membership(&spec, &z, MEMBERSHIP_TOL), Ok(Some(_)))
                    });
                    out.checks.push(Check::new(
                        format!("{n}-D box face: U extends along the outward normal"),
                        beyond && along && radius > 0.0,
                        format!("cloud z₁ ∈ [{}, {}], face at {}", cmin[0], cmax[0], hi[0]),
                    ));
                }
            }
            let tol = (0.05 * radius).max(2.0 * s.brute_step);
            out.checks.push(Check::new(
                format!("{n}-D box {kind}: analytic radius matches brute force"),
                (radius - brute).abs() <= tol,
                format!("analytic {radius}, brute force {brute}"),
            ));
            let mut t = cloud_table(n);
            push_cloud(&mut t, &cloud);
            out.artifacts.push(t.to_artifact(format!("box{n}_{kind}_cloud.csv")));
            let mut row = vec![format!("box{n}_{kind}")];
            row.extend((0..3).map(|i| if i < n { num(zb[i]) } else { String::new() }));
            row.push(num(radius));
            zt.push(row);
            reports.push(BoxReport {
                dim: n,
                kind,
                xbar: xbar.iter().copied().collect(),
                ubar: ubar.iter().copied().collect(),
                eps,
                radius,
                brute_force_radius: brute,
                cloud_min: cmin,
                cloud_max: cmax,
            });
        }
    }
    out.artifacts.push(zt.to_artifact("zbar.csv"));
    out.artifacts.push(Artifact::json(
        "union_report.json",
        &serde_json::json!({
            "example": {
                "xbar": spec.xbar.as_slice(),
                "ubar": spec.ubar.as_slice(),
                "zbar": zbar.as_slice(),
                "eps": spec.eps,
                "gamma": spec.gamma,
                "radius": d,
                "trajectory": traj,
            },
            "boxes": reports,
        }),
    ));
    out.summary = serde_json::json!({
        "example_radius": d,
        "first_interior_point": traj.iter().find(|p| p.interior).map(|p| p.k),
    });
    if emit_svg {
        let path: Vec<(f64, f64)> = traj.iter().map(|p| (p.z[0], p.z[1])).collect();
        let (a, b) = (zbar[0] - s.gamma * s.eps - s.eps, zbar[0] + s.gamma * s.eps + s.eps);
        // u₂ ∈ ([−1, 1] − c₂) ∩ [−ε, ε]
        let (lo, hi) = (-s.gamma * s.eps.min(1.0 + SHIFT[1]), s.gamma * s.eps.min(1.0 - SHIFT[1]));
        let frame = vec![(a, lo), (b, lo), (b, hi), (a, hi), (a, lo)];
        out.artifacts.push(Artifact::text(
            "example_trajectory.svg",
            line_chart(
                "Trajectory x + γu entering U (z₁, z₂ projection)",
                "z1",
                "z2",
                &[Series::new("trajectory", path), Series::new("U", frame).dashed()],
                false,
            ),
        ));
    }
    Ok(out)
}
