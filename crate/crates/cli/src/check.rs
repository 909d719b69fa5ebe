//! The `check` subcommand: seeded randomized invariants of the library.

use std::collections::{BTreeSet, HashSet};
use std::time::Instant;

use lapbem::estimators::{doerfler_mark, EstimatorReport, EstimatorTag};
use lapbem::mesh::{refine, DEFAULT_NEIGHBOR_CAP};
use lapbem::norms::{energy_norm, l2_project, solve_pencil};
use lapbem::operators::{assemble_k, assemble_mass, assemble_v, assemble_w};
use lapbem::potentials::{eval_double_layer, eval_single_layer};
use lapbem::spaces::mass_matrix;
use lapbem::{build_mesh, BoundaryMesh, Curve, DegreeDistribution, DiscreteSpace, MeshSpec, SpaceKind, Vec2};
use nalgebra::DMatrix;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

type Outcome = Result<(), String>;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Outcome {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lib<T>(r: lapbem::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn random_curve(rng: &mut StdRng) -> Curve {
    match rng.random_range(0..4) {
        0 => Curve::circle(0.4),
        1 => Curve::square(0.5),
        2 => Curve::slit(0.6),
        _ => Curve::ClosedPolygon {
            vertices: vec![[0.0, 0.0], [0.5, 0.0], [0.6, 0.3], [0.1, 0.4]],
        },
    }
}

fn random_mesh(rng: &mut StdRng) -> Result<BoundaryMesh, String> {
    let curve = random_curve(rng);
    let mut m = lib(build_mesh(&curve, &MeshSpec::Uniform(rng.random_range(4..9))))?;
    for _ in 0..2 {
        let marked: BTreeSet<usize> = (0..m.num_elements()).filter(|_| rng.random_bool(0.3)).collect();
        m = lib(refine(&m, &marked, DEFAULT_NEIGHBOR_CAP))?.0;
    }
    Ok(m)
}

fn random_degrees(rng: &mut StdRng, n: usize, max: usize) -> DegreeDistribution {
    DegreeDistribution((0..n).map(|_| rng.random_range(0..=max)).collect())
}

fn mesh_invariants(rng: &mut StdRng) -> Outcome {
    let m = random_mesh(rng)?;
    let total: f64 = m.elements().iter().map(|e| e.len()).sum();
    let len = lib(m.curve().length())?;
    ensure((total - len).abs() < 1e-12, || format!("coverage {total} vs {len}"))?;
    ensure(m.max_neighbor_ratio() <= DEFAULT_NEIGHBOR_CAP * (1.0 + 1e-12), || {
        format!("neighbor ratio {}", m.max_neighbor_ratio())
    })?;
    for a in 0..m.num_elements() {
        for b in lib(m.patch(a))? {
            ensure(lib(m.patch(b))?.contains(&a), || format!("patch asymmetry {a} {b}"))?;
        }
    }
    Ok(())
}

fn space_invariants(rng: &mut StdRng) -> Outcome {
    let m = random_mesh(rng)?;
    let n = m.num_elements();
    let degs = random_degrees(rng, n, 4);
    let sum_q: usize = degs.0.iter().sum();
    let s = lib(DiscreteSpace::new(&m, SpaceKind::Sq1, degs.clone()))?;
    let nodes = if m.is_closed() { n } else { n + 1 };
    ensure(s.dim() == nodes + sum_q, || format!("S dimension {}", s.dim()))?;
    let mut seen = HashSet::new();
    let mut hats = vec![0.0; s.dim()];
    for e in 0..n {
        for (k, d) in s.local_dofs(&m, e).into_iter().enumerate() {
            if let Some(d) = d {
                seen.insert(d);
                if k < 2 {
                    hats[d] = 1.0;
                }
            }
        }
    }
    ensure(seen.len() == s.dim(), || "unreached dofs".into())?;
    for _ in 0..20 {
        let e = rng.random_range(0..n);
        let t: f64 = rng.random();
        let v = s.eval(&m, &hats, e, t, false);
        ensure((v - 1.0).abs() < 1e-12, || format!("hat sum {v}"))?;
    }
    let p = lib(DiscreteSpace::new(&m, SpaceKind::Pq, degs))?;
    ensure(p.dim() == n + sum_q, || format!("P dimension {}", p.dim()))
}

fn operator_invariants(rng: &mut StdRng) -> Outcome {
    let curve = if rng.random_bool(0.5) {
        Curve::circle(0.4)
    } else {
        Curve::square(0.5)
    };
    let m = lib(build_mesh(&curve, &MeshSpec::Uniform(rng.random_range(8..17))))?;
    let q = rng.random_range(0..3);
    let p = lib(DiscreteSpace::constant(&m, SpaceKind::Pq, q))?;
    let v = lib(assemble_v(&m, &p))?.matrix;
    let asym = (&v - v.transpose()).amax();
    ensure(asym <= 1e-10 * v.amax(), || format!("V asymmetry {asym}"))?;
    ensure(v.clone().cholesky().is_some(), || "V is not positive definite".into())?;
    let s = lib(DiscreteSpace::constant(&m, SpaceKind::Sq1, q))?;
    let one = s.interpolate(&m, &|_| 1.0);
    let w = lib(assemble_w(&m, &s))?.matrix;
    let wone = (&w * &one).amax();
    ensure(wone < 1e-10, || format!("W 1 = {wone}"))?;
    let k = lib(assemble_k(&m, &s, &p))?.matrix;
    let mass = lib(assemble_mass(&m, &s, &p))?.matrix;
    let dl = (&k * &one + 0.5 * (&mass * &one)).amax();
    ensure(dl < 1e-8, || format!("K 1 + M 1 / 2 = {dl}"))
}

fn pencil_congruence(rng: &mut StdRng) -> Outcome {
    let n = rng.random_range(2..12);
    let mut r = |rows: usize, cols: usize| DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
    let g = r(n, n);
    let a = &g * g.transpose() + DMatrix::identity(n, n) * 0.5;
    let h = r(n, n / 2 + 1);
    let b = &h * h.transpose();
    let s = r(n, n) + DMatrix::identity(n, n) * (2.0 * n as f64);
    let x = lib(solve_pencil(&b, &a))?;
    let y = lib(solve_pencil(&(s.transpose() * &b * &s), &(s.transpose() * &a * &s)))?;
    ensure(
        (x.lambda_max - y.lambda_max).abs() <= 1e-9 * x.lambda_max.max(1.0),
        || format!("{} vs {}", x.lambda_max, y.lambda_max),
    )
}

fn norm_axioms(rng: &mut StdRng) -> Outcome {
    let m = lib(build_mesh(&Curve::square(0.5), &MeshSpec::Uniform(8)))?;
    let p = lib(DiscreteSpace::constant(&m, SpaceKind::Pq, 1))?;
    let v = lib(assemble_v(&m, &p))?.matrix;
    let x: Vec<f64> = (0..p.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..p.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let c = rng.random_range(-3.0..3.0);
    let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
    let cx: Vec<f64> = x.iter().map(|a| c * a).collect();
    let (nx, ny) = (lib(energy_norm(&v, &x))?, lib(energy_norm(&v, &y))?);
    ensure(lib(energy_norm(&v, &xy))? <= nx + ny + 1e-14, || "triangle inequality".into())?;
    let ncx = lib(energy_norm(&v, &cx))?;
    ensure((ncx - c.abs() * nx).abs() < 1e-12 * (1.0 + nx), || "homogeneity".into())
}

fn projection_invariants(rng: &mut StdRng) -> Outcome {
    let m = random_mesh(rng)?;
    let degs = random_degrees(rng, m.num_elements(), 2);
    let target = lib(DiscreteSpace::new(&m, SpaceKind::Pq, degs.clone()))?;
    let big = lib(DiscreteSpace::new(
        &m,
        SpaceKind::Pq,
        DegreeDistribution(degs.0.iter().map(|q| q + 1).collect()),
    ))?;
    let mut proj = DMatrix::zeros(big.dim(), big.dim());
    for j in 0..big.dim() {
        let mut unit = vec![0.0; big.dim()];
        unit[j] = 1.0;
        let f = |pt: &lapbem::BoundaryPoint| big.eval(&m, &unit, pt.element, pt.t, false);
        let c = lib(l2_project(&m, &target, &f))?;
        let back = big.interpolate(&m, &|pt| target.eval(&m, c.as_slice(), pt.element, pt.t, false));
        proj.set_column(j, &back);
    }
    let idem = (&proj * &proj - &proj).amax();
    ensure(idem < 1e-10, || format!("P² - P = {idem}"))?;
    let mass = lib(mass_matrix(&m, &big, &big))?;
    let mp = &mass * &proj;
    let asym = (&mp - mp.transpose()).amax();
    ensure(asym < 1e-10 * mass.amax(), || format!("M P asymmetry {asym}"))
}

fn harmonicity(rng: &mut StdRng) -> Outcome {
    let m = lib(build_mesh(&Curve::circle(0.4), &MeshSpec::Uniform(16)))?;
    let p = lib(DiscreteSpace::constant(&m, SpaceKind::Pq, 1))?;
    let s = lib(DiscreteSpace::constant(&m, SpaceKind::Sq1, 1))?;
    let cp: Vec<f64> = (0..p.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let cs: Vec<f64> = (0..s.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let h = 1e-3;
    for k in 0..20 {
        let r = if k % 2 == 0 {
            rng.random_range(0.0..0.3)
        } else {
            rng.random_range(0.5..1.0)
        };
        let th = rng.random_range(0.0..std::f64::consts::TAU);
        let x = Vec2::new(r * th.cos(), r * th.sin());
        for double in [false, true] {
            let f = |y: Vec2| {
                if double {
                    eval_double_layer(&m, &s, &cs, y)
                } else {
                    eval_single_layer(&m, &p, &cp, y)
                }
            };
            let mut lap = 0.0;
            for e in [Vec2::new(h, 0.0), Vec2::new(0.0, h)] {
                lap += (-lib(f(x + 2.0 * e))? + 16.0 * lib(f(x + e))? - 30.0 * lib(f(x))? + 16.0 * lib(f(x - e))?
                    - lib(f(x - 2.0 * e))?)
                    / (12.0 * h * h);
            }
            ensure(lap.abs() < 1e-4, || format!("Laplacian {lap} at {x:?}"))?;
        }
    }
    Ok(())
}

fn doerfler_minimality(rng: &mut StdRng) -> Outcome {
    for _ in 0..20 {
        let n = rng.random_range(1..=12);
        let vals: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let theta = rng.random_range(0.05..=1.0);
        let total: f64 = vals.iter().map(|v| v * v).sum();
        let report = EstimatorReport {
            tag: EstimatorTag::EtaV,
            indicators: vals.clone(),
            eta: total.sqrt(),
            error_l2_weighted: None,
            error_energy: None,
        };
        let marked = lib(doerfler_mark(&report, theta))?;
        let target = theta * total * (1.0 - 1e-12);
        let mass = |bits: u32| (0..n).filter(|i| bits & (1 << i) != 0).map(|i| vals[i] * vals[i]).sum::<f64>();
        let best = (0u32..(1 << n))
            .filter(|&b| mass(b) >= target)
            .map(|b| b.count_ones() as usize)
            .min()
            .unwrap_or(0);
        let got: f64 = marked.iter().map(|&i| vals[i] * vals[i]).sum();
        ensure(got >= target && marked.len() == best, || {
            format!("marked {} elements, minimum is {best}", marked.len())
        })?;
    }
    Ok(())
}

type Check = (&'static str, fn(&mut StdRng) -> Outcome);

const CHECKS: [Check; 8] = [
    ("mesh coverage, neighbor ratio and patch symmetry", mesh_invariants),
    ("dimensions and partition of unity", space_invariants),
    ("operator symmetry, definiteness and constants", operator_invariants),
    ("pencil congruence invariance", pencil_congruence),
    ("energy norm axioms", norm_axioms),
    ("L2 projection idempotent and self-adjoint", projection_invariants),
    ("harmonic potentials", harmonicity),
    ("Doerfler minimality", doerfler_minimality),
];

/// Runs every check with an independent generator derived from `seed`.
pub fn run_checks(seed: u64) -> Vec<CheckResult> {
    CHECKS
        .iter()
        .enumerate()
        .map(|(i, (name, f))| {
            let mut rng = StdRng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i as u64));
            let t = Instant::now();
            let out = f(&mut rng);
            CheckResult {
                name,
                passed: out.is_ok(),
                detail: out.err().unwrap_or_default(),
                seconds: t.elapsed().as_secs_f64(),
            }
        })
        .collect()
}
