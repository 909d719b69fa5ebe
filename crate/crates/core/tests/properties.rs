//! Randomized invariants of meshes, spaces, potentials, norms and marking.

use std::collections::{BTreeSet, HashSet};
use std::f64::consts::PI;

use lapbem::estimators::{doerfler_mark, EstimatorReport, EstimatorTag};
use lapbem::mesh::{refine, DEFAULT_NEIGHBOR_CAP};
use lapbem::norms::{energy_norm, l2_project, solve_pencil};
use lapbem::operators::{assemble_v, TraceOperator, TraceTag};
use lapbem::potentials::{eval_double_layer, eval_single_layer};
use lapbem::quadrature::element_rule;
use lapbem::spaces::mass_matrix;
use lapbem::{build_mesh, BoundaryMesh, Curve, DegreeDistribution, DiscreteSpace, MeshSpec, SpaceKind, Vec2};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn curve(which: usize) -> Curve {
    match which % 4 {
        0 => Curve::circle(0.4),
        1 => Curve::square(0.5),
        2 => Curve::slit(0.6),
        _ => Curve::ClosedPolygon {
            vertices: vec![[0.0, 0.0], [0.5, 0.0], [0.6, 0.3], [0.1, 0.4]],
        },
    }
}

/// A mesh after a few rounds of random marking.
fn random_mesh(which: usize, n0: usize, seed: u64, rounds: usize) -> BoundaryMesh {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut m = build_mesh(&curve(which), &MeshSpec::Uniform(n0.max(4))).unwrap();
    for _ in 0..rounds {
        let marked: BTreeSet<usize> = (0..m.num_elements()).filter(|_| rng.random_bool(0.3)).collect();
        m = refine(&m, &marked, DEFAULT_NEIGHBOR_CAP).unwrap().0;
    }
    m
}

fn random_degrees(n: usize, max: usize, seed: u64) -> DegreeDistribution {
    let mut rng = StdRng::seed_from_u64(seed);
    DegreeDistribution((0..n).map(|_| rng.random_range(0..=max)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn elements_cover_the_curve(which in 0usize..4, n0 in 4usize..10, seed in any::<u64>(), rounds in 0usize..4) {
        let m = random_mesh(which, n0, seed, rounds);
        let total: f64 = m.elements().iter().map(|e| e.len()).sum();
        let len = m.curve().length().unwrap();
        prop_assert!((total - len).abs() < 1e-12 * len.max(1.0));
        for w in m.elements().windows(2) {
            prop_assert!((w[0].s1 - w[1].s0).abs() < 1e-14);
        }
        for e in m.elements() {
            prop_assert!(e.h > 0.0 && e.h <= e.len() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn refinement_keeps_neighbor_ratio_and_nests(which in 0usize..4, n0 in 4usize..10, seed in any::<u64>()) {
        let m = random_mesh(which, n0, seed, 2);
        prop_assert!(m.max_neighbor_ratio() <= DEFAULT_NEIGHBOR_CAP * (1.0 + 1e-12));
        let mut rng = StdRng::seed_from_u64(seed ^ 0x5a5a);
        let marked: BTreeSet<usize> = (0..m.num_elements()).filter(|_| rng.random_bool(0.2)).collect();
        let (fine, parents) = refine(&m, &marked, DEFAULT_NEIGHBOR_CAP).unwrap();
        prop_assert!(fine.max_neighbor_ratio() <= DEFAULT_NEIGHBOR_CAP * (1.0 + 1e-12));
        prop_assert_eq!(parents.len(), fine.num_elements());
        for (e, &p) in fine.elements().iter().zip(&parents) {
            let old = m.element(p);
            prop_assert!(e.s0 >= old.s0 - 1e-14 && e.s1 <= old.s1 + 1e-14);
            let containing = m.elements().iter().filter(|o| e.s0 >= o.s0 - 1e-14 && e.s1 <= o.s1 + 1e-14).count();
            prop_assert_eq!(containing, 1);
        }
        for &k in &marked {
            prop_assert!(parents.iter().filter(|&&p| p == k).count() >= 2);
        }
    }

    #[test]
    fn patches_are_symmetric(which in 0usize..4, n0 in 3usize..9, seed in any::<u64>()) {
        let m = random_mesh(which, n0, seed, 2);
        for a in 0..m.num_elements() {
            for b in m.patch(a).unwrap() {
                prop_assert!(m.patch(b).unwrap().contains(&a), "{a} in patch of {b}");
            }
        }
    }

    #[test]
    fn hats_partition_unity(which in 0usize..4, n0 in 3usize..9, seed in any::<u64>()) {
        let m = random_mesh(which, n0, seed, 1);
        let degs = random_degrees(m.num_elements(), 4, seed);
        let s = DiscreteSpace::new(&m, SpaceKind::Sq1, degs).unwrap();
        let mut c = vec![0.0; s.dim()];
        for e in 0..m.num_elements() {
            for d in s.local_dofs(&m, e).into_iter().take(2).flatten() {
                c[d] = 1.0;
            }
        }
        let mut rng = StdRng::seed_from_u64(seed);
        for _ in 0..20 {
            let e = rng.random_range(0..m.num_elements());
            let t: f64 = rng.random();
            prop_assert!((s.eval(&m, &c, e, t, false) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn inclusion_chain_preserves_values(which in 0usize..4, n0 in 3usize..9, seed in any::<u64>()) {
        let m = random_mesh(which, n0, seed, 1);
        let degs = random_degrees(m.num_elements(), 4, seed);
        let tilde = DiscreteSpace::new(&m, SpaceKind::Sq1Tilde, degs).unwrap();
        let mut rng = StdRng::seed_from_u64(seed);
        let c: Vec<f64> = (0..tilde.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (full, cf) = tilde.tilde_to_full(&m, &c).unwrap();
        let (disc, cd) = full.to_discontinuous(&m, cf.as_slice()).unwrap();
        prop_assert_eq!(disc.kind(), SpaceKind::Pq);
        for _ in 0..20 {
            let e = rng.random_range(0..m.num_elements());
            let t: f64 = rng.random();
            let v0 = tilde.eval(&m, &c, e, t, false);
            let v1 = full.eval(&m, cf.as_slice(), e, t, false);
            let v2 = disc.eval(&m, cd.as_slice(), e, t, false);
            prop_assert!((v0 - v1).abs() < 1e-12);
            prop_assert!((v0 - v2).abs() < 1e-10, "{v0} vs {v2}");
        }
        if m.is_closed() {
            prop_assert_eq!(tilde.dim(), full.dim());
        }
    }

    #[test]
    fn dof_counts_match_formulas(which in 0usize..4, n0 in 3usize..9, seed in any::<u64>()) {
        let m = random_mesh(which, n0, seed, 1);
        let n = m.num_elements();
        let degs = random_degrees(n, 5, seed);
        let sum_q: usize = degs.0.iter().sum();
        for kind in [SpaceKind::Pq, SpaceKind::Sq1, SpaceKind::Sq1Tilde] {
            let s = DiscreteSpace::new(&m, kind, degs.clone()).unwrap();
            let mut seen = HashSet::new();
            let mut nodes = HashSet::new();
            for e in 0..n {
                let dofs = s.local_dofs(&m, e);
                for (k, d) in dofs.iter().enumerate() {
                    if let Some(d) = d {
                        seen.insert(*d);
                        if kind != SpaceKind::Pq && k < 2 {
                            nodes.insert(*d);
                        }
                    }
                }
            }
            prop_assert_eq!(seen.len(), s.dim());
            let expected = match kind {
                SpaceKind::Pq => sum_q + n,
                _ => {
                    let free_nodes = if m.is_closed() { n } else if kind == SpaceKind::Sq1 { n + 1 } else { n - 1 };
                    prop_assert_eq!(nodes.len(), free_nodes);
                    free_nodes + sum_q
                }
            };
            prop_assert_eq!(s.dim(), expected);
        }
    }

    #[test]
    fn single_layer_potential_is_linear(which in 0usize..4, seed in any::<u64>()) {
        let m = build_mesh(&curve(which), &MeshSpec::Uniform(6)).unwrap();
        let s = DiscreteSpace::constant(&m, SpaceKind::Pq, 1).unwrap();
        let mut rng = StdRng::seed_from_u64(seed);
        let a: Vec<f64> = (0..s.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..s.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (alpha, beta) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| alpha * x + beta * y).collect();
        let x = Vec2::new(1.3, -0.7);
        let va = eval_single_layer(&m, &s, &a, x).unwrap();
        let vb = eval_single_layer(&m, &s, &b, x).unwrap();
        let vab = eval_single_layer(&m, &s, &ab, x).unwrap();
        prop_assert!((vab - alpha * va - beta * vb).abs() < 1e-12 * (1.0 + vab.abs()));
    }

    #[test]
    fn energy_norm_is_a_norm(seed in any::<u64>(), scale in -3.0f64..3.0) {
        let m = build_mesh(&Curve::square(0.5), &MeshSpec::Uniform(8)).unwrap();
        let s = DiscreteSpace::constant(&m, SpaceKind::Pq, 1).unwrap();
        let v = assemble_v(&m, &s).unwrap().matrix;
        let mut rng = StdRng::seed_from_u64(seed);
        let x: Vec<f64> = (0..s.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..s.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
        let sx: Vec<f64> = x.iter().map(|a| scale * a).collect();
        let nx = energy_norm(&v, &x).unwrap();
        prop_assert!(nx > 0.0);
        prop_assert!(energy_norm(&v, &xy).unwrap() <= nx + energy_norm(&v, &y).unwrap() + 1e-14);
        prop_assert!((energy_norm(&v, &sx).unwrap() - scale.abs() * nx).abs() < 1e-12 * (1.0 + nx));
    }

    #[test]
    fn pencil_constant_is_basis_independent(n in 2usize..12, seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut rand_mat = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
        let g = rand_mat(n, n);
        let a = &g * g.transpose() + DMatrix::identity(n, n) * 0.5;
        let h = rand_mat(n, n / 2 + 1);
        let b = &h * h.transpose();
        let s = rand_mat(n, n) + DMatrix::identity(n, n) * (2.0 * n as f64);
        let base = solve_pencil(&b, &a).unwrap();
        let moved = solve_pencil(&(s.transpose() * &b * &s), &(s.transpose() * &a * &s)).unwrap();
        prop_assert!((base.lambda_max - moved.lambda_max).abs() <= 1e-9 * base.lambda_max.max(1.0),
            "{} vs {}", base.lambda_max, moved.lambda_max);
    }

    #[test]
    fn doerfler_selects_a_minimal_set(vals in prop::collection::vec(0.0f64..1.0, 1..=12), theta in 0.05f64..=1.0) {
        let total: f64 = vals.iter().map(|v| v * v).sum();
        prop_assume!(total > 0.0);
        let report = EstimatorReport {
            tag: EstimatorTag::EtaV,
            indicators: vals.clone(),
            eta: total.sqrt(),
            error_l2_weighted: None,
            error_energy: None,
        };
        let marked = doerfler_mark(&report, theta).unwrap();
        let target = theta * total * (1.0 - 1e-12);
        let mass = |set: &mut dyn Iterator<Item = usize>| set.map(|i| vals[i] * vals[i]).sum::<f64>();
        prop_assert!(mass(&mut marked.iter().copied()) >= target);
        let n = vals.len();
        let best = (0u32..(1 << n))
            .filter(|bits| mass(&mut (0..n).filter(|i| bits & (1 << i) != 0)) >= target)
            .map(|bits| bits.count_ones() as usize)
            .min()
            .unwrap();
        prop_assert_eq!(marked.len(), best);
    }
}

/// Galerkin matrix through pointwise traces integrated against the test basis.
fn through_traces(m: &BoundaryMesh, s: &DiscreteSpace) -> DMatrix<f64> {
    let op = TraceOperator::new(m, TraceTag::V, s).unwrap();
    let mut out = DMatrix::zeros(s.dim(), s.dim());
    let mut basis = vec![0.0; 32];
    for e in 0..m.num_elements() {
        let len = m.element(e).len();
        let dofs = s.local_dofs(m, e);
        for (t, w) in element_rule(s.local_degree(e) + 10).iter() {
            let row = op.row(e, t);
            s.local_basis(e, t, false, &mut basis);
            for (a, d) in dofs.iter().enumerate() {
                if let Some(i) = d {
                    for (j, r) in row.iter().enumerate() {
                        out[(*i, j)] += w * len * basis[a] * r;
                    }
                }
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn galerkin_matrix_matches_integrated_traces(which in 0usize..4, n0 in 3usize..5, seed in any::<u64>()) {
        let m = random_mesh(which, n0, seed, 1);
        let degs = random_degrees(m.num_elements(), 2, seed);
        let s = DiscreteSpace::new(&m, SpaceKind::Pq, degs).unwrap();
        let v = assemble_v(&m, &s).unwrap().matrix;
        let v2 = through_traces(&m, &s);
        prop_assert!((&v - &v2).amax() < 1e-7 * v.amax(), "{}", (&v - &v2).amax());
    }

    #[test]
    fn l2_projection_is_an_orthogonal_projector(which in 0usize..4, seed in any::<u64>()) {
        let m = random_mesh(which, 4, seed, 1);
        let degs = random_degrees(m.num_elements(), 2, seed);
        let target = DiscreteSpace::new(&m, SpaceKind::Pq, degs.clone()).unwrap();
        let big = DiscreteSpace::new(&m, SpaceKind::Pq, DegreeDistribution(degs.0.iter().map(|q| q + 2).collect())).unwrap();
        // Columns: projections of the basis functions of `big`, embedded back.
        let mut p = DMatrix::zeros(big.dim(), big.dim());
        for j in 0..big.dim() {
            let mut unit = vec![0.0; big.dim()];
            unit[j] = 1.0;
            let f = |pt: &lapbem::BoundaryPoint| big.eval(&m, &unit, pt.element, pt.t, false);
            let c = l2_project(&m, &target, &f).unwrap();
            let back = big.interpolate(&m, &|pt| target.eval(&m, c.as_slice(), pt.element, pt.t, false));
            p.set_column(j, &back);
        }
        let idem = (&p * &p - &p).amax();
        prop_assert!(idem < 1e-10, "{idem}");
        let mass = mass_matrix(&m, &big, &big).unwrap();
        let mp = &mass * &p;
        prop_assert!((&mp - mp.transpose()).amax() < 1e-10 * mass.amax());
    }
}

/// Fourth-order finite-difference Laplacian of a potential.
fn fd_laplacian(f: &dyn Fn(Vec2) -> f64, x: Vec2, h: f64) -> f64 {
    let second = |e: Vec2| (-f(x + 2.0 * e) + 16.0 * f(x + e) - 30.0 * f(x) + 16.0 * f(x - e) - f(x - 2.0 * e)) / 12.0;
    (second(Vec2::new(h, 0.0)) + second(Vec2::new(0.0, h))) / (h * h)
}

#[test]
fn potentials_are_harmonic_off_the_boundary() {
    let mut rng = StdRng::seed_from_u64(7);
    let m = build_mesh(&Curve::circle(0.4), &MeshSpec::Uniform(16)).unwrap();
    let p = DiscreteSpace::constant(&m, SpaceKind::Pq, 1).unwrap();
    let s = DiscreteSpace::constant(&m, SpaceKind::Sq1, 1).unwrap();
    let cp: Vec<f64> = (0..p.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let cs: Vec<f64> = (0..s.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let single = |x: Vec2| eval_single_layer(&m, &p, &cp, x).unwrap();
    let double = |x: Vec2| eval_double_layer(&m, &s, &cs, x).unwrap();
    for k in 0..20 {
        let r = if k % 2 == 0 { rng.random_range(0.0..0.3) } else { rng.random_range(0.5..1.0) };
        let th = rng.random_range(0.0..2.0 * PI);
        let x = Vec2::new(r * th.cos(), r * th.sin());
        for (name, f) in [("single", &single as &dyn Fn(Vec2) -> f64), ("double", &double)] {
            let lap = fd_laplacian(f, x, 1e-3);
            assert!(lap.abs() < 1e-4, "{name} at {x:?}: {lap}");
        }
    }
}

#[test]
fn single_layer_potential_is_continuous_across_the_boundary() {
    let mut rng = StdRng::seed_from_u64(11);
    let m = build_mesh(&Curve::square(0.5), &MeshSpec::Uniform(12)).unwrap();
    let s = DiscreteSpace::constant(&m, SpaceKind::Pq, 0).unwrap();
    let c: Vec<f64> = (0..s.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    for _ in 0..5 {
        let e = rng.random_range(0..m.num_elements());
        let p = m.boundary_point(e, rng.random_range(0.2..0.8));
        let jump = |d: f64| {
            let inside = eval_single_layer(&m, &s, &c, p.x - d * p.normal).unwrap();
            let outside = eval_single_layer(&m, &s, &c, p.x + d * p.normal).unwrap();
            (inside - outside).abs()
        };
        let (j1, j2) = (jump(1e-3), jump(1e-4));
        assert!(j1 < 1e-2, "{j1}");
        assert!(j2 < 0.2 * j1 + 1e-10, "{j1} {j2}");
    }
}

#[test]
fn hypersingular_matches_normal_derivative_of_double_layer() {
    // W u = -∂_ν K̃u; with r the inward distance, -∂_ν = d/dr.
    let m = build_mesh(&Curve::circle(0.4), &MeshSpec::Uniform(16)).unwrap();
    let s = DiscreteSpace::constant(&m, SpaceKind::Sq1, 4).unwrap();
    let angle = |p: &lapbem::BoundaryPoint| p.x.y.atan2(p.x.x);
    let u = s.interpolate(&m, &|p| (2.0 * angle(p)).cos() + 0.5 * angle(p).sin());
    let v = s.interpolate(&m, &|p| (2.0 * angle(p)).cos() - angle(p).cos());
    let w = lapbem::operators::assemble_w(&m, &s).unwrap().matrix;
    let galerkin = v.dot(&(&w * &u));
    let d = 0.01;
    let mut quotient = 0.0;
    for e in 0..m.num_elements() {
        let len = m.element(e).len();
        for (t, wt) in lapbem::gauss_legendre(8).iter() {
            let p = m.boundary_point(e, t);
            let k = |r: f64| eval_double_layer(&m, &s, u.as_slice(), p.x - r * p.normal).unwrap();
            // Derivative at r = 0 of the quadratic through r = d, 2d, 3d.
            let dn = (-5.0 * k(d) + 8.0 * k(2.0 * d) - 3.0 * k(3.0 * d)) / (2.0 * d);
            quotient += wt * len * dn * s.eval(&m, v.as_slice(), e, t, false);
        }
    }
    let rel = (galerkin - quotient).abs() / galerkin.abs();
    assert!(rel < 1e-3, "{galerkin} vs {quotient}: {rel}");
}

#[test]
fn hp_efficiency_ratio_is_bounded_in_the_degree() {
    use lapbem::estimators::{estimate_eta_w, solve_hypersingular, CircleModes};
    use lapbem::norms::{weighted_l2_norm, Field};
    use lapbem::WeightFunction;
    let a = 0.4;
    let modes = CircleModes {
        radius: a,
        modes: vec![(1, 1.0, 0.3), (3, 0.4, -0.2), (6, 0.1, 0.05)],
    };
    let prob = modes.hypersingular_problem();
    let u = {
        let md = modes.modes.clone();
        move |p: &lapbem::BoundaryPoint| {
            let th = p.x.y.atan2(p.x.x);
            md.iter().map(|&(j, c, s)| c * (j as f64 * th).cos() + s * (j as f64 * th).sin()).sum::<f64>()
        }
    };
    let du = prob.exact.clone().unwrap();
    let m = build_mesh(&Curve::circle(a), &MeshSpec::Uniform(8)).unwrap();
    let weight = WeightFunction::MeshPower { h_exp: 0.5, degree_exp: -0.5 };
    let mut ratios = Vec::new();
    for q in 0..=4 {
        let s = DiscreteSpace::constant(&m, SpaceKind::Sq1, q).unwrap();
        let f = prob.f.clone();
        let sol = solve_hypersingular(&m, &s, &move |p| f(p)).unwrap();
        let c = sol.coeffs.as_slice();
        let f = prob.f.clone();
        let rep = estimate_eta_w(&m, &s, c, &move |p| f(p)).unwrap();
        let eta_hp = rep.indicators.iter().map(|v| v * v / (1.0 + q as f64)).sum::<f64>().sqrt();
        let degs = DegreeDistribution::constant(m.num_elements(), q);
        let de = |p: &lapbem::BoundaryPoint| du(p) - s.eval(&m, c, p.element, p.t, true);
        let e0 = |p: &lapbem::BoundaryPoint| u(p) - s.eval(&m, c, p.element, p.t, false);
        let right = weighted_l2_norm(&m, &degs, &weight, &Field::Callable(&de))
            + weighted_l2_norm(&m, &degs, &weight, &Field::Callable(&e0));
        ratios.push(eta_hp / right);
    }
    let max = ratios.iter().copied().fold(0.0, f64::max);
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(min > 0.0 && max / min < 2.0, "{ratios:?}");
}
