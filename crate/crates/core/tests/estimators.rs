use lapbem::estimators::*;
use lapbem::mesh::{build_mesh, Curve, MeshSpec};
use lapbem::operators::{assemble_w, TraceOperator, TraceTag};
use lapbem::{BemError, BoundaryMesh, BoundaryPoint, DiscreteSpace, SpaceKind};

const A: f64 = 0.4;

fn circle(n: usize) -> BoundaryMesh {
    build_mesh(&Curve::circle(A), &MeshSpec::Uniform(n)).unwrap()
}

fn angle(p: &BoundaryPoint) -> f64 {
    p.x.y.atan2(p.x.x)
}

#[test]
fn symm_reproduces_discrete_density() {
    let m = build_mesh(&Curve::square(0.5), &MeshSpec::Uniform(12)).unwrap();
    let s = DiscreteSpace::constant(&m, SpaceKind::Pq, 0).unwrap();
    let phi: Vec<f64> = (0..s.dim()).map(|i| (i as f64 * 0.7).sin()).collect();
    let v = TraceOperator::new(&m, TraceTag::V, &s).unwrap();
    let f = |p: &BoundaryPoint| v.apply(&phi, p.element, p.t);
    let sol = solve_symm(&m, &s, &f).unwrap();
    let err = sol.coeffs.iter().zip(&phi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-9, "{err}");
    assert!(sol.residual < 1e-9);
}

#[test]
fn symm_constant_density_on_circle() {
    let m = circle(16);
    let s = DiscreteSpace::constant(&m, SpaceKind::Pq, 0).unwrap();
    let sol = solve_symm(&m, &s, &|_| 1.0).unwrap();
    let exact = 1.0 / (-A * A.ln());
    for c in sol.coeffs.iter() {
        assert!((c - exact).abs() < 1e-8, "{c} vs {exact}");
    }
    let rep = estimate_eta_v(&m, &s, sol.coeffs.as_slice(), &|_| 0.0).unwrap();
    assert!(rep.eta < 1e-8, "{}", rep.eta);
    let zero = solve_symm(&m, &s, &|_| 0.0).unwrap();
    assert!(zero.coeffs.iter().all(|c| *c == 0.0));
}

#[test]
fn indicators_respect_mesh_symmetry() {
    let m = circle(16);
    let s = DiscreteSpace::constant(&m, SpaceKind::Pq, 0).unwrap();
    let modes = CircleModes {
        radius: A,
        modes: vec![(0, 1.0, 0.0), (16, 0.3, 0.0)],
    };
    let prob = modes.symm_problem();
    let (_, rep) = solve_and_estimate(&m, &s, &prob).unwrap();
    let max = rep.indicators.iter().copied().fold(0.0, f64::max);
    let min = rep.indicators.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(min > 0.0);
    assert!((max - min) / max < 1e-6, "{min} {max}");
    let sum: f64 = rep.indicators.iter().map(|v| v * v).sum();
    assert!((sum - rep.eta * rep.eta).abs() <= 1e-14 * sum);
}

#[test]
fn hypersingular_reproduces_discrete_solution() {
    let m = circle(12);
    let s = DiscreteSpace::constant(&m, SpaceKind::Sq1, 1).unwrap();
    let mut u = s.interpolate(&m, &|p| angle(p).cos() + 0.3 * (2.0 * angle(p)).sin());
    let ints = s.integrals(&m);
    let ones = s.interpolate(&m, &|_| 1.0);
    let shift = ints.dot(&u) / ints.dot(&ones);
    u -= shift * &ones;
    let w = TraceOperator::new(&m, TraceTag::W, &s).unwrap();
    let f = |p: &BoundaryPoint| w.apply(u.as_slice(), p.element, p.t);
    let sol = solve_hypersingular(&m, &s, &f).unwrap();
    let err = (&sol.coeffs - &u).amax();
    assert!(err < 1e-7, "{err}");
    assert!(ints.dot(&sol.coeffs).abs() < 1e-10);
    let rep = estimate_eta_w(&m, &s, sol.coeffs.as_slice(), &f).unwrap();
    let shifted = &sol.coeffs + 2.5 * &ones;
    let rep2 = estimate_eta_w(&m, &s, shifted.as_slice(), &f).unwrap();
    assert!((rep.eta - rep2.eta).abs() < 1e-10, "{} {}", rep.eta, rep2.eta);
}

#[test]
fn hypersingular_rejects_data_with_mean() {
    let m = circle(8);
    let s = DiscreteSpace::constant(&m, SpaceKind::Sq1, 0).unwrap();
    assert!(matches!(solve_hypersingular(&m, &s, &|_| 1.0), Err(BemError::RhsNotMeanZero(_))));
    let slit = build_mesh(&Curve::slit(0.5), &MeshSpec::Uniform(8)).unwrap();
    let full = DiscreteSpace::constant(&slit, SpaceKind::Sq1, 0).unwrap();
    assert!(solve_hypersingular(&slit, &full, &|_| 1.0).is_err());
    let tilde = DiscreteSpace::constant(&slit, SpaceKind::Sq1Tilde, 0).unwrap();
    let sol = solve_hypersingular(&slit, &tilde, &|_| 1.0).unwrap();
    assert!(sol.coeffs.iter().all(|c| *c > 0.0));
    let w = assemble_w(&slit, &tilde).unwrap().matrix;
    assert!(w.cholesky().is_some());
}

#[test]
fn circle_problem_data_matches_operators() {
    // f from the closed form against the pointwise trace of a fine
    // approximation of the exact density.
    let modes = CircleModes {
        radius: A,
        modes: vec![(0, 1.0, 0.0), (2, 0.5, -0.25)],
    };
    let prob = modes.symm_problem();
    let m = circle(16);
    let s = DiscreteSpace::constant(&m, SpaceKind::Pq, 10).unwrap();
    let exact = prob.exact.clone().unwrap();
    let c = s.interpolate(&m, &|p| exact(p));
    let v = TraceOperator::new(&m, TraceTag::V, &s).unwrap();
    let gv = TraceOperator::new(&m, TraceTag::GradV, &s).unwrap();
    for (e, t) in [(0, 0.3), (9, 0.8)] {
        let p = m.boundary_point(e, t);
        assert!((v.apply(c.as_slice(), e, t) - (prob.f)(&p)).abs() < 1e-9);
        let g = prob.grad_f.as_ref().unwrap();
        assert!((gv.apply(c.as_slice(), e, t) - g(&p)).abs() < 1e-8);
    }
    let energy: f64 = s.load_vector(&m, &|p| (prob.f)(p)).dot(&c);
    assert!((energy - prob.energy.unwrap()).abs() < 1e-10);
}

#[test]
fn full_marking_equals_uniform_refinement() {
    let modes = CircleModes {
        radius: A,
        modes: vec![(0, 1.0, 0.0), (1, 0.4, 0.2), (3, 0.1, 0.0)],
    };
    let prob = modes.symm_problem();
    let base = AdaptiveSpec {
        curve: Curve::circle(A),
        initial: MeshSpec::Uniform(6),
        kind: SpaceKind::Pq,
        degree: 0,
        marking: Marking::Uniform,
        stop: StopCriterion {
            max_dofs: 100,
            eta_tol: 0.0,
            max_levels: 3,
        },
    };
    let uni = adaptive_loop(&base, &prob).unwrap();
    let full = adaptive_loop(
        &AdaptiveSpec {
            marking: Marking::Doerfler(1.0),
            ..base.clone()
        },
        &prob,
    )
    .unwrap();
    let a: Vec<HistoryRow> = uni.iter().map(|l| l.row.clone()).collect();
    let b: Vec<HistoryRow> = full.iter().map(|l| l.row.clone()).collect();
    assert_eq!(a, b);
    assert_eq!(a.iter().map(|r| r.dofs).collect::<Vec<_>>(), vec![6, 12, 24]);
}

#[test]
fn adaptive_loop_validates_theta() {
    let prob = slit_symm_problem(0.5).unwrap();
    let spec = AdaptiveSpec {
        curve: Curve::slit(0.5),
        initial: MeshSpec::Uniform(4),
        kind: SpaceKind::Pq,
        degree: 0,
        marking: Marking::Doerfler(1.5),
        stop: StopCriterion::default(),
    };
    assert!(matches!(adaptive_loop(&spec, &prob), Err(BemError::Config { .. })));
}

#[test]
fn slit_energy_matches_fine_solution() {
    let prob = slit_symm_problem(0.5).unwrap();
    let m = build_mesh(&Curve::slit(0.5), &MeshSpec::Uniform(64)).unwrap();
    let s = DiscreteSpace::constant(&m, SpaceKind::Pq, 0).unwrap();
    let f = prob.f.clone();
    let sol = solve_symm(&m, &s, &move |p| f(p)).unwrap();
    let discrete = sol.load.dot(&sol.coeffs);
    let exact = prob.energy.unwrap();
    assert!(discrete < exact);
    assert!((exact - discrete) / exact < 1e-2);
}
