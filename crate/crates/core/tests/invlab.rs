use lapbem::estimators::{adaptive_loop, slit_symm_problem, AdaptiveSpec, Marking, StopCriterion};
use lapbem::invlab::*;
use lapbem::mesh::{build_mesh, Curve, MeshSpec};
use lapbem::{BoundaryMesh, BoundaryPoint, DegreeDistribution, DiscreteSpace, SpaceKind, WeightFunction};
use nalgebra::DVector;

fn uniform(c: &Curve, ns: &[usize]) -> Vec<BoundaryMesh> {
    ns.iter().map(|&n| build_mesh(c, &MeshSpec::Uniform(n)).unwrap()).collect()
}

#[test]
fn pencils_are_symmetric_with_definite_right_side() {
    for c in [Curve::circle(0.4), Curve::square(0.5), Curve::slit(0.5)] {
        let m = build_mesh(&c, &MeshSpec::Uniform(6)).unwrap();
        for tag in PencilTag::ALL {
            let spec = InequalitySpec::new(tag, "g");
            let space = spec.space(&m, DegreeDistribution::constant(6, 1)).unwrap();
            let (b, a) = build_pencil(&spec, &m, &space).unwrap();
            assert!((&b - b.transpose()).amax() <= 1e-14 * b.amax().max(1e-300), "{tag}");
            assert!((&a - a.transpose()).amax() <= 1e-12 * a.amax(), "{tag}");
            assert!(a.clone().cholesky().is_some(), "{tag}");
            let eig = b.symmetric_eigenvalues();
            assert!(eig.min() >= -1e-12 * eig.max().abs().max(1e-300), "{tag}");
        }
    }
}

#[test]
fn constants_lie_in_kernel_of_gradient_pencil_on_circle() {
    let m = build_mesh(&Curve::circle(0.4), &MeshSpec::Uniform(16)).unwrap();
    let spec = InequalitySpec::new(PencilTag::Cor32VGrad, "circle");
    let space = spec.space(&m, DegreeDistribution::constant(16, 0)).unwrap();
    let (b, _) = build_pencil(&spec, &m, &space).unwrap();
    let one = DVector::from_element(16, 1.0);
    assert!((&b * &one).amax() < 1e-12 * b.amax(), "{}", (&b * &one).amax());
}

#[test]
fn mismatched_space_is_rejected() {
    let m = build_mesh(&Curve::circle(0.4), &MeshSpec::Uniform(8)).unwrap();
    let spec = InequalitySpec::new(PencilTag::Cor32W, "circle");
    let p = DiscreteSpace::constant(&m, SpaceKind::Pq, 0).unwrap();
    assert!(build_pencil(&spec, &m, &p).is_err());
}

#[test]
fn gradient_constant_is_stable_under_refinement() {
    let ms = uniform(&Curve::circle(0.4), &[8, 16, 32]);
    let tr = constant_sweep(&InequalitySpec::new(PencilTag::Cor32VGrad, "circle"), &ms, &[0], 4096).unwrap();
    assert_eq!(tr.records.len(), 3);
    assert!(spread(&tr.constants()) < 1.25, "{:?}", tr.constants());
    assert!(tr.records.iter().all(|r| r.residual < 1e-8 && r.c > 0.0));
    let mut buf = Vec::new();
    tr.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("geometry,tag,level,dofs,q_min,q_max,C,residual\n"));
    assert!(text.contains(",cor32_V_grad,"));
    assert_eq!(read_traces(buf.as_slice()).unwrap(), tr.records);
}

#[test]
fn degree_factor_is_needed() {
    let ms = uniform(&Curve::circle(0.4), &[16]);
    let degs = [0, 1, 2, 3];
    let with = constant_sweep(&InequalitySpec::new(PencilTag::Cor32VGrad, "c"), &ms, &degs, 4096).unwrap();
    let without = constant_sweep(
        &InequalitySpec::new(PencilTag::Cor32VGrad, "c").with_weight(WeightFunction::mesh_only()),
        &ms,
        &degs,
        4096,
    )
    .unwrap()
    .constants();
    assert!(without.windows(2).all(|w| w[1] > w[0]), "{without:?}");
    assert!(spread(&with.constants()) <= 2.0);
}

#[test]
fn sweep_respects_dof_cap() {
    let ms = uniform(&Curve::circle(0.4), &[8, 16]);
    assert!(constant_sweep(&InequalitySpec::new(PencilTag::LemmaA1, "c"), &ms, &[0], 10).is_err());
}

#[test]
fn graded_meshes_keep_the_constant() {
    let prob = slit_symm_problem(0.5).unwrap();
    let spec = AdaptiveSpec {
        curve: Curve::slit(0.5),
        initial: MeshSpec::Uniform(4),
        kind: SpaceKind::Pq,
        degree: 0,
        marking: Marking::Doerfler(0.5),
        stop: StopCriterion {
            max_dofs: 60,
            eta_tol: 0.0,
            max_levels: 40,
        },
    };
    let levels = adaptive_loop(&spec, &prob).unwrap();
    let graded: Vec<BoundaryMesh> = levels.iter().map(|l| l.mesh.clone()).collect();
    let last = graded.last().unwrap();
    assert!(last.h_max() / last.h_min() > 50.0);
    let ms = uniform(&Curve::slit(0.5), &[8, 16, 32]);
    for tag in [PencilTag::LemmaA1, PencilTag::Cor32VGrad] {
        let reference = constant_sweep(&InequalitySpec::new(tag, "slit"), &ms, &[0], 4096).unwrap().constants();
        let adaptive = constant_sweep(&InequalitySpec::new(tag, "slit"), &graded[graded.len() - 3..], &[0], 4096)
            .unwrap()
            .constants();
        let hi = reference.iter().chain(&adaptive).copied().fold(0.0, f64::max);
        let lo = reference.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(hi / lo <= 2.0, "{tag}: {reference:?} {adaptive:?}");
        let lo = adaptive.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(reference.iter().all(|r| r / lo <= 2.0), "{tag}: {reference:?} {adaptive:?}");
    }
}

#[test]
fn projection_stability() {
    let probe = |p: &BoundaryPoint| (2.0 * std::f64::consts::PI * p.s).sin();
    let scaled = |p: &BoundaryPoint| 10.0 * probe(p);
    let mut grads = Vec::new();
    for n in [8, 16] {
        let m = build_mesh(&Curve::square(0.5), &MeshSpec::Uniform(n)).unwrap();
        let s = DiscreteSpace::constant(&m, SpaceKind::Pq, 0).unwrap();
        let a = stability_check_cor33(&m, &s, &probe).unwrap();
        let b = stability_check_cor33(&m, &s, &scaled).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(!x.skipped);
            assert!((x.grad_v - y.grad_v).abs() < 1e-9 * x.grad_v);
            assert!((x.kprime - y.kprime).abs() < 1e-9 * x.kprime.max(1e-300));
            grads.push(x.grad_v);
        }
    }
    assert!(spread(&grads) < 1.5, "{grads:?}");
    let m = build_mesh(&Curve::square(0.5), &MeshSpec::Uniform(8)).unwrap();
    let s = DiscreteSpace::constant(&m, SpaceKind::Pq, 1).unwrap();
    let inside = stability_check_cor33(&m, &s, &|p| p.x.x).unwrap();
    assert!(inside.iter().all(|r| r.skipped));
}
