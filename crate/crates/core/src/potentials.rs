//! Fundamental solution and the single- and double-layer potentials off the
//! boundary.
//!
//! Straight elements with densities of degree at most one use closed-form
//! antiderivatives; everything else uses Gauss quadrature, graded toward the
//! nearest boundary point when the evaluation point is close.

use std::f64::consts::PI;

use crate::error::{BemError, Result};
use crate::mesh::{BoundaryMesh, Piece, Vec2};
use crate::pairs::cached_gauss;
use crate::quadrature::graded_nodes;
use crate::spaces::{local_basis, DiscreteSpace, SpaceKind};

pub use crate::quadrature::log_gauss_rule;

/// Geometric grading ratio toward near-singular points.
pub const GRADING_RATIO: f64 = 0.15;
/// Maximal number of grading levels.
pub const GRADING_DEPTH: usize = 20;

/// Laplace fundamental solution in dimension `d` (2 or 3).
pub fn kernel_eval(d: usize, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != d || y.len() != d {
        return Err(BemError::DimensionMismatch(format!(
            "points must have {d} coordinates"
        )));
    }
    let r = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    if r == 0.0 {
        return Err(BemError::InvalidArgument("kernel is singular at x = y".into()));
    }
    match d {
        2 => Ok(-r.ln() / (2.0 * PI)),
        3 => Ok(1.0 / (4.0 * PI * r)),
        _ => Err(BemError::InvalidArgument(format!("dimension {d} not supported"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layer {
    Single,
    Double,
}

/// `Ṽφ(x) = ∫_Γ G(x, y) φ(y) ds_y` for `x` off the boundary.
pub fn eval_single_layer(mesh: &BoundaryMesh, space: &DiscreteSpace, coeffs: &[f64], x: Vec2) -> Result<f64> {
    eval_layer(mesh, space, coeffs, x, Layer::Single)
}

/// `K̃φ(x) = ∫_Γ ∂_{ν(y)} G(x, y) φ(y) ds_y` for `x` off the boundary.
pub fn eval_double_layer(mesh: &BoundaryMesh, space: &DiscreteSpace, coeffs: &[f64], x: Vec2) -> Result<f64> {
    eval_layer(mesh, space, coeffs, x, Layer::Double)
}

fn eval_layer(mesh: &BoundaryMesh, space: &DiscreteSpace, coeffs: &[f64], x: Vec2, layer: Layer) -> Result<f64> {
    if coeffs.len() != space.dim() {
        return Err(BemError::DimensionMismatch(format!(
            "{} coefficients for a space of dimension {}",
            coeffs.len(),
            space.dim()
        )));
    }
    if space.num_elements() != mesh.num_elements() {
        return Err(BemError::MeshMismatch("space was built on a different mesh".into()));
    }
    let scale = mesh.curve().diameter().max(1e-300);
    let mut total = 0.0;
    let mut local = Vec::new();
    for e in 0..mesh.num_elements() {
        let (tc, dist) = mesh.closest_on_element(e, x);
        if dist <= 1e-14 * scale {
            return Err(BemError::PointOnBoundary(format!(
                "point ({}, {}) lies on element {e} at t = {tc}",
                x.x, x.y
            )));
        }
        let p = space.local_degree(e);
        local.resize(p + 1, 0.0);
        element_integrals(mesh, e, space.kind(), p, x, tc, dist, layer, &mut local);
        for (d, v) in space.local_dofs(mesh, e).iter().zip(&local) {
            if let Some(j) = d {
                total += coeffs[*j] * v;
            }
        }
    }
    Ok(total)
}

#[allow(clippy::too_many_arguments)]
fn element_integrals(
    mesh: &BoundaryMesh,
    e: usize,
    kind: SpaceKind,
    p: usize,
    x: Vec2,
    tc: f64,
    dist: f64,
    layer: Layer,
    out: &mut [f64],
) {
    let el = mesh.element(e);
    let piece = mesh.piece_of(e);
    if let (Piece::Segment { .. }, true) = (piece, p <= 1) {
        let p0 = piece.point(el.s0);
        let tau = piece.tangent(el.s0);
        let nu = piece.normal(el.s0);
        let (i0, it) = segment_integrals(x, p0, tau, nu, el.len(), layer);
        // Local basis b(t) = α + β t.
        let coef: &[(f64, f64)] = match (kind, p) {
            (SpaceKind::Pq, 0) => &[(1.0, 0.0)],
            (SpaceKind::Pq, _) => &[(1.0, 0.0), (-1.0, 2.0)],
            (_, _) => &[(1.0, -1.0), (0.0, 1.0)],
        };
        for (o, (a, b)) in out.iter_mut().zip(coef) {
            *o = a * i0 + b * it;
        }
        return;
    }
    out.iter_mut().for_each(|o| *o = 0.0);
    let len = el.len();
    let gauss = cached_gauss(p + 14);
    let mut nodes = Vec::new();
    if dist < el.h {
        graded_nodes(gauss, tc, GRADING_RATIO, GRADING_DEPTH, dist / len, &mut nodes);
    } else {
        nodes.extend(gauss.iter());
    }
    let mut basis = vec![0.0; p + 1];
    for (t, w) in nodes {
        let s = el.s_at(t);
        let d = x - piece.point(s);
        let r2 = d.norm_squared();
        let k = match layer {
            Layer::Single => -0.5 * r2.ln() / (2.0 * PI),
            Layer::Double => d.dot(&piece.normal(s)) / (2.0 * PI * r2),
        };
        local_basis(kind, p, t, false, &mut basis);
        for (o, b) in out.iter_mut().zip(&basis) {
            *o += w * len * k * b;
        }
    }
}

/// Integrals of the kernel against `1` and `t = σ/ℓ` over a straight
/// segment `y(σ) = p0 + σ τ`, `σ ∈ [0, ℓ]`.
fn segment_integrals(x: Vec2, p0: Vec2, tau: Vec2, nu: Vec2, len: f64, layer: Layer) -> (f64, f64) {
    let a = (x - p0).dot(&tau);
    let b = (x - p0).dot(&nu);
    let (u0, u1) = (-a, len - a);
    match layer {
        Layer::Single => {
            let f0 = |u: f64| {
                let r2 = u * u + b * b;
                let atan = if b == 0.0 { 0.0 } else { 2.0 * b * (u / b).atan() };
                let lg = if r2 > 0.0 { u * r2.ln() } else { 0.0 };
                0.5 * (lg - 2.0 * u + atan)
            };
            let f1 = |u: f64| {
                let r2 = u * u + b * b;
                let lg = if r2 > 0.0 { r2 * r2.ln() } else { 0.0 };
                0.25 * (lg - u * u)
            };
            let i0 = f0(u1) - f0(u0);
            let i1 = a * i0 + f1(u1) - f1(u0);
            let c = -1.0 / (2.0 * PI);
            (c * i0, c * i1 / len)
        }
        Layer::Double => {
            // (x - y)·ν = b, |x - y|² = u² + b²
            if b == 0.0 {
                return (0.0, 0.0);
            }
            let j0 = (u1 / b).atan() - (u0 / b).atan();
            let j1 = a * j0 + 0.5 * b * ((u1 * u1 + b * b) / (u0 * u0 + b * b)).ln();
            let c = 1.0 / (2.0 * PI);
            (c * j0, c * j1 / len)
        }
    }
}
