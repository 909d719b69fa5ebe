//! Computable norms, projections and the generalized eigensolver used to
//! measure constants.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{BemError, Result};
use crate::mesh::{refine, BoundaryMesh, BoundaryPoint, DEFAULT_NEIGHBOR_CAP};
use crate::operators::assemble_v;
use crate::pairs::pair_nodes;
use crate::quadrature::element_rule;
use crate::spaces::{DegreeDistribution, DiscreteSpace, SpaceKind, WeightFunction};

/// Largest pencil dimension accepted by [`solve_pencil`].
pub const MAX_PENCIL_DIM: usize = 4096;

/// Which norm a measured quantity refers to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormKind {
    WeightedL2,
    EnergyV,
    EnergyWStab,
    SlobodeckiiHalf,
    H1Gamma,
}

/// A boundary function given either pointwise or by coefficients.
pub enum Field<'a> {
    Callable(&'a (dyn Fn(&BoundaryPoint) -> f64 + Sync)),
    Discrete {
        space: &'a DiscreteSpace,
        coeffs: &'a [f64],
        /// Use the arclength derivative instead of the function.
        derivative: bool,
    },
}

impl Field<'_> {
    fn value(&self, mesh: &BoundaryMesh, p: &BoundaryPoint) -> f64 {
        match self {
            Field::Callable(f) => f(p),
            Field::Discrete {
                space,
                coeffs,
                derivative,
            } => space.eval(mesh, coeffs, p.element, p.t, *derivative),
        }
    }

    fn degree(&self, elem: usize) -> usize {
        match self {
            Field::Callable(_) => 4,
            Field::Discrete { space, .. } => space.local_degree(elem),
        }
    }
}

/// `‖w f‖_{L²(Γ)}`, integrated elementwise with rules graded toward the nodes.
pub fn weighted_l2_norm(
    mesh: &BoundaryMesh,
    degrees: &DegreeDistribution,
    w: &WeightFunction,
    f: &Field<'_>,
) -> f64 {
    element_contributions(mesh, degrees, w, f).iter().sum::<f64>().sqrt()
}

/// Elementwise squares `‖w f‖²_{L²(T)}`.
pub fn element_contributions(
    mesh: &BoundaryMesh,
    degrees: &DegreeDistribution,
    w: &WeightFunction,
    f: &Field<'_>,
) -> Vec<f64> {
    (0..mesh.num_elements())
        .map(|e| {
            let len = mesh.element(e).len();
            element_rule(f.degree(e))
                .iter()
                .map(|(t, wt)| {
                    let p = mesh.boundary_point(e, t);
                    let v = w.value(mesh, degrees, &p) * f.value(mesh, &p);
                    wt * len * v * v
                })
                .sum()
        })
        .collect()
}

/// `sqrt(xᵀ A x)` for a symmetric positive definite `A`.
pub fn energy_norm(a: &DMatrix<f64>, x: &[f64]) -> Result<f64> {
    if a.nrows() != x.len() || a.ncols() != x.len() {
        return Err(BemError::DimensionMismatch(format!(
            "{}x{} matrix and vector of length {}",
            a.nrows(),
            a.ncols(),
            x.len()
        )));
    }
    let chol = Cholesky::new(a.clone()).ok_or_else(|| {
        BemError::NotPositiveDefinite("energy matrix is indefinite; is diam(Γ) < 1?".into())
    })?;
    let v = chol.l().transpose() * DVector::from_column_slice(x);
    Ok(v.norm())
}

/// `W + m mᵀ` with `m_j = ∫ v_j` on closed curves, `W` itself on open ones.
pub fn w_stabilized(mesh: &BoundaryMesh, space: &DiscreteSpace, w: &DMatrix<f64>) -> DMatrix<f64> {
    if mesh.is_closed() {
        let m = space.integrals(mesh);
        w + &m * m.transpose()
    } else {
        w.clone()
    }
}

/// Elementwise L² projection of `f` onto a `P^q` space.
pub fn l2_project(mesh: &BoundaryMesh, target: &DiscreteSpace, f: &(dyn Fn(&BoundaryPoint) -> f64 + Sync)) -> Result<DVector<f64>> {
    if target.kind() != SpaceKind::Pq {
        return Err(BemError::InvalidArgument("L² projection targets P^q spaces".into()));
    }
    target.check_mesh(mesh)?;
    let mut c = DVector::zeros(target.dim());
    let mut basis = Vec::new();
    for e in 0..mesh.num_elements() {
        let q = target.degree(e);
        basis.resize(q + 1, 0.0);
        let dofs = target.local_dofs(mesh, e);
        let rule = element_rule(q + 4);
        for (t, w) in rule.iter() {
            let fv = f(&mesh.boundary_point(e, t));
            target.local_basis(e, t, false, &mut basis);
            for (k, b) in basis.iter().enumerate() {
                c[dofs[k].unwrap()] += w * fv * b;
            }
        }
        for k in 0..=q {
            c[dofs[k].unwrap()] *= 2.0 * k as f64 + 1.0;
        }
    }
    Ok(c)
}

/// Measured ratio `‖(1 - Π_h) f‖_V / ‖h^{1/2} (1 - Π_h) f‖_{L²}`.
///
/// The numerator represents `(1 - Π_h) f` by `Π_fine f - Π_h f` on the
/// uniformly refined mesh, where it is discrete.
pub fn duality_ratio(mesh: &BoundaryMesh, space: &DiscreteSpace, f: &(dyn Fn(&BoundaryPoint) -> f64 + Sync)) -> Result<f64> {
    Ok(duality_ratio_report(mesh, space, f)?.ratio)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    pub ratio: f64,
    pub numerator: f64,
    pub denominator: f64,
    /// `‖h^{1/2}(f - Π_fine f)‖ / ‖h^{1/2}(f - Π_h f)‖`: the part of the
    /// residual the finer space cannot see.
    pub saturation: f64,
}

pub fn duality_ratio_report(
    mesh: &BoundaryMesh,
    space: &DiscreteSpace,
    f: &(dyn Fn(&BoundaryPoint) -> f64 + Sync),
) -> Result<DualityReport> {
    let coarse = l2_project(mesh, space, f)?;
    let resid = |p: &BoundaryPoint| f(p) - space.eval(mesh, coarse.as_slice(), p.element, p.t, false);
    let degs = space.degrees();
    let denominator = weighted_l2_norm(mesh, degs, &WeightFunction::mesh_only(), &Field::Callable(&resid));
    if denominator < 1e-14 {
        return Ok(DualityReport {
            ratio: 0.0,
            numerator: 0.0,
            denominator,
            saturation: 0.0,
        });
    }
    let all: std::collections::BTreeSet<usize> = (0..mesh.num_elements()).collect();
    let (fine, parents) = refine(mesh, &all, DEFAULT_NEIGHBOR_CAP)?;
    let fine_space = DiscreteSpace::new(&fine, SpaceKind::Pq, degs.inherit(&parents))?;
    let coarse_on_fine = |p: &BoundaryPoint| {
        let parent = mesh.element(parents[p.element]);
        let t = ((p.s - parent.s0) / parent.len()).clamp(0.0, 1.0);
        space.eval(mesh, coarse.as_slice(), parent.id, t, false)
    };
    let diff = |p: &BoundaryPoint| f(p) - coarse_on_fine(p);
    let r = l2_project(&fine, &fine_space, &diff)?;
    let v = assemble_v(&fine, &fine_space)?.matrix;
    let numerator = energy_norm(&v, r.as_slice())?;
    let fine_resid = |p: &BoundaryPoint| diff(p) - fine_space.eval(&fine, r.as_slice(), p.element, p.t, false);
    let coarse_h: Vec<f64> = parents.iter().map(|&p| mesh.element(p).h.sqrt()).collect();
    let sat = weighted_l2_norm(
        &fine,
        fine_space.degrees(),
        &WeightFunction::PerElement(coarse_h),
        &Field::Callable(&fine_resid),
    );
    Ok(DualityReport {
        ratio: numerator / denominator,
        numerator,
        denominator,
        saturation: sat / denominator,
    })
}

/// `(∫_Γ ∫_Γ |v(x) - v(y)|² / |x - y|² ds_x ds_y)^{1/2}` for continuous `v`.
pub fn slobodeckii_seminorm(mesh: &BoundaryMesh, space: &DiscreteSpace, coeffs: &[f64]) -> Result<f64> {
    space.check_mesh(mesh)?;
    if coeffs.len() != space.dim() {
        return Err(BemError::DimensionMismatch(format!(
            "{} coefficients for a space of dimension {}",
            coeffs.len(),
            space.dim()
        )));
    }
    if space.kind() == SpaceKind::Pq {
        let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs())).max(1.0);
        let n = mesh.num_elements();
        let interior = if mesh.is_closed() { n } else { n - 1 };
        for e in 0..interior {
            let next = (e + 1) % n;
            let jump = space.eval(mesh, coeffs, e, 1.0, false) - space.eval(mesh, coeffs, next, 0.0, false);
            if jump.abs() > 1e-10 * scale {
                return Err(BemError::InvalidArgument(format!(
                    "function jumps by {jump:e} at the end of element {e}"
                )));
            }
        }
    }
    let n = mesh.num_elements();
    let mut total = 0.0;
    for ex in 0..n {
        for ey in 0..n {
            let px = space.local_degree(ex);
            let py = space.local_degree(ey);
            for node in pair_nodes(mesh, ex, ey, px + 2, py + 2, false)? {
                let g = mesh.pair(ex, node.tx, ey, node.ty);
                let d = space.eval(mesh, coeffs, ex, node.tx, false) - space.eval(mesh, coeffs, ey, node.ty, false);
                total += node.w * d * d / (g.dist * g.dist);
            }
        }
    }
    Ok(total.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PencilResult {
    pub lambda_max: f64,
    pub eigenvector: Vec<f64>,
    /// `‖B x - λ A x‖ / ‖x‖`.
    pub residual: f64,
    /// `sqrt(lambda_max)`.
    pub constant: f64,
    pub dims: usize,
}

/// Largest eigenvalue of `B x = λ A x` for symmetric `B` and symmetric
/// positive definite `A`.
pub fn solve_pencil(b: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<PencilResult> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || b.ncols() != n {
        return Err(BemError::DimensionMismatch(format!(
            "pencil with A {:?} and B {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if n == 0 || n > MAX_PENCIL_DIM {
        return Err(BemError::DimensionMismatch(format!(
            "pencil dimension {n} outside 1..={MAX_PENCIL_DIM}"
        )));
    }
    let chol = Cholesky::new(a.clone())
        .ok_or_else(|| BemError::NotPositiveDefinite("pencil matrix A".into()))?;
    let l = chol.l();
    // C = L⁻¹ B L⁻ᵀ
    let y = l
        .solve_lower_triangular(b)
        .ok_or_else(|| BemError::SingularSystem("triangular solve".into()))?;
    let c = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| BemError::SingularSystem("triangular solve".into()))?;
    let c = 0.5 * (&c + c.transpose());
    let eig = SymmetricEigen::new(c);
    let (imax, lambda) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let yv = eig.eigenvectors.column(imax).into_owned();
    let mut x = l
        .transpose()
        .solve_upper_triangular(&yv)
        .ok_or_else(|| BemError::SingularSystem("triangular solve".into()))?;
    x /= x.norm();
    let residual = (b * &x - lambda * (a * &x)).norm();
    Ok(PencilResult {
        lambda_max: lambda,
        eigenvector: x.iter().copied().collect(),
        residual,
        constant: lambda.max(0.0).sqrt(),
        dims: n,
    })
}
