//! Piecewise polynomial spaces on a boundary mesh.
//!
//! `P^q` is discontinuous with shifted Legendre polynomials `L_k(2t - 1)` as
//! local basis (unnormalized, so `L_k(1) = 1`). `S^{q+1}` is continuous with
//! hat functions plus integrated Legendre bubbles
//! `b_k = (L_k - L_{k-2}) / (2(2k - 1))`, chosen so that `b_k' = L_{k-1}` in
//! the local variable. Global numbering puts node unknowns first, then
//! bubbles element by element.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{BemError, Result};
use crate::legendre;
use crate::mesh::{BoundaryMesh, BoundaryPoint};
use crate::quadrature::{element_rule, gauss_legendre};

/// Largest supported local degree `q`.
pub const MAX_DEGREE: usize = 20;

pub type BoundaryFn = Arc<dyn Fn(&BoundaryPoint) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpaceKind {
    /// Discontinuous piecewise polynomials of degree `q(T)`.
    Pq,
    /// Continuous piecewise polynomials of degree `q(T) + 1`.
    Sq1,
    /// `Sq1` vanishing at the endpoints of an open curve.
    Sq1Tilde,
}

/// Polynomial degree `q(T)` per element.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegreeDistribution(pub Vec<usize>);

impl DegreeDistribution {
    pub fn constant(n: usize, q: usize) -> Self {
        DegreeDistribution(vec![q; n])
    }

    pub fn max(&self) -> usize {
        self.0.iter().copied().max().unwrap_or(0)
    }

    pub fn min(&self) -> usize {
        self.0.iter().copied().min().unwrap_or(0)
    }

    /// Children inherit the degree of their parent.
    pub fn inherit(&self, parents: &[usize]) -> Self {
        DegreeDistribution(parents.iter().map(|&p| self.0[p]).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSpace {
    kind: SpaceKind,
    degrees: DegreeDistribution,
    closed: bool,
    mesh_hash: String,
    node_dof: Vec<Option<usize>>,
    element_offset: Vec<usize>,
    dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceJson {
    pub kind: SpaceKind,
    pub degrees: Vec<usize>,
    pub dim: usize,
}

impl DiscreteSpace {
    pub fn new(mesh: &BoundaryMesh, kind: SpaceKind, degrees: DegreeDistribution) -> Result<Self> {
        let n = mesh.num_elements();
        if degrees.0.len() != n {
            return Err(BemError::MeshMismatch(format!(
                "{} degrees for {n} elements",
                degrees.0.len()
            )));
        }
        if let Some(&q) = degrees.0.iter().find(|&&q| q > MAX_DEGREE) {
            return Err(BemError::DegreeOutOfRange {
                degree: q,
                max: MAX_DEGREE,
            });
        }
        let closed = mesh.is_closed();
        let mut node_dof = Vec::new();
        let mut element_offset = Vec::with_capacity(n);
        let mut dim = 0;
        match kind {
            SpaceKind::Pq => {
                for &q in &degrees.0 {
                    element_offset.push(dim);
                    dim += q + 1;
                }
            }
            SpaceKind::Sq1 | SpaceKind::Sq1Tilde => {
                let nn = mesh.num_nodes();
                for k in 0..nn {
                    let boundary = !closed && (k == 0 || k == nn - 1);
                    if kind == SpaceKind::Sq1Tilde && boundary {
                        node_dof.push(None);
                    } else {
                        node_dof.push(Some(dim));
                        dim += 1;
                    }
                }
                for &q in &degrees.0 {
                    element_offset.push(dim);
                    dim += q;
                }
            }
        }
        Ok(DiscreteSpace {
            kind,
            degrees,
            closed,
            mesh_hash: mesh.hash(),
            node_dof,
            element_offset,
            dim,
        })
    }

    pub fn constant(mesh: &BoundaryMesh, kind: SpaceKind, q: usize) -> Result<Self> {
        Self::new(mesh, kind, DegreeDistribution::constant(mesh.num_elements(), q))
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn degrees(&self) -> &DegreeDistribution {
        &self.degrees
    }

    pub fn degree(&self, elem: usize) -> usize {
        self.degrees.0[elem]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_elements(&self) -> usize {
        self.degrees.0.len()
    }

    pub fn is_continuous(&self) -> bool {
        self.kind != SpaceKind::Pq
    }

    pub fn mesh_hash(&self) -> &str {
        &self.mesh_hash
    }

    /// Fails unless the space was built on `mesh`.
    pub fn check_mesh(&self, mesh: &BoundaryMesh) -> Result<()> {
        if mesh.num_elements() != self.num_elements() || mesh.hash() != self.mesh_hash {
            return Err(BemError::MeshMismatch(
                "space was built on a different mesh".into(),
            ));
        }
        Ok(())
    }

    /// Local polynomial degree on `elem`.
    pub fn local_degree(&self, elem: usize) -> usize {
        match self.kind {
            SpaceKind::Pq => self.degrees.0[elem],
            _ => self.degrees.0[elem] + 1,
        }
    }

    pub fn local_len(&self, elem: usize) -> usize {
        self.local_degree(elem) + 1
    }

    /// Global index of every local basis function, `None` where the global
    /// function is constrained to zero.
    pub fn local_dofs(&self, mesh: &BoundaryMesh, elem: usize) -> Vec<Option<usize>> {
        let off = self.element_offset[elem];
        match self.kind {
            SpaceKind::Pq => (0..self.local_len(elem)).map(|k| Some(off + k)).collect(),
            _ => {
                let (a, b) = mesh.element_nodes(elem);
                let mut v = vec![self.node_dof[a], self.node_dof[b]];
                v.extend((0..self.degrees.0[elem]).map(|k| Some(off + k)));
                v
            }
        }
    }

    /// Local basis values (or `t`-derivatives) on one element.
    pub fn local_basis(&self, elem: usize, t: f64, derivative: bool, out: &mut [f64]) {
        local_basis(self.kind, self.local_degree(elem), t, derivative, out);
    }

    /// Basis function `local` on `elem` at parameter `t`; with `derivative`
    /// the arclength derivative.
    pub fn eval_basis(
        &self,
        mesh: &BoundaryMesh,
        elem: usize,
        local: usize,
        t: f64,
        derivative: bool,
    ) -> Result<f64> {
        if elem >= self.num_elements() || local >= self.local_len(elem) {
            return Err(BemError::InvalidArgument(format!(
                "basis function ({elem}, {local}) does not exist"
            )));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(BemError::InvalidArgument(format!("parameter {t} outside [0, 1]")));
        }
        let mut buf = vec![0.0; self.local_len(elem)];
        self.local_basis(elem, t, derivative, &mut buf);
        let scale = if derivative {
            1.0 / mesh.element(elem).len()
        } else {
            1.0
        };
        Ok(buf[local] * scale)
    }

    /// Value of `Σ c_j φ_j` (or its arclength derivative) at `(elem, t)`.
    pub fn eval(&self, mesh: &BoundaryMesh, coeffs: &[f64], elem: usize, t: f64, derivative: bool) -> f64 {
        let mut buf = vec![0.0; self.local_len(elem)];
        self.local_basis(elem, t, derivative, &mut buf);
        let dofs = self.local_dofs(mesh, elem);
        let v: f64 = dofs
            .iter()
            .zip(&buf)
            .filter_map(|(d, b)| d.map(|j| coeffs[j] * b))
            .sum();
        if derivative {
            v / mesh.element(elem).len()
        } else {
            v
        }
    }

    /// Interpolant of `f`: elementwise L² projection for `Pq`, nodal values
    /// plus H¹-projected bubbles for the continuous spaces.
    pub fn interpolate(&self, mesh: &BoundaryMesh, f: &dyn Fn(&BoundaryPoint) -> f64) -> DVector<f64> {
        let mut c = DVector::zeros(self.dim);
        match self.kind {
            SpaceKind::Pq => {
                for e in 0..self.num_elements() {
                    let loc = l2_legendre_coeffs(mesh, e, self.degree(e), f);
                    for (k, v) in loc.into_iter().enumerate() {
                        c[self.element_offset[e] + k] = v;
                    }
                }
            }
            _ => {
                for e in 0..self.num_elements() {
                    let f0 = f(&mesh.boundary_point(e, 0.0));
                    let f1 = f(&mesh.boundary_point(e, 1.0));
                    let dofs = self.local_dofs(mesh, e);
                    if let Some(j) = dofs[0] {
                        c[j] = f0;
                    }
                    if let Some(j) = dofs[1] {
                        c[j] = f1;
                    }
                    let q = self.degree(e);
                    if q == 0 {
                        continue;
                    }
                    // b_k coefficient = -(2k-1) ∫ g (L_{k-1})' dt with g = f - linear part.
                    let rule = gauss_legendre(q + 12);
                    let mut val = vec![0.0; q + 1];
                    let mut der = vec![0.0; q + 1];
                    let mut acc = vec![0.0; q];
                    for (t, w) in rule.iter() {
                        let g = f(&mesh.boundary_point(e, t)) - (f0 * (1.0 - t) + f1 * t);
                        legendre::shifted_values_and_derivatives(q, t, &mut val, &mut der);
                        for (i, a) in acc.iter_mut().enumerate() {
                            // bubble k = i + 2
                            *a += w * g * der[i + 1];
                        }
                    }
                    for (i, a) in acc.iter().enumerate() {
                        let k = (i + 2) as f64;
                        c[dofs[2 + i].unwrap()] = -(2.0 * k - 1.0) * a;
                    }
                }
            }
        }
        c
    }

    /// Derivative map `D` from this continuous space into `P^q` with the
    /// same degree distribution: `(Σ c_j v_j)' = Σ (D c)_k ψ_k`.
    pub fn derivative_map(&self, mesh: &BoundaryMesh) -> Result<(DiscreteSpace, DMatrix<f64>)> {
        if self.kind == SpaceKind::Pq {
            return Err(BemError::InvalidArgument(
                "derivative map needs a continuous space".into(),
            ));
        }
        let target = DiscreteSpace::new(mesh, SpaceKind::Pq, self.degrees.clone())?;
        let mut d = DMatrix::zeros(target.dim, self.dim);
        for e in 0..self.num_elements() {
            let inv = 1.0 / mesh.element(e).len();
            let row0 = target.element_offset[e];
            let dofs = self.local_dofs(mesh, e);
            if let Some(j) = dofs[0] {
                d[(row0, j)] -= inv;
            }
            if let Some(j) = dofs[1] {
                d[(row0, j)] += inv;
            }
            for k in 2..self.local_len(e) {
                d[(row0 + k - 1, dofs[k].unwrap())] += inv;
            }
        }
        Ok((target, d))
    }

    /// Embeds coefficients of the continuous space into discontinuous
    /// `P^{q+1}` with identical pointwise values.
    pub fn to_discontinuous(&self, mesh: &BoundaryMesh, coeffs: &[f64]) -> Result<(DiscreteSpace, DVector<f64>)> {
        if self.kind == SpaceKind::Pq {
            return Ok((self.clone(), DVector::from_column_slice(coeffs)));
        }
        let degs = DegreeDistribution(self.degrees.0.iter().map(|q| q + 1).collect());
        let target = DiscreteSpace::new(mesh, SpaceKind::Pq, degs)?;
        let f = |p: &BoundaryPoint| self.eval(mesh, coeffs, p.element, p.t, false);
        Ok((target.clone(), target.interpolate(mesh, &f)))
    }

    /// Maps `Sq1Tilde` coefficients to `Sq1` coefficients on the same mesh.
    pub fn tilde_to_full(&self, mesh: &BoundaryMesh, coeffs: &[f64]) -> Result<(DiscreteSpace, DVector<f64>)> {
        if self.kind != SpaceKind::Sq1Tilde {
            return Err(BemError::InvalidArgument("expected an Sq1Tilde space".into()));
        }
        let full = DiscreteSpace::new(mesh, SpaceKind::Sq1, self.degrees.clone())?;
        let mut out = DVector::zeros(full.dim);
        for e in 0..self.num_elements() {
            for (a, b) in self.local_dofs(mesh, e).iter().zip(full.local_dofs(mesh, e)) {
                if let (Some(a), Some(b)) = (a, b) {
                    out[b] = coeffs[*a];
                }
            }
        }
        Ok((full, out))
    }

    /// `∫_Γ f φ_j ds` for every basis function.
    ///
    /// The rule is graded toward the nodes, where traces of piecewise
    /// densities are singular.
    pub fn load_vector(&self, mesh: &BoundaryMesh, f: &dyn Fn(&BoundaryPoint) -> f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        let mut buf = Vec::new();
        for e in 0..self.num_elements() {
            let len = mesh.element(e).len();
            let rule = element_rule(self.local_degree(e) + 8);
            let dofs = self.local_dofs(mesh, e);
            buf.resize(dofs.len(), 0.0);
            for (t, w) in rule.iter() {
                let fv = f(&mesh.boundary_point(e, t)) * w * len;
                self.local_basis(e, t, false, &mut buf);
                for (d, b) in dofs.iter().zip(&buf) {
                    if let Some(j) = d {
                        out[*j] += fv * b;
                    }
                }
            }
        }
        out
    }

    /// Integrals `∫_Γ φ_j ds`.
    pub fn integrals(&self, mesh: &BoundaryMesh) -> DVector<f64> {
        self.load_vector(mesh, &|_| 1.0)
    }

    pub fn to_json(&self) -> SpaceJson {
        SpaceJson {
            kind: self.kind,
            degrees: self.degrees.0.clone(),
            dim: self.dim,
        }
    }

    pub fn from_json(mesh: &BoundaryMesh, json: &SpaceJson) -> Result<Self> {
        let s = DiscreteSpace::new(mesh, json.kind, DegreeDistribution(json.degrees.clone()))?;
        if s.dim != json.dim {
            return Err(BemError::DimensionMismatch(format!(
                "stored dimension {} but the mesh gives {}",
                json.dim, s.dim
            )));
        }
        Ok(s)
    }

    /// Whether this space lives on a closed curve.
    pub fn is_closed(&self) -> bool {
        self.closed
    }
}

/// Local basis of a space kind with local polynomial degree `p`.
pub fn local_basis(kind: SpaceKind, p: usize, t: f64, derivative: bool, out: &mut [f64]) {
    match kind {
        SpaceKind::Pq => {
            if derivative {
                let mut val = vec![0.0; p + 1];
                legendre::shifted_values_and_derivatives(p, t, &mut val, out);
            } else {
                legendre::shifted_values(p, t, out);
            }
        }
        SpaceKind::Sq1 | SpaceKind::Sq1Tilde => {
            if derivative {
                out[0] = -1.0;
                out[1] = 1.0;
                if p >= 2 {
                    let mut l = vec![0.0; p];
                    legendre::shifted_values(p - 1, t, &mut l);
                    out[2..(p + 1)].copy_from_slice(&l[1..p]);
                }
            } else {
                out[0] = 1.0 - t;
                out[1] = t;
                if p >= 2 {
                    let mut l = vec![0.0; p + 1];
                    legendre::shifted_values(p, t, &mut l);
                    for k in 2..=p {
                        out[k] = (l[k] - l[k - 2]) / (2.0 * (2.0 * k as f64 - 1.0));
                    }
                }
            }
        }
    }
}

fn l2_legendre_coeffs(mesh: &BoundaryMesh, elem: usize, q: usize, f: &dyn Fn(&BoundaryPoint) -> f64) -> Vec<f64> {
    let rule = gauss_legendre(q + 12);
    let mut l = vec![0.0; q + 1];
    let mut c = vec![0.0; q + 1];
    for (t, w) in rule.iter() {
        let fv = f(&mesh.boundary_point(elem, t));
        legendre::shifted_values(q, t, &mut l);
        for k in 0..=q {
            c[k] += w * fv * l[k];
        }
    }
    for (k, ck) in c.iter_mut().enumerate() {
        *ck *= 2.0 * k as f64 + 1.0;
    }
    c
}

/// Mass matrix `∫_Γ ψ_k φ_j ds` with rows from `test`, columns from `trial`.
pub fn mass_matrix(mesh: &BoundaryMesh, test: &DiscreteSpace, trial: &DiscreteSpace) -> Result<DMatrix<f64>> {
    test.check_mesh(mesh)?;
    trial.check_mesh(mesh)?;
    let mut m = DMatrix::zeros(test.dim(), trial.dim());
    for e in 0..mesh.num_elements() {
        let len = mesh.element(e).len();
        let (na, nb) = (test.local_len(e), trial.local_len(e));
        let rule = gauss_legendre((na + nb) / 2 + 2);
        let da = test.local_dofs(mesh, e);
        let db = trial.local_dofs(mesh, e);
        let mut a = vec![0.0; na];
        let mut b = vec![0.0; nb];
        for (t, w) in rule.iter() {
            test.local_basis(e, t, false, &mut a);
            trial.local_basis(e, t, false, &mut b);
            for (i, di) in da.iter().enumerate() {
                let Some(i2) = di else { continue };
                for (j, dj) in db.iter().enumerate() {
                    if let Some(j2) = dj {
                        m[(*i2, *j2)] += w * len * a[i] * b[j];
                    }
                }
            }
        }
    }
    Ok(m)
}

/// Weight functions used in weighted norms and inverse estimates.
#[derive(Clone)]
pub enum WeightFunction {
    Constant(f64),
    /// `h_T^{h_exp} (q_T + 1)^{degree_exp}`, constant per element.
    MeshPower { h_exp: f64, degree_exp: f64 },
    PerElement(Vec<f64>),
    Pointwise(BoundaryFn),
}

impl fmt::Debug for WeightFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightFunction::Constant(c) => write!(f, "Constant({c})"),
            WeightFunction::MeshPower { h_exp, degree_exp } => {
                write!(f, "MeshPower {{ h_exp: {h_exp}, degree_exp: {degree_exp} }}")
            }
            WeightFunction::PerElement(v) => write!(f, "PerElement({} values)", v.len()),
            WeightFunction::Pointwise(_) => write!(f, "Pointwise(..)"),
        }
    }
}

impl WeightFunction {
    /// The weight `h^{1/2} / (q + 1)`.
    pub fn canonical() -> Self {
        WeightFunction::MeshPower {
            h_exp: 0.5,
            degree_exp: -1.0,
        }
    }

    /// The weight `h^{1/2}` without degree factor.
    pub fn mesh_only() -> Self {
        WeightFunction::MeshPower {
            h_exp: 0.5,
            degree_exp: 0.0,
        }
    }

    pub fn value(&self, mesh: &BoundaryMesh, degrees: &DegreeDistribution, p: &BoundaryPoint) -> f64 {
        match self {
            WeightFunction::Constant(c) => *c,
            WeightFunction::MeshPower { h_exp, degree_exp } => {
                let h = mesh.element(p.element).h;
                let q = degrees.0.get(p.element).copied().unwrap_or(0) as f64;
                h.powf(*h_exp) * (q + 1.0).powf(*degree_exp)
            }
            WeightFunction::PerElement(v) => v[p.element],
            WeightFunction::Pointwise(f) => f(p),
        }
    }

    pub fn is_elementwise_constant(&self) -> bool {
        !matches!(self, WeightFunction::Pointwise(_))
    }
}

/// Object whose σ-admissibility is measured.
pub enum SigmaObject<'a> {
    Degrees(&'a DegreeDistribution),
    Weight(&'a WeightFunction, &'a DegreeDistribution),
}

/// Smallest `σ` with `sup_T w ≤ σ w(x)` for all `x` in the patch of every
/// `T`; for degree distributions `w = q + 1`.
pub fn check_sigma_admissible(mesh: &BoundaryMesh, object: &SigmaObject<'_>) -> Result<f64> {
    let n = mesh.num_elements();
    let samples = 33;
    let (sup, inf): (Vec<f64>, Vec<f64>) = match object {
        SigmaObject::Degrees(d) => {
            if d.0.len() != n {
                return Err(BemError::MeshMismatch(format!("{} degrees for {n} elements", d.0.len())));
            }
            let v: Vec<f64> = d.0.iter().map(|&q| q as f64 + 1.0).collect();
            (v.clone(), v)
        }
        SigmaObject::Weight(w, d) => {
            if let WeightFunction::PerElement(v) = w {
                if v.len() != n {
                    return Err(BemError::MeshMismatch(format!("{} weights for {n} elements", v.len())));
                }
            }
            (0..n)
                .map(|e| {
                    let vals: Vec<f64> = (0..samples)
                        .map(|i| {
                            let t = i as f64 / (samples - 1) as f64;
                            w.value(mesh, d, &mesh.boundary_point(e, t))
                        })
                        .collect();
                    if vals.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                        return (f64::NAN, f64::NAN);
                    }
                    (
                        vals.iter().copied().fold(0.0, f64::max),
                        vals.iter().copied().fold(f64::INFINITY, f64::min),
                    )
                })
                .unzip()
        }
    };
    if sup.iter().any(|v| v.is_nan()) {
        return Err(BemError::InvalidArgument(
            "weight must be finite and non-negative".into(),
        ));
    }
    let mut sigma: f64 = 1.0;
    for e in 0..n {
        if sup[e] == 0.0 {
            continue;
        }
        for p in mesh.patch(e)? {
            sigma = sigma.max(if inf[p] > 0.0 { sup[e] / inf[p] } else { f64::INFINITY });
        }
    }
    Ok(sigma)
}
