//! Matrix pencils whose largest generalized eigenvalues are the sharpest
//! constants of weighted inverse estimates, and sweeps of those constants
//! over meshes and degrees.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BemError, Result};
use crate::mesh::{refine, BoundaryMesh, BoundaryPoint, DEFAULT_NEIGHBOR_CAP};
use crate::norms::{l2_project, solve_pencil, w_stabilized, PencilResult};
use crate::operators::{assemble_v, assemble_w, TraceOperator, TraceTag};
use crate::quadrature::element_rule;
use crate::spaces::{DegreeDistribution, DiscreteSpace, SpaceKind, WeightFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PencilTag {
    #[serde(rename = "cor32_V_grad")]
    Cor32VGrad,
    #[serde(rename = "cor32_Kprime")]
    Cor32Kprime,
    #[serde(rename = "cor32_K_grad")]
    Cor32KGrad,
    #[serde(rename = "cor32_W")]
    Cor32W,
    #[serde(rename = "lemmaA1")]
    LemmaA1,
    #[serde(rename = "foo2_grad")]
    Foo2Grad,
    #[serde(rename = "thm31_V_weighted")]
    Thm31VWeighted,
    #[serde(rename = "thm31_K_weighted")]
    Thm31KWeighted,
}

impl PencilTag {
    pub const ALL: [PencilTag; 8] = [
        PencilTag::Cor32VGrad,
        PencilTag::Cor32Kprime,
        PencilTag::Cor32KGrad,
        PencilTag::Cor32W,
        PencilTag::LemmaA1,
        PencilTag::Foo2Grad,
        PencilTag::Thm31VWeighted,
        PencilTag::Thm31KWeighted,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PencilTag::Cor32VGrad => "cor32_V_grad",
            PencilTag::Cor32Kprime => "cor32_Kprime",
            PencilTag::Cor32KGrad => "cor32_K_grad",
            PencilTag::Cor32W => "cor32_W",
            PencilTag::LemmaA1 => "lemmaA1",
            PencilTag::Foo2Grad => "foo2_grad",
            PencilTag::Thm31VWeighted => "thm31_V_weighted",
            PencilTag::Thm31KWeighted => "thm31_K_weighted",
        }
    }

    /// Whether the argument lives in `P^q` (measured against the `V`
    /// energy) rather than in a continuous space (measured against `W`).
    pub fn density_side(self) -> bool {
        matches!(
            self,
            PencilTag::Cor32VGrad | PencilTag::Cor32Kprime | PencilTag::LemmaA1 | PencilTag::Thm31VWeighted
        )
    }

    fn rows(self) -> &'static [RowKind] {
        match self {
            PencilTag::Cor32VGrad => &[RowKind::Trace(TraceTag::GradV)],
            PencilTag::Cor32Kprime => &[RowKind::Trace(TraceTag::Kprime)],
            PencilTag::Cor32KGrad => &[RowKind::Trace(TraceTag::GradK)],
            PencilTag::Cor32W => &[RowKind::Trace(TraceTag::W)],
            PencilTag::LemmaA1 => &[RowKind::Identity],
            PencilTag::Foo2Grad => &[RowKind::Derivative],
            PencilTag::Thm31VWeighted => &[RowKind::Trace(TraceTag::GradV), RowKind::Trace(TraceTag::Kprime)],
            PencilTag::Thm31KWeighted => &[RowKind::Trace(TraceTag::GradK), RowKind::Trace(TraceTag::W)],
        }
    }
}

impl fmt::Display for PencilTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PencilTag {
    type Err = BemError;

    fn from_str(s: &str) -> Result<Self> {
        PencilTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| BemError::InvalidArgument(format!("unknown pencil tag `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowKind {
    Trace(TraceTag),
    Identity,
    Derivative,
}

/// Which inequality to measure and with which weight.
#[derive(Debug, Clone)]
pub struct InequalitySpec {
    pub tag: PencilTag,
    /// Defaults to `h^{1/2} (q + 1)^{-1}`.
    pub weight: WeightFunction,
    pub geometry: String,
}

impl InequalitySpec {
    pub fn new(tag: PencilTag, geometry: impl Into<String>) -> Self {
        InequalitySpec {
            tag,
            weight: WeightFunction::canonical(),
            geometry: geometry.into(),
        }
    }

    pub fn with_weight(mut self, weight: WeightFunction) -> Self {
        self.weight = weight;
        self
    }

    /// The argument space of the pencil on `mesh` with the given degrees:
    /// `P^q` for density-side tags, `S^{q+1}` on closed and `S̃^{q+1}` on
    /// open curves otherwise.
    pub fn space(&self, mesh: &BoundaryMesh, degrees: DegreeDistribution) -> Result<DiscreteSpace> {
        let kind = if self.tag.density_side() {
            SpaceKind::Pq
        } else if mesh.is_closed() {
            SpaceKind::Sq1
        } else {
            SpaceKind::Sq1Tilde
        };
        DiscreteSpace::new(mesh, kind, degrees)
    }
}

const GRAM_CHUNKS: usize = 16;

/// `∫_Γ w² (L u)(L v)` with `L` given by `kind`, at element-graded points.
fn weighted_gram(mesh: &BoundaryMesh, space: &DiscreteSpace, weight: &WeightFunction, kind: RowKind) -> Result<DMatrix<f64>> {
    let n = space.dim();
    let op = match kind {
        RowKind::Trace(tag) => Some(TraceOperator::new(mesh, tag, space)?),
        _ => None,
    };
    let degrees = space.degrees();
    // Fixed chunks summed in order keep the result independent of the
    // thread count.
    let ne = mesh.num_elements();
    let chunk = ne.div_ceil(GRAM_CHUNKS).max(1);
    let partial: Vec<DMatrix<f64>> = (0..ne)
        .step_by(chunk)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|start| {
            let mut acc = DMatrix::zeros(n, n);
            for e in start..(start + chunk).min(ne) {
                let len = mesh.element(e).len();
                let rule = element_rule(2 * space.degree(e) + 2);
                let scale = |t: f64, w: f64| weight.value(mesh, degrees, &mesh.boundary_point(e, t)) * (w * len).sqrt();
                match &op {
                    Some(op) => {
                        // Dense rows: the trace couples every coefficient.
                        let mut r = DMatrix::zeros(rule.len(), n);
                        for (i, (t, w)) in rule.iter().enumerate() {
                            let s = scale(t, w);
                            for (j, v) in op.row(e, t).iter().enumerate() {
                                r[(i, j)] = s * v;
                            }
                        }
                        acc.gemm_tr(1.0, &r, &r, 1.0);
                    }
                    None => {
                        let dofs = space.local_dofs(mesh, e);
                        let mut basis = vec![0.0; dofs.len()];
                        let derivative = kind == RowKind::Derivative;
                        let arclength = if derivative { 1.0 / len } else { 1.0 };
                        for (t, w) in rule.iter() {
                            let s = scale(t, w) * arclength;
                            space.local_basis(e, t, derivative, &mut basis);
                            for (a, da) in dofs.iter().enumerate() {
                                let Some(i) = da else { continue };
                                for (c, dc) in dofs.iter().enumerate() {
                                    let Some(j) = dc else { continue };
                                    acc[(*i, *j)] += s * s * basis[a] * basis[c];
                                }
                            }
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let mut b = DMatrix::zeros(n, n);
    for p in partial {
        b += p;
    }
    Ok(0.5 * (&b + b.transpose()))
}

/// `‖w / h^{1/2}‖²_{L∞}`, sampled at the element-graded points.
fn weight_ratio_sup(mesh: &BoundaryMesh, degrees: &DegreeDistribution, weight: &WeightFunction) -> f64 {
    let mut sup: f64 = 0.0;
    for e in 0..mesh.num_elements() {
        let h = mesh.element(e).h;
        for (t, _) in element_rule(degrees.0[e]).iter().chain([(0.0, 0.0), (1.0, 0.0)]) {
            let w = weight.value(mesh, degrees, &mesh.boundary_point(e, t));
            sup = sup.max(w * w / h);
        }
    }
    sup
}

/// The pencil `(B, A)` of an inequality over `space`.
pub fn build_pencil(spec: &InequalitySpec, mesh: &BoundaryMesh, space: &DiscreteSpace) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    space.check_mesh(mesh)?;
    let expected = spec.space(mesh, space.degrees().clone())?.kind();
    if space.kind() != expected {
        return Err(BemError::InvalidArgument(format!(
            "{} on this curve needs a {expected:?} space, got {:?}",
            spec.tag,
            space.kind()
        )));
    }
    let mut b = DMatrix::zeros(space.dim(), space.dim());
    for &kind in spec.tag.rows() {
        b += weighted_gram(mesh, space, &spec.weight, kind)?;
    }
    let energy = if spec.tag.density_side() {
        assemble_v(mesh, space)?.matrix
    } else {
        let w = assemble_w(mesh, space)?.matrix;
        w_stabilized(mesh, space, &w)
    };
    let a = match spec.tag {
        PencilTag::Thm31VWeighted => {
            let alpha = weight_ratio_sup(mesh, space.degrees(), &spec.weight);
            alpha * energy + weighted_gram(mesh, space, &spec.weight, RowKind::Identity)?
        }
        PencilTag::Thm31KWeighted => {
            let alpha = weight_ratio_sup(mesh, space.degrees(), &spec.weight);
            alpha * energy + weighted_gram(mesh, space, &spec.weight, RowKind::Derivative)?
        }
        _ => energy,
    };
    Ok((b, a))
}

/// One measured constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub geometry: String,
    pub tag: PencilTag,
    pub level: usize,
    pub dofs: usize,
    pub q_min: usize,
    pub q_max: usize,
    #[serde(rename = "C")]
    pub c: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantTrace {
    pub geometry: String,
    pub tag: PencilTag,
    pub records: Vec<TraceRecord>,
}

impl ConstantTrace {
    pub fn constants(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.c).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_traces(std::slice::from_ref(self), out)
    }
}

/// Writes several traces into one CSV with the columns of [`TraceRecord`].
pub fn write_traces<W: Write>(traces: &[ConstantTrace], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for t in traces {
        for r in &t.records {
            w.serialize(r)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_traces<R: std::io::Read>(input: R) -> Result<Vec<TraceRecord>> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<std::result::Result<Vec<TraceRecord>, _>>()?)
}

/// Solves the pencil of `spec` on one mesh with the given degrees.
pub fn measure(spec: &InequalitySpec, mesh: &BoundaryMesh, degrees: DegreeDistribution) -> Result<PencilResult> {
    let space = spec.space(mesh, degrees)?;
    let (b, a) = build_pencil(spec, mesh, &space)?;
    solve_pencil(&b, &a)
}

/// Measures the constant of `spec` on every mesh for every constant degree.
///
/// Records are ordered by degree, then mesh; `level` is the mesh index.
pub fn constant_sweep(
    spec: &InequalitySpec,
    meshes: &[BoundaryMesh],
    degrees: &[usize],
    max_dofs: usize,
) -> Result<ConstantTrace> {
    let cells: Vec<(usize, usize)> = degrees
        .iter()
        .flat_map(|&q| (0..meshes.len()).map(move |l| (q, l)))
        .collect();
    let records: Vec<Result<TraceRecord>> = cells
        .par_iter()
        .map(|&(q, level)| {
            let mesh = &meshes[level];
            let degs = DegreeDistribution::constant(mesh.num_elements(), q);
            let space = spec.space(mesh, degs.clone())?;
            if space.dim() > max_dofs {
                return Err(BemError::DimensionMismatch(format!(
                    "level {level} with degree {q} has {} dofs, cap is {max_dofs}",
                    space.dim()
                )));
            }
            let (b, a) = build_pencil(spec, mesh, &space)?;
            let res = solve_pencil(&b, &a)?;
            Ok(TraceRecord {
                geometry: spec.geometry.clone(),
                tag: spec.tag,
                level,
                dofs: space.dim(),
                q_min: degs.min(),
                q_max: degs.max(),
                c: res.constant,
                residual: res.residual,
            })
        })
        .collect();
    Ok(ConstantTrace {
        geometry: spec.geometry.clone(),
        tag: spec.tag,
        records: records.into_iter().collect::<Result<_>>()?,
    })
}

/// Which projection `P_h` the stability check removes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Projection {
    L2,
    Galerkin,
}

/// Ratios `‖h^{1/2} L (1 - P_h) φ‖ / ‖h^{1/2} (1 - P_h) φ‖` for `L = (V·)'`
/// and `L = K'`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityRecord {
    pub projection: Projection,
    pub grad_v: f64,
    pub kprime: f64,
    /// Set when the probe lies in the space and both sides vanish.
    pub skipped: bool,
}

/// Boundary functions used as probes.
pub type Probe<'a> = dyn Fn(&BoundaryPoint) -> f64 + Sync + 'a;

/// Stability of `(V·)'` and `K'` on the complement of a projection.
///
/// The probe is represented on the mesh two uniform refinements finer with
/// one extra degree, where both projections and traces are computed.
pub fn stability_check_cor33(mesh: &BoundaryMesh, space: &DiscreteSpace, probe: &Probe<'_>) -> Result<Vec<StabilityRecord>> {
    if space.kind() != SpaceKind::Pq {
        return Err(BemError::InvalidArgument("stability check needs a P^q space".into()));
    }
    space.check_mesh(mesh)?;
    let all: BTreeSet<usize> = (0..mesh.num_elements()).collect();
    let (mid, p1) = refine(mesh, &all, DEFAULT_NEIGHBOR_CAP)?;
    let all: BTreeSet<usize> = (0..mid.num_elements()).collect();
    let (fine, p2) = refine(&mid, &all, DEFAULT_NEIGHBOR_CAP)?;
    let parents: Vec<usize> = p2.iter().map(|&p| p1[p]).collect();
    let fine_degrees = DegreeDistribution(parents.iter().map(|&p| space.degree(p) + 1).collect());
    let fine_space = DiscreteSpace::new(&fine, SpaceKind::Pq, fine_degrees)?;

    let coarse_at = |coeffs: &[f64], p: &BoundaryPoint| {
        let parent = mesh.element(parents[p.element]);
        let t = ((p.s - parent.s0) / parent.len()).clamp(0.0, 1.0);
        space.eval(mesh, coeffs, parent.id, t, false)
    };
    // Coarse basis functions expressed in the fine space.
    let mut prolong = DMatrix::zeros(fine_space.dim(), space.dim());
    for j in 0..space.dim() {
        let mut unit = vec![0.0; space.dim()];
        unit[j] = 1.0;
        let col = l2_project(&fine, &fine_space, &|p| coarse_at(&unit, p))?;
        prolong.set_column(j, &col);
    }
    let phi = l2_project(&fine, &fine_space, probe)?;

    let v_fine = assemble_v(&fine, &fine_space)?.matrix;
    let coarse_h: Vec<f64> = parents.iter().map(|&p| mesh.element(p).h.sqrt()).collect();
    let weight = WeightFunction::PerElement(coarse_h);
    let grad = weighted_gram(&fine, &fine_space, &weight, RowKind::Trace(TraceTag::GradV))?;
    let kp = weighted_gram(&fine, &fine_space, &weight, RowKind::Trace(TraceTag::Kprime))?;
    let mass = weighted_gram(&fine, &fine_space, &weight, RowKind::Identity)?;
    let form = |m: &DMatrix<f64>, x: &DVector<f64>| x.dot(&(m * x)).max(0.0).sqrt();

    let mut out = Vec::new();
    for projection in [Projection::L2, Projection::Galerkin] {
        let coarse = match projection {
            Projection::L2 => {
                let c = l2_project(mesh, space, probe)?;
                &prolong * c
            }
            Projection::Galerkin => {
                let a = prolong.transpose() * &v_fine * &prolong;
                let rhs = prolong.transpose() * (&v_fine * &phi);
                let c = a
                    .cholesky()
                    .ok_or_else(|| BemError::NotPositiveDefinite("coarse single-layer matrix".into()))?
                    .solve(&rhs);
                &prolong * c
            }
        };
        let r = &phi - coarse;
        let denom = form(&mass, &r);
        let scale = form(&mass, &phi).max(f64::MIN_POSITIVE);
        if denom <= 1e-12 * scale {
            out.push(StabilityRecord {
                projection,
                grad_v: 0.0,
                kprime: 0.0,
                skipped: true,
            });
            continue;
        }
        out.push(StabilityRecord {
            projection,
            grad_v: form(&grad, &r) / denom,
            kprime: form(&kp, &r) / denom,
            skipped: false,
        });
    }
    Ok(out)
}

/// `max / min` of a positive sequence.
pub fn spread(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    max / min
}

/// Whether the last three values grow monotonically by more than 2% per
/// step.
pub fn monotone_growth(values: &[f64]) -> bool {
    if values.len() < 3 {
        return false;
    }
    let t = &values[values.len() - 3..];
    t[1] > 1.02 * t[0] && t[2] > 1.02 * t[1]
}
