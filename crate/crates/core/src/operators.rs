//! Galerkin matrices and boundary traces of the four Laplace boundary
//! integral operators.
//!
//! Conventions, with `G(x, y) = -(1/2π) log |x - y|` and `ν` the outward normal:
//!
//! * `V φ(x) = ∫ G(x, y) φ(y) ds_y`
//! * `K v(x) = pv ∫ ∂_{ν(y)} G(x, y) v(y) ds_y`, so `K 1 = -1/2` on closed curves
//! * `K' φ(x) = pv ∫ ∂_{ν(x)} G(x, y) φ(y) ds_y`, the adjoint of `K`
//! * `W v = -(V v')'`, so `⟨W u, v⟩ = ⟨V u', v'⟩`
//!
//! and the surface derivative of the double layer is `(K v)' = -K'(v')`.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BemError, Result};
use crate::legendre;
use crate::mesh::BoundaryMesh;
use crate::pairs::{cached_gauss, cached_log_gauss, pair_nodes, NodePart, PairNode};
use crate::potentials::{GRADING_DEPTH, GRADING_RATIO};
use crate::quadrature::graded_nodes;
use crate::spaces::{local_basis, mass_matrix, DiscreteSpace, SpaceJson, SpaceKind};

const C_LOG: f64 = -1.0 / (2.0 * PI);
const C_DL: f64 = 1.0 / (2.0 * PI);

/// Evaluation points closer than this (in local parameter) to a node are
/// moved inward.
pub const NODE_OFFSET: f64 = 1e-8;

/// Relative entry accuracy targeted by the assembly routines.
pub const ASSEMBLY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OperatorTag {
    V,
    K,
    Kprime,
    W,
    Mass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalerkinMatrix {
    pub tag: OperatorTag,
    /// Rows index the test space, columns the trial space.
    pub matrix: DMatrix<f64>,
    pub test: SpaceJson,
    pub trial: SpaceJson,
    pub mesh_hash: String,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PairKernel {
    Log,
    Normal,
    AdjointNormal,
}

fn pair_value(mesh: &BoundaryMesh, kernel: PairKernel, ex: usize, ey: usize, n: &PairNode) -> f64 {
    match (kernel, n.part) {
        (PairKernel::Log, NodePart::LogCore) => C_LOG,
        (PairKernel::Log, NodePart::SelfRemainder) => {
            let len = mesh.element(ex).len();
            let ratio = mesh.piece_of(ex).chord_ratio(len * (n.tx - n.ty));
            C_LOG * (len.ln() + ratio.ln())
        }
        (PairKernel::Log, NodePart::CornerRemainder { z }) => {
            C_LOG * (mesh.pair(ex, n.tx, ey, n.ty).dist / z).ln()
        }
        (PairKernel::Log, NodePart::Regular) => C_LOG * mesh.pair(ex, n.tx, ey, n.ty).dist.ln(),
        (PairKernel::Normal, _) => C_DL * mesh.pair(ex, n.tx, ey, n.ty).dn_y,
        (PairKernel::AdjointNormal, _) => -C_DL * mesh.pair(ex, n.tx, ey, n.ty).dn_x,
    }
}

/// Element block `∫∫ k(x, y) φ_a(x) ψ_b(y)` for local bases of `test` on `ex`
/// and `trial` on `ey`.
fn element_block(
    mesh: &BoundaryMesh,
    kernel: PairKernel,
    test: &DiscreteSpace,
    trial: &DiscreteSpace,
    ex: usize,
    ey: usize,
) -> Result<DMatrix<f64>> {
    let px = test.local_degree(ex);
    let py = trial.local_degree(ey);
    let nodes = pair_nodes(mesh, ex, ey, px, py, kernel == PairKernel::Log)?;
    let mut block = DMatrix::zeros(px + 1, py + 1);
    let mut bx = vec![0.0; px + 1];
    let mut by = vec![0.0; py + 1];
    for n in &nodes {
        let k = n.w * pair_value(mesh, kernel, ex, ey, n);
        test.local_basis(ex, n.tx, false, &mut bx);
        trial.local_basis(ey, n.ty, false, &mut by);
        for (a, va) in bx.iter().enumerate() {
            let kv = k * va;
            for (b, vb) in by.iter().enumerate() {
                block[(a, b)] += kv * vb;
            }
        }
    }
    Ok(block)
}

fn assemble_pairs(
    mesh: &BoundaryMesh,
    kernel: PairKernel,
    test: &DiscreteSpace,
    trial: &DiscreteSpace,
    symmetric: bool,
) -> Result<DMatrix<f64>> {
    test.check_mesh(mesh)?;
    trial.check_mesh(mesh)?;
    let n = mesh.num_elements();
    let strips: Vec<Result<Vec<(usize, DMatrix<f64>)>>> = (0..n)
        .into_par_iter()
        .map(|ex| {
            let start = if symmetric { ex } else { 0 };
            (start..n)
                .map(|ey| element_block(mesh, kernel, test, trial, ex, ey).map(|b| (ey, b)))
                .collect()
        })
        .collect();
    let mut a = DMatrix::zeros(test.dim(), trial.dim());
    for (ex, strip) in strips.into_iter().enumerate() {
        let rows = test.local_dofs(mesh, ex);
        for (ey, block) in strip? {
            let cols = trial.local_dofs(mesh, ey);
            let diag = symmetric && ex == ey;
            for (i, r) in rows.iter().enumerate() {
                let Some(r) = r else { continue };
                for (j, c) in cols.iter().enumerate() {
                    let Some(c) = c else { continue };
                    if diag {
                        a[(*r, *c)] += 0.5 * (block[(i, j)] + block[(j, i)]);
                    } else {
                        a[(*r, *c)] += block[(i, j)];
                        if symmetric {
                            a[(*c, *r)] += block[(i, j)];
                        }
                    }
                }
            }
        }
    }
    Ok(a)
}

fn require_kind(space: &DiscreteSpace, kinds: &[SpaceKind], what: &str) -> Result<()> {
    if kinds.contains(&space.kind()) {
        Ok(())
    } else {
        Err(BemError::InvalidArgument(format!(
            "{what} requires a space of kind {kinds:?}, got {:?}",
            space.kind()
        )))
    }
}

fn wrap(mesh: &BoundaryMesh, tag: OperatorTag, m: DMatrix<f64>, test: &DiscreteSpace, trial: &DiscreteSpace) -> GalerkinMatrix {
    GalerkinMatrix {
        tag,
        matrix: m,
        test: test.to_json(),
        trial: trial.to_json(),
        mesh_hash: mesh.hash(),
        tolerance: ASSEMBLY_TOLERANCE,
    }
}

/// Single-layer matrix `⟨V φ_j, φ_k⟩` on a discontinuous space.
pub fn assemble_v(mesh: &BoundaryMesh, space: &DiscreteSpace) -> Result<GalerkinMatrix> {
    require_kind(space, &[SpaceKind::Pq], "assemble_v")?;
    let m = assemble_pairs(mesh, PairKernel::Log, space, space, true)?;
    Ok(wrap(mesh, OperatorTag::V, m, space, space))
}

/// Double-layer matrix `⟨K v_j, ψ_k⟩` with test functions from `P^q`.
pub fn assemble_k(mesh: &BoundaryMesh, trial: &DiscreteSpace, test: &DiscreteSpace) -> Result<GalerkinMatrix> {
    require_kind(test, &[SpaceKind::Pq], "assemble_k test space")?;
    let m = assemble_pairs(mesh, PairKernel::Normal, test, trial, false)?;
    Ok(wrap(mesh, OperatorTag::K, m, test, trial))
}

/// Adjoint double-layer matrix `⟨K' φ_j, ψ_k⟩` on discontinuous spaces.
pub fn assemble_kprime(mesh: &BoundaryMesh, trial: &DiscreteSpace, test: &DiscreteSpace) -> Result<GalerkinMatrix> {
    require_kind(trial, &[SpaceKind::Pq], "assemble_kprime trial space")?;
    require_kind(test, &[SpaceKind::Pq], "assemble_kprime test space")?;
    let m = assemble_pairs(mesh, PairKernel::AdjointNormal, test, trial, false)?;
    Ok(wrap(mesh, OperatorTag::Kprime, m, test, trial))
}

/// Hypersingular matrix `⟨W v_j, v_k⟩ = ⟨V v_j', v_k'⟩` on a continuous space.
pub fn assemble_w(mesh: &BoundaryMesh, space: &DiscreteSpace) -> Result<GalerkinMatrix> {
    require_kind(space, &[SpaceKind::Sq1, SpaceKind::Sq1Tilde], "assemble_w")?;
    let (dspace, d) = space.derivative_map(mesh)?;
    let v = assemble_pairs(mesh, PairKernel::Log, &dspace, &dspace, true)?;
    let w = d.transpose() * v * &d;
    let w = 0.5 * (&w + w.transpose());
    Ok(wrap(mesh, OperatorTag::W, w, space, space))
}

/// Mass matrix `⟨φ_j, ψ_k⟩`.
pub fn assemble_mass(mesh: &BoundaryMesh, trial: &DiscreteSpace, test: &DiscreteSpace) -> Result<GalerkinMatrix> {
    let m = mass_matrix(mesh, test, trial)?;
    Ok(wrap(mesh, OperatorTag::Mass, m, test, trial))
}

/// Writes `<stem>.bin` (little-endian `f64`, row-major) and `<stem>.json`.
pub fn export_matrix(gm: &GalerkinMatrix, stem: &Path) -> Result<()> {
    let (r, c) = gm.matrix.shape();
    let mut bytes = Vec::with_capacity(8 * r * c);
    for i in 0..r {
        for j in 0..c {
            bytes.extend_from_slice(&gm.matrix[(i, j)].to_le_bytes());
        }
    }
    let mut f = fs::File::create(stem.with_extension("bin"))?;
    f.write_all(&bytes)?;
    let sidecar = serde_json::json!({
        "tag": gm.tag,
        "dims": [r, c],
        "mesh_hash": gm.mesh_hash,
    });
    fs::write(stem.with_extension("json"), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

/// Reads a matrix written by [`export_matrix`].
pub fn import_matrix(stem: &Path) -> Result<(OperatorTag, DMatrix<f64>)> {
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(stem.with_extension("json"))?)?;
    let tag: OperatorTag = serde_json::from_value(meta["tag"].clone())?;
    let dims: [usize; 2] = serde_json::from_value(meta["dims"].clone())?;
    let bytes = fs::read(stem.with_extension("bin"))?;
    if bytes.len() != 8 * dims[0] * dims[1] {
        return Err(BemError::DimensionMismatch(format!(
            "{} bytes for a {}x{} matrix",
            bytes.len(),
            dims[0],
            dims[1]
        )));
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    Ok((tag, DMatrix::from_row_slice(dims[0], dims[1], &vals)))
}

/// Boundary traces that can be evaluated pointwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TraceTag {
    /// `V φ` for `φ ∈ P^q`.
    V,
    /// `(V φ)'` for `φ ∈ P^q`.
    GradV,
    /// `K' φ` for `φ ∈ P^q`.
    Kprime,
    /// `K v` for any space.
    K,
    /// `W v = -(V v')'` for continuous `v`.
    W,
    /// `(K v)' = -K'(v')` for continuous `v`.
    GradK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BasicKernel {
    Log,
    Tangential,
    AdjointNormal,
    Normal,
}

/// Pointwise evaluation of a trace as a linear functional of the
/// coefficients of `space`.
pub struct TraceOperator<'a> {
    mesh: &'a BoundaryMesh,
    space: &'a DiscreteSpace,
    kernel: BasicKernel,
    /// For derived traces: the `P^q` space of derivatives and `-D` by rows.
    derived: Option<(DiscreteSpace, Vec<Vec<(usize, f64)>>)>,
}

impl<'a> TraceOperator<'a> {
    pub fn new(mesh: &'a BoundaryMesh, tag: TraceTag, space: &'a DiscreteSpace) -> Result<Self> {
        space.check_mesh(mesh)?;
        let p_only = [SpaceKind::Pq];
        let s_only = [SpaceKind::Sq1, SpaceKind::Sq1Tilde];
        let (kernel, derived) = match tag {
            TraceTag::V => {
                require_kind(space, &p_only, "V trace")?;
                (BasicKernel::Log, false)
            }
            TraceTag::GradV => {
                require_kind(space, &p_only, "gradient of V trace")?;
                (BasicKernel::Tangential, false)
            }
            TraceTag::Kprime => {
                require_kind(space, &p_only, "K' trace")?;
                (BasicKernel::AdjointNormal, false)
            }
            TraceTag::K => (BasicKernel::Normal, false),
            TraceTag::W => {
                require_kind(space, &s_only, "W trace")?;
                (BasicKernel::Tangential, true)
            }
            TraceTag::GradK => {
                require_kind(space, &s_only, "gradient of K trace")?;
                (BasicKernel::AdjointNormal, true)
            }
        };
        let derived = if derived {
            let (ds, d) = space.derivative_map(mesh)?;
            let rows = (0..d.nrows())
                .map(|r| {
                    (0..d.ncols())
                        .filter(|&c| d[(r, c)] != 0.0)
                        .map(|c| (c, -d[(r, c)]))
                        .collect()
                })
                .collect();
            Some((ds, rows))
        } else {
            None
        };
        Ok(TraceOperator {
            mesh,
            space,
            kernel,
            derived,
        })
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    /// Row `r` with `trace(Σ c_j φ_j)(γ_e(t)) = r · c`.
    pub fn row(&self, elem: usize, t: f64) -> Vec<f64> {
        // Nodes themselves are avoided: traces of discontinuous densities may
        // be singular there. Closer offsets lose digits in node-relative
        // distances.
        let t = t.clamp(NODE_OFFSET, 1.0 - NODE_OFFSET);
        match &self.derived {
            None => basic_row(self.mesh, self.kernel, self.space, elem, t),
            Some((ds, d)) => {
                let inner = basic_row(self.mesh, self.kernel, ds, elem, t);
                let mut out = vec![0.0; self.space.dim()];
                for (r, v) in inner.iter().enumerate() {
                    for &(c, dv) in &d[r] {
                        out[c] += v * dv;
                    }
                }
                out
            }
        }
    }

    pub fn apply(&self, coeffs: &[f64], elem: usize, t: f64) -> f64 {
        self.row(elem, t).iter().zip(coeffs).map(|(a, b)| a * b).sum()
    }
}

fn basic_row(mesh: &BoundaryMesh, kernel: BasicKernel, space: &DiscreteSpace, ex: usize, t: f64) -> Vec<f64> {
    let mut out = vec![0.0; space.dim()];
    let mut local = Vec::new();
    for ey in 0..mesh.num_elements() {
        let p = space.local_degree(ey);
        local.clear();
        local.resize(p + 1, 0.0);
        local_trace(mesh, kernel, space.kind(), p, ex, t, ey, &mut local);
        for (d, v) in space.local_dofs(mesh, ey).iter().zip(&local) {
            if let Some(j) = d {
                out[*j] += v;
            }
        }
    }
    out
}

/// Contributions of the local basis on `ey` to the trace at `γ_ex(t)`.
#[allow(clippy::too_many_arguments)]
fn local_trace(
    mesh: &BoundaryMesh,
    kernel: BasicKernel,
    kind: SpaceKind,
    p: usize,
    ex: usize,
    t: f64,
    ey: usize,
    out: &mut [f64],
) {
    let mut basis = vec![0.0; p + 1];
    let ly = mesh.element(ey).len();
    if ex == ey {
        let piece = mesh.piece_of(ex);
        let smooth = cached_gauss(p + 10);
        match kernel {
            BasicKernel::Log => {
                let poly = p / 2 + 2;
                let g = cached_gauss(poly);
                let lg = cached_log_gauss(poly);
                for (side, dir) in [(t, -1.0), (1.0 - t, 1.0)] {
                    if side <= 0.0 {
                        continue;
                    }
                    // ∫ log(side·u) φ(t + dir·side·u) side du
                    for (u, w) in g.iter() {
                        local_basis(kind, p, t + dir * side * u, false, &mut basis);
                        for (o, b) in out.iter_mut().zip(&basis) {
                            *o += side * side.ln() * w * b;
                        }
                    }
                    for (u, w) in lg.iter() {
                        local_basis(kind, p, t + dir * side * u, false, &mut basis);
                        for (o, b) in out.iter_mut().zip(&basis) {
                            *o -= side * w * b;
                        }
                    }
                }
                for (s, w) in smooth.iter() {
                    let rem = ly.ln() + piece.chord_ratio(ly * (t - s)).ln();
                    local_basis(kind, p, s, false, &mut basis);
                    for (o, b) in out.iter_mut().zip(&basis) {
                        *o += rem * w * b;
                    }
                }
                out.iter_mut().for_each(|o| *o *= C_LOG * ly);
            }
            BasicKernel::Tangential => {
                debug_assert_eq!(kind, SpaceKind::Pq);
                let mut q = vec![0.0; p + 1];
                legendre::second_kind(p, 2.0 * t - 1.0, &mut q);
                for (o, qk) in out.iter_mut().zip(&q) {
                    *o = 2.0 * qk;
                }
                for (s, w) in smooth.iter() {
                    let rem = piece.tangential_remainder(ly * (t - s));
                    local_basis(kind, p, s, false, &mut basis);
                    for (o, b) in out.iter_mut().zip(&basis) {
                        *o += ly * rem * w * b;
                    }
                }
                out.iter_mut().for_each(|o| *o *= C_LOG);
            }
            BasicKernel::AdjointNormal | BasicKernel::Normal => {
                for (s, w) in smooth.iter() {
                    let g = mesh.pair(ex, t, ey, s);
                    let k = if kernel == BasicKernel::Normal {
                        C_DL * g.dn_y
                    } else {
                        -C_DL * g.dn_x
                    };
                    local_basis(kind, p, s, false, &mut basis);
                    for (o, b) in out.iter_mut().zip(&basis) {
                        *o += ly * k * w * b;
                    }
                }
            }
        }
        return;
    }
    let x = mesh.point(ex, t);
    let (tc, dist) = mesh.closest_on_element(ey, x);
    let gauss = cached_gauss(p + 14);
    let mut nodes = Vec::new();
    if dist < mesh.element(ey).h {
        graded_nodes(gauss, tc, GRADING_RATIO, GRADING_DEPTH, dist / ly, &mut nodes);
    } else {
        nodes.extend(cached_gauss(p + 12).iter());
    }
    for (s, w) in nodes {
        let g = mesh.pair(ex, t, ey, s);
        let k = match kernel {
            BasicKernel::Log => C_LOG * g.dist.ln(),
            BasicKernel::Tangential => C_LOG * g.dt_x,
            BasicKernel::AdjointNormal => -C_DL * g.dn_x,
            BasicKernel::Normal => C_DL * g.dn_y,
        };
        local_basis(kind, p, s, false, &mut basis);
        for (o, b) in out.iter_mut().zip(&basis) {
            *o += ly * k * w * b;
        }
    }
}

/// Evaluates a trace of `Σ c_j φ_j` at local parameters `ts` on `elem`.
pub fn eval_trace(
    mesh: &BoundaryMesh,
    tag: TraceTag,
    space: &DiscreteSpace,
    coeffs: &[f64],
    elem: usize,
    ts: &[f64],
) -> Result<Vec<f64>> {
    if coeffs.len() != space.dim() {
        return Err(BemError::DimensionMismatch(format!(
            "{} coefficients for a space of dimension {}",
            coeffs.len(),
            space.dim()
        )));
    }
    if elem >= mesh.num_elements() {
        return Err(BemError::InvalidArgument(format!("element {elem} does not exist")));
    }
    let op = TraceOperator::new(mesh, tag, space)?;
    Ok(ts.iter().map(|&t| op.apply(coeffs, elem, t)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_mesh, Curve, MeshSpec};

    #[test]
    fn flat_p0_self_entry_closed_form() {
        // ⟨V 1, 1⟩_T = -(1/2π) h² (log h - 3/2)
        let m = build_mesh(&Curve::square(0.25), &MeshSpec::Uniform(8)).unwrap();
        let s = DiscreteSpace::constant(&m, SpaceKind::Pq, 0).unwrap();
        let v = assemble_v(&m, &s).unwrap().matrix;
        let h: f64 = 0.125;
        let exact = -(h * h) * (h.ln() - 1.5) / (2.0 * PI);
        assert!((v[(0, 0)] - exact).abs() < 1e-14);
        assert!((&v - v.transpose()).amax() == 0.0);
    }

    #[test]
    fn export_round_trip() {
        let m = build_mesh(&Curve::circle(0.4), &MeshSpec::Uniform(6)).unwrap();
        let s = DiscreteSpace::constant(&m, SpaceKind::Pq, 1).unwrap();
        let v = assemble_v(&m, &s).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("v");
        export_matrix(&v, &stem).unwrap();
        let (tag, back) = import_matrix(&stem).unwrap();
        assert_eq!(tag, OperatorTag::V);
        assert_eq!(back, v.matrix);
    }

    #[test]
    fn trace_matches_galerkin_entry() {
        // Integrating the V trace against a test function reproduces ⟨V φ, ψ⟩.
        let m = build_mesh(&Curve::circle(0.4), &MeshSpec::Uniform(6)).unwrap();
        let s = DiscreteSpace::constant(&m, SpaceKind::Pq, 1).unwrap();
        let v = assemble_v(&m, &s).unwrap().matrix;
        let op = TraceOperator::new(&m, TraceTag::V, &s).unwrap();
        let rule = crate::quadrature::endpoint_graded_rule(10, 0.15, 10);
        let len = m.element(2).len();
        let mut row = vec![0.0; s.dim()];
        for (t, w) in rule.iter() {
            let r = op.row(2, t);
            let l1 = 2.0 * t - 1.0;
            for (o, v) in row.iter_mut().zip(&r) {
                *o += w * len * l1 * v;
            }
        }
        for j in 0..s.dim() {
            assert!((row[j] - v[(5, j)]).abs() < 1e-10, "{j}: {} vs {}", row[j], v[(5, j)]);
        }
    }
}
