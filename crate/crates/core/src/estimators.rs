//! Galerkin solvers for the weakly singular and hypersingular equations,
//! weighted residual estimators, Dörfler marking and the adaptive loop.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BemError, Result};
use crate::mesh::{build_mesh, refine, BoundaryMesh, BoundaryPoint, Curve, MeshSpec, DEFAULT_NEIGHBOR_CAP};
use crate::norms::{element_contributions, w_stabilized, Field};
use crate::operators::{assemble_v, assemble_w, TraceOperator, TraceTag};
use crate::quadrature::element_rule;
use crate::spaces::{BoundaryFn, DegreeDistribution, DiscreteSpace, SpaceKind, WeightFunction};

/// Relative Galerkin residual accepted after a solve.
pub const SOLVE_TOLERANCE: f64 = 1e-9;

/// A Galerkin solution together with the data of its linear system.
#[derive(Debug, Clone)]
pub struct GalerkinSolution {
    pub coeffs: DVector<f64>,
    /// Right-hand side `F_k = ⟨f, ψ_k⟩`.
    pub load: DVector<f64>,
    /// `‖A x - F‖ / ‖F‖`.
    pub residual: f64,
}

fn cholesky_solve(a: DMatrix<f64>, load: DVector<f64>, what: &str) -> Result<GalerkinSolution> {
    let fnorm = load.norm();
    if fnorm == 0.0 {
        return Ok(GalerkinSolution {
            coeffs: DVector::zeros(load.len()),
            load,
            residual: 0.0,
        });
    }
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| BemError::SingularSystem(format!("{what} matrix is not positive definite")))?;
    let x = chol.solve(&load);
    let residual = (&a * &x - &load).norm() / fnorm;
    if !(residual < SOLVE_TOLERANCE) {
        return Err(BemError::SingularSystem(format!(
            "{what} Galerkin residual {residual:e} exceeds {SOLVE_TOLERANCE:e}"
        )));
    }
    Ok(GalerkinSolution {
        coeffs: x,
        load,
        residual,
    })
}

/// Solves `⟨V Φ, Ψ⟩ = ⟨f, Ψ⟩` over a `P^q` space.
pub fn solve_symm(mesh: &BoundaryMesh, space: &DiscreteSpace, f: &dyn Fn(&BoundaryPoint) -> f64) -> Result<GalerkinSolution> {
    let v = assemble_v(mesh, space)?.matrix;
    let load = space.load_vector(mesh, f);
    cholesky_solve(v, load, "single-layer")
}

/// Solves `⟨W U, V⟩ = ⟨f, V⟩`.
///
/// On closed curves the system is `(W + m mᵀ) U = F` with `m_j = ∫ v_j`; the
/// right-hand side must integrate to zero and the returned `U` has mean zero.
/// On open curves the space must vanish at the endpoints.
pub fn solve_hypersingular(mesh: &BoundaryMesh, space: &DiscreteSpace, f: &dyn Fn(&BoundaryPoint) -> f64) -> Result<GalerkinSolution> {
    match (mesh.is_closed(), space.kind()) {
        (true, SpaceKind::Sq1 | SpaceKind::Sq1Tilde) | (false, SpaceKind::Sq1Tilde) => {}
        (closed, kind) => {
            return Err(BemError::InvalidArgument(format!(
                "hypersingular solve on a {} curve needs {}, got {kind:?}",
                if closed { "closed" } else { "open" },
                if closed { "Sq1" } else { "Sq1Tilde" }
            )))
        }
    }
    let w = assemble_w(mesh, space)?.matrix;
    let load = space.load_vector(mesh, f);
    if mesh.is_closed() {
        let total: f64 = load.sum();
        let scale: f64 = load.iter().map(|v| v.abs()).sum::<f64>().max(f64::MIN_POSITIVE);
        if total.abs() > 1e-10 * scale.max(1.0) {
            return Err(BemError::RhsNotMeanZero(total));
        }
    }
    let a = w_stabilized(mesh, space, &w);
    cholesky_solve(a, load, "hypersingular")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum EstimatorTag {
    EtaV,
    EtaW,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub tag: EstimatorTag,
    /// Elementwise indicators `η_T ≥ 0`.
    pub indicators: Vec<f64>,
    /// `sqrt(Σ η_T²)`.
    pub eta: f64,
    pub error_l2_weighted: Option<f64>,
    pub error_energy: Option<f64>,
}

impl EstimatorReport {
    fn from_squares(tag: EstimatorTag, squares: Vec<f64>) -> Result<Self> {
        if let Some(bad) = squares.iter().position(|v| !v.is_finite()) {
            return Err(BemError::Quadrature(format!("indicator of element {bad} is not finite")));
        }
        let eta = squares.iter().sum::<f64>().sqrt();
        Ok(EstimatorReport {
            tag,
            indicators: squares.into_iter().map(f64::sqrt).collect(),
            eta,
            error_l2_weighted: None,
            error_energy: None,
        })
    }
}

fn residual_squares(
    mesh: &BoundaryMesh,
    op: &TraceOperator<'_>,
    coeffs: &[f64],
    degree: impl Fn(usize) -> usize + Sync,
    target: &(dyn Fn(&BoundaryPoint) -> f64 + Sync),
) -> Vec<f64> {
    (0..mesh.num_elements())
        .into_par_iter()
        .map(|e| {
            let el = mesh.element(e);
            let integral: f64 = element_rule(degree(e))
                .iter()
                .map(|(t, w)| {
                    let r = target(&mesh.boundary_point(e, t)) - op.apply(coeffs, e, t);
                    w * r * r
                })
                .sum();
            el.h * el.len() * integral
        })
        .collect()
}

/// `η_T² = h_T ∫_T |f' - (V Φ)'|²` with the arclength derivative `f'`
/// supplied analytically.
pub fn estimate_eta_v(
    mesh: &BoundaryMesh,
    space: &DiscreteSpace,
    coeffs: &[f64],
    grad_f: &(dyn Fn(&BoundaryPoint) -> f64 + Sync),
) -> Result<EstimatorReport> {
    check_len(space, coeffs)?;
    let op = TraceOperator::new(mesh, TraceTag::GradV, space)?;
    let sq = residual_squares(mesh, &op, coeffs, |e| 2 * space.degree(e) + 4, grad_f);
    EstimatorReport::from_squares(EstimatorTag::EtaV, sq)
}

/// `η_T² = h_T ∫_T |f - W U|²`.
pub fn estimate_eta_w(
    mesh: &BoundaryMesh,
    space: &DiscreteSpace,
    coeffs: &[f64],
    f: &(dyn Fn(&BoundaryPoint) -> f64 + Sync),
) -> Result<EstimatorReport> {
    check_len(space, coeffs)?;
    let op = TraceOperator::new(mesh, TraceTag::W, space)?;
    let sq = residual_squares(mesh, &op, coeffs, |e| 2 * space.degree(e) + 4, f);
    EstimatorReport::from_squares(EstimatorTag::EtaW, sq)
}

fn check_len(space: &DiscreteSpace, coeffs: &[f64]) -> Result<()> {
    if coeffs.len() != space.dim() {
        return Err(BemError::DimensionMismatch(format!(
            "{} coefficients for a space of dimension {}",
            coeffs.len(),
            space.dim()
        )));
    }
    Ok(())
}

/// Indicator sums below `θ Σ η_T²` by at most this relative amount still count
/// as reaching it.
const MARKING_SLACK: f64 = 1e-12;

/// Smallest set of elements whose squared indicators sum to at least
/// `θ η²`, taking larger indicators first and smaller ids among equals.
pub fn doerfler_mark(report: &EstimatorReport, theta: f64) -> Result<BTreeSet<usize>> {
    if report.indicators.is_empty() {
        return Err(BemError::InvalidArgument("empty estimator report".into()));
    }
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(BemError::InvalidArgument(format!("marking parameter {theta} outside (0, 1]")));
    }
    let mut order: Vec<usize> = (0..report.indicators.len()).collect();
    order.sort_by(|&a, &b| {
        report.indicators[b]
            .total_cmp(&report.indicators[a])
            .then(a.cmp(&b))
    });
    let total: f64 = report.indicators.iter().map(|v| v * v).sum();
    let goal = theta * total * (1.0 - MARKING_SLACK);
    let mut marked = BTreeSet::new();
    let mut acc = 0.0;
    for i in order {
        if acc >= goal || report.indicators[i] == 0.0 {
            break;
        }
        acc += report.indicators[i] * report.indicators[i];
        marked.insert(i);
    }
    Ok(marked)
}

/// Which integral equation a [`Problem`] poses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Equation {
    Symm,
    Hypersingular,
}

/// Data and known solution quantities of a model problem.
#[derive(Clone)]
pub struct Problem {
    pub equation: Equation,
    pub f: BoundaryFn,
    /// Arclength derivative of `f`, required by `η_V`.
    pub grad_f: Option<BoundaryFn>,
    /// The exact density `φ` (Symm) or the derivative `u'` (hypersingular),
    /// when it is square integrable.
    pub exact: Option<BoundaryFn>,
    /// `⟨f, φ⟩` or `⟨f, u⟩`, the squared energy norm of the exact solution.
    pub energy: Option<f64>,
}

/// Trigonometric data `c_0 + Σ_j (a_j cos jθ + b_j sin jθ)` on a circle
/// centred at the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircleModes {
    pub radius: f64,
    /// Entries `(j, a_j, b_j)`; for `j = 0` only `a_0` is used.
    pub modes: Vec<(usize, f64, f64)>,
}

fn angle(p: &BoundaryPoint) -> f64 {
    p.x.y.atan2(p.x.x)
}

impl CircleModes {
    /// `V` and `W` act on `cos jθ`, `sin jθ` by these factors.
    fn factor(&self, eq: Equation, j: usize) -> f64 {
        let a = self.radius;
        match (eq, j) {
            (Equation::Symm, 0) => -a * a.ln(),
            (Equation::Symm, j) => a / (2.0 * j as f64),
            (Equation::Hypersingular, j) => j as f64 / (2.0 * a),
        }
    }

    fn series(&self, scale: impl Fn(usize) -> f64 + Send + Sync + 'static, derivative: bool) -> BoundaryFn {
        let modes = self.modes.clone();
        let a = self.radius;
        Arc::new(move |p: &BoundaryPoint| {
            let th = angle(p);
            modes
                .iter()
                .map(|&(j, c, s)| {
                    let jf = j as f64;
                    let k = scale(j);
                    if derivative {
                        k * jf / a * (-c * (jf * th).sin() + s * (jf * th).cos())
                    } else if j == 0 {
                        k * c
                    } else {
                        k * (c * (jf * th).cos() + s * (jf * th).sin())
                    }
                })
                .sum()
        })
    }

    fn energy(&self, eq: Equation) -> f64 {
        let a = self.radius;
        self.modes
            .iter()
            .map(|&(j, c, s)| {
                let k = self.factor(eq, j);
                if j == 0 {
                    2.0 * PI * a * k * c * c
                } else {
                    PI * a * k * (c * c + s * s)
                }
            })
            .sum()
    }

    /// `V φ = f` with `φ` given by the modes.
    pub fn symm_problem(&self) -> Problem {
        let me = self.clone();
        let me2 = self.clone();
        Problem {
            equation: Equation::Symm,
            f: self.series(move |j| me.factor(Equation::Symm, j), false),
            grad_f: Some(self.series(move |j| me2.factor(Equation::Symm, j), true)),
            exact: Some(self.series(|_| 1.0, false)),
            energy: Some(self.energy(Equation::Symm)),
        }
    }

    /// `W u = f` with `u` given by the modes; constant modes are dropped.
    pub fn hypersingular_problem(&self) -> Problem {
        let mut me = self.clone();
        me.modes.retain(|m| m.0 > 0);
        let m2 = me.clone();
        Problem {
            equation: Equation::Hypersingular,
            f: me.series(move |j| m2.factor(Equation::Hypersingular, j), false),
            grad_f: None,
            exact: Some(me.series(|_| 1.0, true)),
            energy: Some(me.energy(Equation::Hypersingular)),
        }
    }
}

/// `V φ = 1` on a straight slit of the given length.
///
/// The solution is the scaled equilibrium density
/// `φ = 1 / (π sqrt(b² - x²) c)` with half-length `b` and
/// `c = -(1/2π) log(b/2)`; it is not square integrable, so only the energy is
/// known.
pub fn slit_symm_problem(length: f64) -> Result<Problem> {
    let b = 0.5 * length;
    let c = -(b / 2.0).ln() / (2.0 * PI);
    if !(c > 0.0) {
        return Err(BemError::InvalidArgument(format!(
            "slit of length {length} has no positive logarithmic capacity gap"
        )));
    }
    Ok(Problem {
        equation: Equation::Symm,
        f: Arc::new(|_| 1.0),
        grad_f: Some(Arc::new(|_| 0.0)),
        exact: None,
        energy: Some(1.0 / c),
    })
}

/// Stop rule of the adaptive loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopCriterion {
    pub max_dofs: usize,
    pub eta_tol: f64,
    pub max_levels: usize,
}

impl Default for StopCriterion {
    fn default() -> Self {
        StopCriterion {
            max_dofs: 5000,
            eta_tol: 1e-8,
            max_levels: 64,
        }
    }
}

/// How the loop refines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Marking {
    Uniform,
    Doerfler(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptiveSpec {
    pub curve: Curve,
    pub initial: MeshSpec,
    pub kind: SpaceKind,
    pub degree: usize,
    pub marking: Marking,
    pub stop: StopCriterion,
}

/// One row of a convergence history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub level: usize,
    pub dofs: usize,
    pub eta: f64,
    #[serde(rename = "error_L2_weighted")]
    pub error_l2_weighted: Option<f64>,
    pub error_energy: Option<f64>,
    /// `η / error_L2_weighted`.
    pub eff_ratio: Option<f64>,
    /// `error_energy / η`.
    pub rel_ratio: Option<f64>,
    /// `log(η_{i-1}/η_i) / log(N_i/N_{i-1})`.
    pub eoc: Option<f64>,
}

pub struct LevelResult {
    pub mesh: BoundaryMesh,
    pub space: DiscreteSpace,
    pub solution: GalerkinSolution,
    pub report: EstimatorReport,
    pub row: HistoryRow,
}

/// Solves, estimates and measures errors on one mesh.
pub fn solve_and_estimate(
    mesh: &BoundaryMesh,
    space: &DiscreteSpace,
    problem: &Problem,
) -> Result<(GalerkinSolution, EstimatorReport)> {
    let f = problem.f.clone();
    let fref = move |p: &BoundaryPoint| f(p);
    match problem.equation {
        Equation::Symm => {
            let grad = problem
                .grad_f
                .clone()
                .ok_or_else(|| BemError::InvalidArgument("η_V needs the surface gradient of f".into()))?;
            let sol = solve_symm(mesh, space, &fref)?;
            let mut rep = estimate_eta_v(mesh, space, sol.coeffs.as_slice(), &move |p| grad(p))?;
            if let Some(exact) = &problem.exact {
                let diff = |p: &BoundaryPoint| exact(p) - space.eval(mesh, sol.coeffs.as_slice(), p.element, p.t, false);
                rep.error_l2_weighted = Some(weighted_error(mesh, space, &diff));
            }
            rep.error_energy = problem.energy.map(|e| energy_error(e, &sol));
            Ok((sol, rep))
        }
        Equation::Hypersingular => {
            let sol = solve_hypersingular(mesh, space, &fref)?;
            let mut rep = estimate_eta_w(mesh, space, sol.coeffs.as_slice(), &fref)?;
            if let Some(exact) = &problem.exact {
                let diff = |p: &BoundaryPoint| exact(p) - space.eval(mesh, sol.coeffs.as_slice(), p.element, p.t, true);
                rep.error_l2_weighted = Some(weighted_error(mesh, space, &diff));
            }
            rep.error_energy = problem.energy.map(|e| energy_error(e, &sol));
            Ok((sol, rep))
        }
    }
}

fn weighted_error(mesh: &BoundaryMesh, space: &DiscreteSpace, diff: &(dyn Fn(&BoundaryPoint) -> f64 + Sync)) -> f64 {
    let degs = DegreeDistribution((0..mesh.num_elements()).map(|e| space.local_degree(e) + 2).collect());
    element_contributions(mesh, &degs, &WeightFunction::mesh_only(), &Field::Callable(diff))
        .iter()
        .sum::<f64>()
        .sqrt()
}

/// `‖x - x_h‖² = ‖x‖² - ‖x_h‖²` by Galerkin orthogonality.
fn energy_error(exact_energy: f64, sol: &GalerkinSolution) -> f64 {
    (exact_energy - sol.load.dot(&sol.coeffs)).max(0.0).sqrt()
}

/// Solve, estimate, mark and refine until the stop rule fires.
pub fn adaptive_loop(spec: &AdaptiveSpec, problem: &Problem) -> Result<Vec<LevelResult>> {
    if let Marking::Doerfler(theta) = spec.marking {
        if !(theta > 0.0 && theta <= 1.0) {
            return Err(BemError::Config {
                field: "theta".into(),
                message: format!("{theta} is outside (0, 1]"),
            });
        }
    }
    let mut mesh = build_mesh(&spec.curve, &spec.initial)?;
    let mut degrees = DegreeDistribution::constant(mesh.num_elements(), spec.degree);
    let mut out: Vec<LevelResult> = Vec::new();
    for level in 0..spec.stop.max_levels.max(1) {
        let space = DiscreteSpace::new(&mesh, spec.kind, degrees.clone())?;
        if space.dim() > spec.stop.max_dofs && level > 0 {
            break;
        }
        let (solution, report) = solve_and_estimate(&mesh, &space, problem)?;
        let eoc = out.last().map(|prev| {
            (prev.row.eta / report.eta).ln() / (space.dim() as f64 / prev.row.dofs as f64).ln()
        });
        let row = HistoryRow {
            level,
            dofs: space.dim(),
            eta: report.eta,
            error_l2_weighted: report.error_l2_weighted,
            error_energy: report.error_energy,
            eff_ratio: report.error_l2_weighted.map(|e| report.eta / e),
            rel_ratio: report.error_energy.map(|e| e / report.eta),
            eoc,
        };
        let done = report.eta < spec.stop.eta_tol;
        let marked = match spec.marking {
            Marking::Uniform => (0..mesh.num_elements()).collect(),
            Marking::Doerfler(theta) => doerfler_mark(&report, theta)?,
        };
        out.push(LevelResult {
            mesh: mesh.clone(),
            space,
            solution,
            report,
            row,
        });
        if done || marked.is_empty() {
            break;
        }
        let (next, parents) = refine(&mesh, &marked, DEFAULT_NEIGHBOR_CAP)?;
        degrees = degrees.inherit(&parents);
        mesh = next;
    }
    Ok(out)
}

/// Writes a history as CSV with the columns of [`HistoryRow`].
pub fn write_history<W: Write>(rows: &[HistoryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history<R: std::io::Read>(input: R) -> Result<Vec<HistoryRow>> {
    let mut r = csv::Reader::from_reader(input);
    let rows = r.deserialize().collect::<std::result::Result<Vec<HistoryRow>, _>>()?;
    Ok(rows)
}

/// Least-squares slope of `-log η` against `log N`.
pub fn fitted_rate(points: &[(usize, f64)]) -> f64 {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| (p.0 as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| -p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(ind: &[f64]) -> EstimatorReport {
        EstimatorReport::from_squares(EstimatorTag::EtaV, ind.iter().map(|v| v * v).collect()).unwrap()
    }

    #[test]
    fn marking_examples() {
        let r = report(&[1.0, 3.0, 4.0, 2.0]);
        assert_eq!(doerfler_mark(&r, 0.5).unwrap(), BTreeSet::from([2]));
        let r = report(&[1.0, 0.0, 2.0, 3.0]);
        assert_eq!(doerfler_mark(&r, 1.0).unwrap(), BTreeSet::from([0, 2, 3]));
        let r = report(&[1.0; 10]);
        assert_eq!(doerfler_mark(&r, 0.3).unwrap(), BTreeSet::from([0, 1, 2]));
        assert!(doerfler_mark(&report(&[]), 0.5).is_err());
        assert!(doerfler_mark(&r, 0.0).is_err());
    }

    #[test]
    fn history_csv_header() {
        let rows = vec![HistoryRow {
            level: 0,
            dofs: 8,
            eta: 0.5,
            error_l2_weighted: None,
            error_energy: Some(0.1),
            eff_ratio: None,
            rel_ratio: Some(0.2),
            eoc: None,
        }];
        let mut buf = Vec::new();
        write_history(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("level,dofs,eta,error_L2_weighted,error_energy,eff_ratio,rel_ratio,eoc\n"));
        assert_eq!(read_history(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn rate_of_exact_power_law() {
        let pts: Vec<(usize, f64)> = [8usize, 16, 32].iter().map(|&n| (n, (n as f64).powf(-1.5))).collect();
        assert!((fitted_rate(&pts) - 1.5).abs() < 1e-12);
    }
}
