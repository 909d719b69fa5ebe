//! The `run` subcommand.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use lapbem::estimators::{
    adaptive_loop, slit_symm_problem, write_history, AdaptiveSpec, CircleModes, Equation, HistoryRow, Marking,
    Problem, StopCriterion,
};
use lapbem::invlab::{constant_sweep, spread, stability_check_cor33, write_traces, ConstantTrace, InequalitySpec, Projection};
use lapbem::mesh::refine_uniform;
use lapbem::norms::duality_ratio_report;
use lapbem::{build_mesh, BoundaryMesh, BoundaryPoint, DiscreteSpace, MeshSpec, SpaceKind, WeightFunction};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{Data, ExperimentConfig, Geometry, ProbeChoice, ProblemConfig, Refinement, WeightChoice};
use crate::table::eoc;
use crate::{CliError, Stage};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub quiet: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub outputs: Vec<PathBuf>,
    pub manifest: PathBuf,
    pub summary: String,
}

#[derive(Debug, Serialize)]
struct Manifest {
    name: String,
    tool: &'static str,
    version: &'static str,
    config: ConfigEntry,
    seed: u64,
    threads: usize,
    timings: Vec<Timing>,
    outputs: Vec<OutputEntry>,
}

#[derive(Debug, Serialize)]
struct ConfigEntry {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Timing {
    stage: String,
    seconds: f64,
}

#[derive(Debug, Serialize)]
struct OutputEntry {
    file: String,
    bytes: usize,
    sha256: String,
}

/// One row of the stability CSV.
#[derive(Debug, Clone, Serialize)]
struct StabilityRow {
    geometry: String,
    probe: String,
    level: usize,
    dofs: usize,
    q: usize,
    projection: Projection,
    grad_v: f64,
    kprime: f64,
    skipped: bool,
    duality_ratio: f64,
    saturation: f64,
}

struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
    summary: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Reads, validates and runs the configuration at `path`.
pub fn run(path: &Path, opts: &RunOptions) -> Result<RunOutcome, CliError> {
    let raw = std::fs::read(path).map_err(CliError::io(format!("reading {}", path.display())))?;
    let text = String::from_utf8(raw.clone()).map_err(|e| CliError::Validation {
        field: "config".into(),
        message: e.to_string(),
    })?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    let out_dir = opts
        .out_dir
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let mut timings = Vec::new();
    let start = Instant::now();
    let artifacts = execute(&cfg, opts.quiet, &mut timings)?;
    timings.push(Timing {
        stage: "total".into(),
        seconds: start.elapsed().as_secs_f64(),
    });

    std::fs::create_dir_all(&out_dir).map_err(CliError::io(format!("creating {}", out_dir.display())))?;
    let mut outputs = Vec::new();
    let mut entries = Vec::new();
    let summary_file = format!("{}_summary.txt", cfg.name);
    let all = artifacts
        .files
        .iter()
        .map(|(n, b)| (n.clone(), b.as_slice()))
        .chain(std::iter::once((summary_file, artifacts.summary.as_bytes())));
    for (name, bytes) in all {
        let p = out_dir.join(&name);
        std::fs::write(&p, bytes).map_err(CliError::io(format!("writing {}", p.display())))?;
        entries.push(OutputEntry {
            file: name,
            bytes: bytes.len(),
            sha256: sha256_hex(bytes),
        });
        outputs.push(p);
    }
    let manifest = Manifest {
        name: cfg.name.clone(),
        tool: "lapbem",
        version: env!("CARGO_PKG_VERSION"),
        config: ConfigEntry {
            path: path.display().to_string(),
            sha256: sha256_hex(&raw),
        },
        seed: cfg.seed,
        threads: rayon::current_num_threads(),
        timings,
        outputs: entries,
    };
    let manifest_path = out_dir.join(format!("{}_manifest.json", cfg.name));
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, json).map_err(CliError::io(format!("writing {}", manifest_path.display())))?;
    Ok(RunOutcome {
        outputs,
        manifest: manifest_path,
        summary: artifacts.summary,
    })
}

fn execute(cfg: &ExperimentConfig, quiet: bool, timings: &mut Vec<Timing>) -> Result<Artifacts, CliError> {
    let mut timed = |stage: &str, t: Instant| {
        timings.push(Timing {
            stage: stage.into(),
            seconds: t.elapsed().as_secs_f64(),
        });
        if !quiet {
            eprintln!("{stage}: {:.2} s", t.elapsed().as_secs_f64());
        }
    };
    match &cfg.problem {
        ProblemConfig::Symm { data } | ProblemConfig::Hypersingular { data } => {
            let t = Instant::now();
            let (problem, kind) = solver_problem(cfg, data)?;
            let spec = adaptive_spec(cfg, kind, cfg.degrees[0]);
            let levels = adaptive_loop(&spec, &problem).stage("solve")?;
            timed("solve", t);
            let rows: Vec<HistoryRow> = levels.into_iter().map(|l| l.row).collect();
            let mut csv = Vec::new();
            write_history(&rows, &mut csv).stage("write history")?;
            Ok(Artifacts {
                files: vec![(format!("{}_history.csv", cfg.name), csv)],
                summary: history_summary(cfg, &rows),
            })
        }
        ProblemConfig::Invlab { tag, weight } => {
            let t = Instant::now();
            let meshes = mesh_sequence(cfg)?;
            timed("meshes", t);
            let t = Instant::now();
            let w = match weight {
                WeightChoice::Canonical => WeightFunction::canonical(),
                WeightChoice::MeshOnly => WeightFunction::mesh_only(),
            };
            let spec = InequalitySpec::new(*tag, cfg.geometry.label()).with_weight(w);
            let trace = constant_sweep(&spec, &meshes, &cfg.degrees, cfg.limits.max_dofs).stage("pencils")?;
            timed("pencils", t);
            let mut csv = Vec::new();
            write_traces(std::slice::from_ref(&trace), &mut csv).stage("write trace")?;
            Ok(Artifacts {
                files: vec![(format!("{}_trace.csv", cfg.name), csv)],
                summary: trace_summary(cfg, &trace),
            })
        }
        ProblemConfig::Stab33 { probes } => {
            let t = Instant::now();
            let meshes = mesh_sequence(cfg)?;
            timed("meshes", t);
            let t = Instant::now();
            let rows = stability_rows(cfg, &meshes, probes)?;
            timed("stability", t);
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in &rows {
                w.serialize(r).map_err(|e| CliError::Io {
                    context: "writing stability rows".into(),
                    source: e.into(),
                })?;
            }
            let csv = w.into_inner().map_err(|e| CliError::Io {
                context: "writing stability rows".into(),
                source: e.into_error(),
            })?;
            Ok(Artifacts {
                files: vec![(format!("{}_stability.csv", cfg.name), csv)],
                summary: stability_summary(cfg, &rows),
            })
        }
    }
}

fn solver_problem(cfg: &ExperimentConfig, data: &Data) -> Result<(Problem, SpaceKind), CliError> {
    let closed = cfg.geometry.curve().is_closed();
    let symm = matches!(cfg.problem, ProblemConfig::Symm { .. });
    let kind = match (symm, closed) {
        (true, _) => SpaceKind::Pq,
        (false, true) => SpaceKind::Sq1,
        (false, false) => SpaceKind::Sq1Tilde,
    };
    let constant = |v: f64, eq: Equation| Problem {
        equation: eq,
        f: Arc::new(move |_| v),
        grad_f: Some(Arc::new(|_| 0.0)),
        exact: None,
        energy: None,
    };
    let problem = match (data, &cfg.geometry, symm) {
        (Data::CircleModes { modes }, Geometry::Circle { radius }, _) => {
            let m = CircleModes {
                radius: *radius,
                modes: modes.clone(),
            };
            if symm {
                m.symm_problem()
            } else {
                m.hypersingular_problem()
            }
        }
        (Data::Constant { value }, Geometry::Circle { radius }, true) => {
            // V 1 = -a log a on the circle.
            CircleModes {
                radius: *radius,
                modes: vec![(0, value / (-radius * radius.ln()), 0.0)],
            }
            .symm_problem()
        }
        (Data::Constant { value }, Geometry::Slit { length }, true) => {
            let mut p = slit_symm_problem(*length).stage("problem")?;
            let v = *value;
            p.f = Arc::new(move |_| v);
            p.energy = p.energy.map(|e| e * v * v);
            p
        }
        (Data::Constant { value }, _, true) => constant(*value, Equation::Symm),
        (Data::Constant { value }, _, false) => constant(*value, Equation::Hypersingular),
        (Data::CircleModes { .. }, _, _) => {
            return Err(CliError::Validation {
                field: "problem.data".into(),
                message: "circle modes need a circle geometry".into(),
            })
        }
    };
    Ok((problem, kind))
}

fn adaptive_spec(cfg: &ExperimentConfig, kind: SpaceKind, degree: usize) -> AdaptiveSpec {
    let (initial, marking, max_levels) = match cfg.refinement {
        Refinement::Uniform { initial, levels } => (initial, Marking::Uniform, levels),
        Refinement::Adaptive {
            initial,
            theta,
            max_levels,
        } => (initial, Marking::Doerfler(theta), max_levels),
    };
    AdaptiveSpec {
        curve: cfg.geometry.curve(),
        initial: MeshSpec::Uniform(initial),
        kind,
        degree,
        marking,
        stop: StopCriterion {
            max_dofs: cfg.limits.max_dofs,
            eta_tol: cfg.limits.eta_tol,
            max_levels,
        },
    }
}

/// Uniform refinements, or the meshes of a lowest-order adaptive Symm run
/// with data `1`.
fn mesh_sequence(cfg: &ExperimentConfig) -> Result<Vec<BoundaryMesh>, CliError> {
    let curve = cfg.geometry.curve();
    match cfg.refinement {
        Refinement::Uniform { initial, levels } => {
            let mut m = build_mesh(&curve, &MeshSpec::Uniform(initial)).stage("meshes")?;
            let mut out = Vec::with_capacity(levels);
            for _ in 1..levels {
                let next = refine_uniform(&m).stage("meshes")?;
                out.push(std::mem::replace(&mut m, next));
            }
            out.push(m);
            Ok(out)
        }
        Refinement::Adaptive { .. } => {
            let problem = Problem {
                equation: Equation::Symm,
                f: Arc::new(|_| 1.0),
                grad_f: Some(Arc::new(|_| 0.0)),
                exact: None,
                energy: None,
            };
            let spec = adaptive_spec(cfg, SpaceKind::Pq, 0);
            let levels = adaptive_loop(&spec, &problem).stage("meshes")?;
            Ok(levels.into_iter().map(|l| l.mesh).collect())
        }
    }
}

fn probe_fn(choice: ProbeChoice, length: f64) -> Box<dyn Fn(&BoundaryPoint) -> f64 + Sync> {
    match choice {
        ProbeChoice::Sin2pi => Box::new(move |p| (2.0 * std::f64::consts::PI * p.s / length).sin()),
        ProbeChoice::ExpCos3 => Box::new(|p| p.x.x.exp() * (3.0 * p.x.y).cos()),
    }
}

fn stability_rows(
    cfg: &ExperimentConfig,
    meshes: &[BoundaryMesh],
    probes: &[ProbeChoice],
) -> Result<Vec<StabilityRow>, CliError> {
    let length = cfg.geometry.curve().length().stage("meshes")?;
    let cells: Vec<(usize, usize, ProbeChoice)> = cfg
        .degrees
        .iter()
        .flat_map(|&q| (0..meshes.len()).flat_map(move |l| probes.iter().map(move |&p| (q, l, p))))
        .collect();
    let rows: Vec<Result<Vec<StabilityRow>, CliError>> = cells
        .par_iter()
        .map(|&(q, level, probe)| {
            let mesh = &meshes[level];
            let space = DiscreteSpace::constant(mesh, SpaceKind::Pq, q).stage("stability")?;
            if space.dim() > cfg.limits.max_dofs {
                return Err(CliError::Validation {
                    field: "limits.max_dofs".into(),
                    message: format!("level {level} with degree {q} has {} dofs", space.dim()),
                });
            }
            let f = probe_fn(probe, length);
            let records = stability_check_cor33(mesh, &space, &*f).stage("stability")?;
            let duality = duality_ratio_report(mesh, &space, &*f).stage("duality")?;
            Ok(records
                .into_iter()
                .map(|r| StabilityRow {
                    geometry: cfg.geometry.label().into(),
                    probe: probe.label().into(),
                    level,
                    dofs: space.dim(),
                    q,
                    projection: r.projection,
                    grad_v: r.grad_v,
                    kprime: r.kprime,
                    skipped: r.skipped,
                    duality_ratio: duality.ratio,
                    saturation: duality.saturation,
                })
                .collect())
        })
        .collect();
    let mut out = Vec::new();
    for r in rows {
        out.extend(r?);
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4e}")).unwrap_or_else(|| "-".into())
}

fn history_summary(cfg: &ExperimentConfig, rows: &[HistoryRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{} ({} on {})", cfg.name, problem_label(cfg), cfg.geometry.label());
    let _ = writeln!(
        s,
        "{:>5} {:>7} {:>12} {:>12} {:>12} {:>9} {:>9} {:>7}",
        "level", "dofs", "eta", "err_L2_w", "err_energy", "eff", "rel", "eoc"
    );
    let rates = eoc(&rows.iter().map(|r| (r.dofs, r.eta)).collect::<Vec<_>>());
    for (r, e) in rows.iter().zip(rates) {
        let _ = writeln!(
            s,
            "{:>5} {:>7} {:>12.4e} {:>12} {:>12} {:>9} {:>9} {:>7}",
            r.level,
            r.dofs,
            r.eta,
            opt(r.error_l2_weighted),
            opt(r.error_energy),
            r.eff_ratio.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into()),
            r.rel_ratio.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into()),
            e.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into()),
        );
    }
    s
}

fn trace_summary(cfg: &ExperimentConfig, trace: &ConstantTrace) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{} ({} on {})", cfg.name, trace.tag.as_str(), trace.geometry);
    let _ = writeln!(s, "{:>5} {:>7} {:>3} {:>12} {:>10}", "level", "dofs", "q", "C", "residual");
    for r in &trace.records {
        let _ = writeln!(
            s,
            "{:>5} {:>7} {:>3} {:>12.6} {:>10.2e}",
            r.level, r.dofs, r.q_max, r.c, r.residual
        );
    }
    for &q in &cfg.degrees {
        let cs: Vec<f64> = trace.records.iter().filter(|r| r.q_max == q).map(|r| r.c).collect();
        if !cs.is_empty() {
            let _ = writeln!(s, "q = {q}: max/min = {:.4}", spread(&cs));
        }
    }
    s
}

fn stability_summary(cfg: &ExperimentConfig, rows: &[StabilityRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{} (stab33 on {})", cfg.name, cfg.geometry.label());
    let _ = writeln!(
        s,
        "{:>9} {:>5} {:>7} {:>3} {:>9} {:>10} {:>10} {:>8}",
        "probe", "level", "dofs", "q", "proj", "grad_v", "kprime", "duality"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:>9} {:>5} {:>7} {:>3} {:>9} {:>10.4} {:>10.4} {:>8.4}{}",
            r.probe,
            r.level,
            r.dofs,
            r.q,
            format!("{:?}", r.projection).to_lowercase(),
            r.grad_v,
            r.kprime,
            r.duality_ratio,
            if r.skipped { " (skipped)" } else { "" }
        );
    }
    s
}

fn problem_label(cfg: &ExperimentConfig) -> &'static str {
    match cfg.problem {
        ProblemConfig::Symm { .. } => "symm",
        ProblemConfig::Hypersingular { .. } => "hypersingular",
        ProblemConfig::Invlab { .. } => "invlab",
        ProblemConfig::Stab33 { .. } => "stab33",
    }
}
