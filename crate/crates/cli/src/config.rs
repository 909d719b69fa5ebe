//! Experiment configuration files.

use std::path::PathBuf;

use lapbem::estimators::StopCriterion;
use lapbem::invlab::PencilTag;
use lapbem::spaces::MAX_DEGREE;
use lapbem::Curve;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Stem of every output file.
    pub name: String,
    pub geometry: Geometry,
    pub problem: ProblemConfig,
    /// Polynomial degrees `q`; solver runs take exactly one.
    pub degrees: Vec<usize>,
    pub refinement: Refinement,
    #[serde(default)]
    pub limits: Limits,
    #[serde(default)]
    pub output: Output,
    /// Seed of randomized checks; recorded in the manifest.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Geometry {
    Circle { radius: f64 },
    Square { side: f64 },
    Slit { length: f64 },
    Polygon { vertices: Vec<[f64; 2]>, closed: bool },
}

impl Geometry {
    pub fn curve(&self) -> Curve {
        match self {
            Geometry::Circle { radius } => Curve::circle(*radius),
            Geometry::Square { side } => Curve::square(*side),
            Geometry::Slit { length } => Curve::slit(*length),
            Geometry::Polygon { vertices, closed: true } => Curve::ClosedPolygon {
                vertices: vertices.clone(),
            },
            Geometry::Polygon { vertices, closed: false } => Curve::OpenPolygon {
                vertices: vertices.clone(),
            },
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Geometry::Circle { .. } => "circle",
            Geometry::Square { .. } => "square",
            Geometry::Slit { .. } => "slit",
            Geometry::Polygon { .. } => "polygon",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemConfig {
    Symm { data: Data },
    Hypersingular { data: Data },
    Invlab {
        tag: PencilTag,
        #[serde(default)]
        weight: WeightChoice,
    },
    Stab33 {
        #[serde(default = "default_probes")]
        probes: Vec<ProbeChoice>,
    },
}

fn default_probes() -> Vec<ProbeChoice> {
    vec![ProbeChoice::Sin2pi, ProbeChoice::ExpCos3]
}

/// Right-hand side data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Data {
    /// `Σ (a_j cos jθ + b_j sin jθ)` as the exact density or solution.
    CircleModes { modes: Vec<(usize, f64, f64)> },
    Constant { value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightChoice {
    /// `h^{1/2} / (q + 1)`.
    #[default]
    Canonical,
    /// `h^{1/2}`.
    MeshOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeChoice {
    /// `sin(2π s / L)` in the arclength `s`.
    Sin2pi,
    /// `e^x cos 3y`.
    ExpCos3,
}

impl ProbeChoice {
    pub fn label(self) -> &'static str {
        match self {
            ProbeChoice::Sin2pi => "sin2pi",
            ProbeChoice::ExpCos3 => "exp-cos3",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Refinement {
    /// `levels` meshes, the first with `initial` elements.
    Uniform { initial: usize, levels: usize },
    /// Dörfler marking with parameter `theta`.
    Adaptive {
        initial: usize,
        theta: f64,
        #[serde(default = "default_max_levels")]
        max_levels: usize,
    },
}

fn default_max_levels() -> usize {
    StopCriterion::default().max_levels
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Limits {
    pub max_dofs: usize,
    pub eta_tol: f64,
}

impl Default for Limits {
    fn default() -> Self {
        let s = StopCriterion::default();
        Limits {
            max_dofs: s.max_dofs,
            eta_tol: s.eta_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Output {
    /// Directory for artifacts; `--out-dir` takes precedence.
    pub dir: Option<PathBuf>,
}

fn invalid(field: &str, message: impl Into<String>) -> CliError {
    CliError::Validation {
        field: field.into(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| CliError::Validation {
            field: "config".into(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return Err(invalid("name", "use letters, digits, '-' and '_' only"));
        }
        self.validate_geometry()?;
        if self.degrees.is_empty() {
            return Err(invalid("degrees", "at least one degree is required"));
        }
        if let Some(q) = self.degrees.iter().find(|&&q| q > MAX_DEGREE) {
            return Err(invalid("degrees", format!("{q} exceeds {MAX_DEGREE}")));
        }
        match &self.refinement {
            Refinement::Uniform { initial, levels } => {
                if *initial == 0 {
                    return Err(invalid("refinement.initial", "must be positive"));
                }
                if *levels == 0 {
                    return Err(invalid("refinement.levels", "must be positive"));
                }
            }
            Refinement::Adaptive {
                initial,
                theta,
                max_levels,
            } => {
                if *initial == 0 {
                    return Err(invalid("refinement.initial", "must be positive"));
                }
                if !(*theta > 0.0 && *theta <= 1.0) {
                    return Err(invalid("refinement.theta", format!("{theta} is outside (0, 1]")));
                }
                if *max_levels == 0 {
                    return Err(invalid("refinement.max_levels", "must be positive"));
                }
            }
        }
        if self.limits.max_dofs == 0 {
            return Err(invalid("limits.max_dofs", "must be positive"));
        }
        if !(self.limits.eta_tol >= 0.0) {
            return Err(invalid("limits.eta_tol", "must be nonnegative"));
        }
        let closed = self.geometry.curve().is_closed();
        match &self.problem {
            ProblemConfig::Symm { data } | ProblemConfig::Hypersingular { data } => {
                if self.degrees.len() != 1 {
                    return Err(invalid("degrees", "solver runs take exactly one degree"));
                }
                match data {
                    Data::CircleModes { modes } => {
                        if !matches!(self.geometry, Geometry::Circle { .. }) {
                            return Err(invalid("problem.data", "circle modes need a circle geometry"));
                        }
                        if modes.is_empty() {
                            return Err(invalid("problem.data.modes", "at least one mode is required"));
                        }
                    }
                    Data::Constant { value } => {
                        if !value.is_finite() {
                            return Err(invalid("problem.data.value", "must be finite"));
                        }
                        let hyper = matches!(self.problem, ProblemConfig::Hypersingular { .. });
                        if hyper && closed && *value != 0.0 {
                            return Err(invalid(
                                "problem.data",
                                "constant data has nonzero mean on a closed curve",
                            ));
                        }
                    }
                }
            }
            ProblemConfig::Invlab { .. } => {}
            ProblemConfig::Stab33 { probes } => {
                if probes.is_empty() {
                    return Err(invalid("problem.probes", "at least one probe is required"));
                }
            }
        }
        if self.uses_single_layer_energy() && self.geometry.curve().diameter() >= 1.0 {
            return Err(invalid(
                "geometry",
                "diameter must be below 1 when the single-layer energy is used",
            ));
        }
        Ok(())
    }

    fn validate_geometry(&self) -> Result<(), CliError> {
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(field, format!("{v} must be positive")))
            }
        };
        match &self.geometry {
            Geometry::Circle { radius } => positive("geometry.radius", *radius),
            Geometry::Square { side } => positive("geometry.side", *side),
            Geometry::Slit { length } => positive("geometry.length", *length),
            Geometry::Polygon { vertices, closed } => {
                let need = if *closed { 3 } else { 2 };
                if vertices.len() < need {
                    return Err(invalid("geometry.vertices", format!("need at least {need} vertices")));
                }
                self.geometry
                    .curve()
                    .pieces()
                    .map(|_| ())
                    .map_err(|e| invalid("geometry.vertices", e.to_string()))
            }
        }
    }

    fn uses_single_layer_energy(&self) -> bool {
        match &self.problem {
            ProblemConfig::Symm { .. } | ProblemConfig::Stab33 { .. } => true,
            ProblemConfig::Hypersingular { .. } => false,
            ProblemConfig::Invlab { tag, .. } => tag.density_side(),
        }
    }
}
