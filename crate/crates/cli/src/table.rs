//! The `table` subcommand: merges convergence histories on the level key.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use lapbem::estimators::{read_history, HistoryRow};

use crate::CliError;

/// Columns of a history CSV, in order.
pub const HISTORY_COLUMNS: [&str; 8] = [
    "level",
    "dofs",
    "eta",
    "error_L2_weighted",
    "error_energy",
    "eff_ratio",
    "rel_ratio",
    "eoc",
];

/// `log(η_i / η_{i+1}) / log(N_{i+1} / N_i)` between consecutive rows; the
/// first entry is `None`.
pub fn eoc(points: &[(usize, f64)]) -> Vec<Option<f64>> {
    let mut out = vec![None; points.len()];
    for i in 1..points.len() {
        let (n0, e0) = points[i - 1];
        let (n1, e1) = points[i];
        if n1 != n0 && e0 > 0.0 && e1 > 0.0 {
            out[i] = Some((e0 / e1).ln() / (n1 as f64 / n0 as f64).ln());
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct Run {
    pub label: String,
    pub rows: Vec<HistoryRow>,
    pub eoc: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct MergedTable {
    pub runs: Vec<Run>,
}

impl MergedTable {
    pub fn levels(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.runs.iter().flat_map(|r| r.rows.iter().map(|x| x.level)).collect();
        all.sort_unstable();
        all.dedup();
        all
    }

    /// EOC of `run` at `level`, if both exist.
    pub fn eoc_at(&self, run: usize, level: usize) -> Option<f64> {
        let r = &self.runs[run];
        r.rows.iter().position(|x| x.level == level).and_then(|i| r.eoc[i])
    }

    /// One CSV line per level with `dofs`, `eta` and `eoc` for every run.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("level");
        for r in &self.runs {
            let _ = write!(s, ",{0}_dofs,{0}_eta,{0}_eoc", r.label);
        }
        s.push('\n');
        for level in self.levels() {
            let _ = write!(s, "{level}");
            for r in &self.runs {
                match r.rows.iter().position(|x| x.level == level) {
                    Some(i) => {
                        let e = r.eoc[i].map(|v| format!("{v:.6}")).unwrap_or_default();
                        let _ = write!(s, ",{},{:e},{e}", r.rows[i].dofs, r.rows[i].eta);
                    }
                    None => s.push_str(",,,"),
                }
            }
            s.push('\n');
        }
        s
    }
}

fn check_header(path: &Path, text: &str) -> Result<(), CliError> {
    let header = text.lines().next().unwrap_or("");
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols != HISTORY_COLUMNS {
        return Err(CliError::Schema {
            path: path.display().to_string(),
            message: format!(
                "columns `{header}` are not a convergence history (expected `{}`)",
                HISTORY_COLUMNS.join(",")
            ),
        });
    }
    Ok(())
}

/// Reads history CSVs and recomputes their EOC columns.
pub fn merge_histories<P: AsRef<Path>>(paths: &[P]) -> Result<MergedTable, CliError> {
    let mut runs = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for path in paths {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(CliError::io(format!("reading {}", path.display())))?;
        check_header(path, &text)?;
        let rows = read_history(text.as_bytes()).map_err(|e| CliError::Schema {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into());
        let count = seen.entry(stem.clone()).or_insert(0);
        *count += 1;
        let label = if *count > 1 { format!("{stem}_{count}") } else { stem };
        let eoc = eoc(&rows.iter().map(|r| (r.dofs, r.eta)).collect::<Vec<_>>());
        runs.push(Run { label, rows, eoc });
    }
    Ok(MergedTable { runs })
}
