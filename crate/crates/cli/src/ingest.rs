//! Count tables and model files.

use std::fs;
use std::path::Path;

use innerns::dirichlet::CountTable;
use innerns::expr::FunctionalExpr;
use innerns::pipeline::BoxModel;
use serde::Deserialize;

use crate::error::CliError;

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a CSV or JSON count table. JSON is recognised by a `.json`
/// extension or a leading `{`.
pub fn ingest_counts(path: &Path) -> Result<CountTable, CliError> {
    let text = read(path)?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
        || text.trim_start().starts_with('{');
    if is_json {
        parse_counts_json(&text, path)
    } else {
        parse_counts_csv(&text, path)
    }
}

fn cell_name(index: usize, shape: Option<(usize, usize)>) -> String {
    match shape {
        Some((_, cols)) if cols > 0 => format!("row {}, column {}", index / cols + 1, index % cols + 1),
        _ => format!("entry {}", index + 1),
    }
}

fn validate(counts: Vec<f64>, shape: Option<(usize, usize)>, path: &Path) -> Result<CountTable, CliError> {
    for (i, &r) in counts.iter().enumerate() {
        if !(r.is_finite() && r >= 1.0) {
            return Err(CliError::Counts {
                path: path.to_path_buf(),
                msg: format!("cell {} has count {r}; every count must be at least 1", cell_name(i, shape)),
            });
        }
    }
    let table = CountTable::new(counts).map_err(|e| CliError::Counts {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    match shape {
        Some((rows, cols)) => table.with_shape(rows, cols).map_err(|e| CliError::Counts {
            path: path.to_path_buf(),
            msg: e.to_string(),
        }),
        None => Ok(table),
    }
}

/// Rows of a contingency table, flattened row-major.
pub fn parse_counts_csv(text: &str, path: &Path) -> Result<CountTable, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut counts = Vec::new();
    let mut rows = 0;
    let mut cols = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let (line, column) = match e.kind() {
                csv::ErrorKind::UnequalLengths { pos, expected_len, .. } => {
                    (pos.as_ref().map_or(0, |p| p.line()), *expected_len + 1)
                }
                _ => (e.position().map_or(0, |p| p.line()), 1),
            };
            CliError::Parse {
                path: path.to_path_buf(),
                line,
                column,
                msg: e.to_string(),
            }
        })?;
        let line = record.position().map_or(0, |p| p.line());
        for (j, field) in record.iter().enumerate() {
            let value: f64 = field.parse().map_err(|_| CliError::Parse {
                path: path.to_path_buf(),
                line,
                column: j as u64 + 1,
                msg: format!("'{field}' is not a number"),
            })?;
            counts.push(value);
        }
        cols = record.len();
        rows += 1;
    }
    if rows == 0 {
        return Err(CliError::Parse {
            path: path.to_path_buf(),
            line: 1,
            column: 1,
            msg: "no counts".into(),
        });
    }
    validate(counts, Some((rows, cols)), path)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CountsFile {
    counts: Vec<f64>,
    shape: Option<(usize, usize)>,
}

/// `{"counts": [...], "shape": [I, J]}` with an optional shape.
pub fn parse_counts_json(text: &str, path: &Path) -> Result<CountTable, CliError> {
    let file: CountsFile = serde_json::from_str(text).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        line: e.line() as u64,
        column: e.column() as u64,
        msg: e.to_string(),
    })?;
    validate(file.counts, file.shape, path)
}

/// One `evidence-compare` model: an integrand over a box.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub name: Option<String>,
    pub integrand: String,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Unnormalised log prior weight; models without one weigh equally.
    #[serde(default)]
    pub log_prior: f64,
}

impl ModelFile {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = read(path)?;
        serde_json::from_str(&text).map_err(|e| CliError::Parse {
            path: path.to_path_buf(),
            line: e.line() as u64,
            column: e.column() as u64,
            msg: e.to_string(),
        })
    }

    pub fn to_box_model(&self, path: &Path) -> Result<BoxModel, CliError> {
        let integrand = FunctionalExpr::parse(&self.integrand, self.lower.len()).map_err(|err| CliError::Model {
            path: path.to_path_buf(),
            msg: format!("integrand: {err}"),
        })?;
        BoxModel::new(integrand, self.lower.clone(), self.upper.clone()).map_err(|e| CliError::Model {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }
}
