use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{MethodId, ResultRecord};
use crate::datagen::{with_intercept, CaseId};
use crate::error::{Result, SpiError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            _ => Err(format!("unknown format `{s}` (expected csv or json)")),
        }
    }
}

impl OutputFormat {
    /// Guesses from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => OutputFormat::Json,
            _ => OutputFormat::Csv,
        }
    }
}

const FIXED_COLUMNS: [&str; 8] = [
    "method",
    "case",
    "k",
    "rep",
    "mse",
    "converged",
    "n_labeled",
    "minority_count",
];

/// 17 significant digits, exact on re-parse.
fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn reject_width(records: &[ResultRecord]) -> usize {
    records.iter().map(|r| r.reject.len()).max().unwrap_or(0)
}

fn header(width: usize) -> Vec<String> {
    FIXED_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain((0..width).map(|j| format!("reject_{j}")))
        .collect()
}

/// Fields in column order; `None` is an empty cell (CSV) or `null` (JSON).
fn fields(r: &ResultRecord, width: usize) -> Vec<(Option<String>, bool)> {
    // (text, is_string) pairs
    let mut f = vec![
        (Some(r.method.name().to_string()), true),
        (Some(r.case.to_string()), true),
        (Some(r.k.to_string()), false),
        (Some(r.rep.to_string()), false),
        (r.mse.map(num), false),
        (Some(r.converged.to_string()), false),
        (Some(r.n_labeled.to_string()), false),
        (Some(r.minority_count.to_string()), false),
    ];
    for j in 0..width {
        f.push((r.reject.get(j).map(|&b| u8::from(b).to_string()), false));
    }
    f
}

/// Writes records as CSV or JSON with a fixed column order.
pub fn emit_results(records: &[ResultRecord], format: OutputFormat, path: &Path) -> Result<()> {
    let text = render_results(records, format)?;
    std::fs::write(path, text).map_err(|e| SpiError::io(path, e))
}

pub fn render_results(records: &[ResultRecord], format: OutputFormat) -> Result<String> {
    let width = reject_width(records);
    let cols = header(width);
    match format {
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let fmt_err = |e: csv::Error| SpiError::InvalidInput(format!("csv: {e}"));
            w.write_record(&cols).map_err(fmt_err)?;
            for r in records {
                let row: Vec<String> = fields(r, width).into_iter().map(|(t, _)| t.unwrap_or_default()).collect();
                w.write_record(&row).map_err(fmt_err)?;
            }
            let bytes = w.into_inner().map_err(|e| SpiError::InvalidInput(format!("csv: {e}")))?;
            String::from_utf8(bytes).map_err(|e| SpiError::InvalidInput(e.to_string()))
        }
        OutputFormat::Json => {
            let mut out = String::from("[");
            for (n, r) in records.iter().enumerate() {
                out.push_str(if n == 0 { "\n  {" } else { ",\n  {" });
                for (i, (name, (val, quoted))) in cols.iter().zip(fields(r, width)).enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    let v = match (val, quoted) {
                        (None, _) => "null".to_string(),
                        (Some(t), true) => format!("\"{t}\""),
                        (Some(t), false) => t,
                    };
                    write!(out, "\"{name}\": {v}").expect("writing to a string");
                }
                out.push('}');
            }
            out.push_str(if records.is_empty() { "]\n" } else { "\n]\n" });
            Ok(out)
        }
    }
}

fn parse_err(path: &Path, row: usize, msg: impl std::fmt::Display) -> SpiError {
    SpiError::format(path, format!("record {row}: {msg}"))
}

fn record_from_cells(path: &Path, row: usize, cells: &[(String, Option<String>)]) -> Result<ResultRecord> {
    let get = |name: &str| -> Result<Option<&str>> {
        cells
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_deref())
            .ok_or_else(|| parse_err(path, row, format!("missing column `{name}`")))
    };
    let req = |name: &str| -> Result<&str> {
        get(name)?.ok_or_else(|| parse_err(path, row, format!("empty `{name}`")))
    };
    let int = |name: &str| -> Result<usize> {
        req(name)?.parse().map_err(|e| parse_err(path, row, format!("`{name}`: {e}")))
    };
    let method: MethodId = req("method")?.parse().map_err(|e| parse_err(path, row, e))?;
    let case: CaseId = req("case")?.parse().map_err(|e| parse_err(path, row, e))?;
    let mse = get("mse")?
        .map(|t| t.parse::<f64>().map_err(|e| parse_err(path, row, format!("`mse`: {e}"))))
        .transpose()?;
    let converged = req("converged")?.parse().map_err(|e| parse_err(path, row, format!("`converged`: {e}")))?;
    let mut reject = Vec::new();
    for j in 0.. {
        let name = format!("reject_{j}");
        let Some((_, cell)) = cells.iter().find(|(k, _)| *k == name) else { break };
        match cell.as_deref() {
            None => break,
            Some("1") => reject.push(true),
            Some("0") => reject.push(false),
            Some(t) => return Err(parse_err(path, row, format!("`{name}` = `{t}`"))),
        }
    }
    Ok(ResultRecord {
        method,
        case,
        k: int("k")?,
        rep: int("rep")?,
        mse,
        converged,
        n_labeled: int("n_labeled")?,
        minority_count: int("minority_count")?,
        reject,
    })
}

/// Reads a file written by [`emit_results`]; the format follows the extension.
pub fn read_results(path: &Path) -> Result<Vec<ResultRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| SpiError::io(path, e))?;
    match OutputFormat::from_path(path) {
        OutputFormat::Csv => {
            let mut rdr = csv::Reader::from_reader(text.as_bytes());
            let head: Vec<String> = rdr
                .headers()
                .map_err(|e| parse_err(path, 0, e))?
                .iter()
                .map(str::to_string)
                .collect();
            let mut out = Vec::new();
            for (n, row) in rdr.records().enumerate() {
                let row = row.map_err(|e| parse_err(path, n + 1, e))?;
                let cells: Vec<(String, Option<String>)> = head
                    .iter()
                    .zip(row.iter())
                    .map(|(h, v)| (h.clone(), (!v.is_empty()).then(|| v.to_string())))
                    .collect();
                out.push(record_from_cells(path, n + 1, &cells)?);
            }
            Ok(out)
        }
        OutputFormat::Json => {
            let rows: Vec<serde_json::Map<String, serde_json::Value>> =
                serde_json::from_str(&text).map_err(|e| SpiError::format(path, e))?;
            rows.iter()
                .enumerate()
                .map(|(n, obj)| {
                    let cells: Vec<(String, Option<String>)> = obj
                        .iter()
                        .map(|(k, v)| {
                            let t = match v {
                                serde_json::Value::Null => None,
                                serde_json::Value::String(s) => Some(s.clone()),
                                other => Some(other.to_string()),
                            };
                            (k.clone(), t)
                        })
                        .collect();
                    record_from_cells(path, n + 1, &cells)
                })
                .collect()
        }
    }
}

/// A cohort read from CSV.
#[derive(Debug, Clone)]
pub struct CsvCohort {
    pub covariate_names: Vec<String>,
    pub surrogate_names: Vec<String>,
    /// `N × p` with the leading intercept column.
    pub design: Array2<f64>,
    pub surrogates: Array2<f64>,
    pub labels: Vec<Option<f64>>,
    pub rho: Option<Vec<f64>>,
}

impl CsvCohort {
    pub fn n_total(&self) -> usize {
        self.design.nrows()
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.map(|_| i))
            .collect()
    }
}

/// Writes `x1.., s1.., y[, rho]`; unlabeled outcomes are empty cells.
pub fn write_cohort_csv(
    path: &Path,
    covariates: ArrayView2<f64>,
    surrogates: ArrayView2<f64>,
    labels: &[Option<f64>],
    rho: Option<&[f64]>,
) -> Result<()> {
    let n = covariates.nrows();
    if surrogates.nrows() != n || labels.len() != n || rho.is_some_and(|r| r.len() != n) {
        return Err(SpiError::DimensionMismatch("cohort columns differ in length".into()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| SpiError::io(path, std::io::Error::other(e));
    let mut head: Vec<String> = (1..=covariates.ncols()).map(|j| format!("x{j}")).collect();
    head.extend((1..=surrogates.ncols()).map(|j| format!("s{j}")));
    head.push("y".into());
    if rho.is_some() {
        head.push("rho".into());
    }
    w.write_record(&head).map_err(csv_err)?;
    for i in 0..n {
        let mut row: Vec<String> = covariates.row(i).iter().map(f64::to_string).collect();
        row.extend(surrogates.row(i).iter().map(f64::to_string));
        row.push(labels[i].map(|v| v.to_string()).unwrap_or_default());
        if let Some(r) = rho {
            row.push(r[i].to_string());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| SpiError::io(path, std::io::Error::other(e.to_string())))?;
    std::fs::write(path, bytes).map_err(|e| SpiError::io(path, e))
}

/// Reads a cohort: every column that is not a surrogate, the label or the
/// inclusion probability is an intercept-free covariate.
pub fn read_cohort_csv(
    path: &Path,
    surrogate_cols: &[String],
    label_col: &str,
    rho_col: Option<&str>,
) -> Result<CsvCohort> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| SpiError::format(path, e))?;
    let head: Vec<String> = rdr
        .headers()
        .map_err(|e| SpiError::format(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let find = |name: &str| {
        head.iter()
            .position(|h| h == name)
            .ok_or_else(|| SpiError::format(path, format!("no column named `{name}`")))
    };
    let s_idx = surrogate_cols.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let y_idx = find(label_col)?;
    let r_idx = rho_col.map(find).transpose()?;
    let x_idx: Vec<usize> = (0..head.len())
        .filter(|j| !s_idx.contains(j) && *j != y_idx && Some(*j) != r_idx)
        .collect();

    let mut xs = Vec::new();
    let mut ss = Vec::new();
    let mut labels = Vec::new();
    let mut rho = Vec::new();
    for (n, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| parse_err(path, n + 1, e))?;
        let cell = |j: usize| row.get(j).unwrap_or("").trim();
        let value = |j: usize| -> Result<f64> {
            cell(j)
                .parse::<f64>()
                .map_err(|_| parse_err(path, n + 1, format!("column `{}` = `{}` is not a number", head[j], cell(j))))
        };
        for &j in &x_idx {
            xs.push(value(j)?);
        }
        for &j in &s_idx {
            ss.push(value(j)?);
        }
        labels.push(if cell(y_idx).is_empty() { None } else { Some(value(y_idx)?) });
        if let Some(j) = r_idx {
            rho.push(value(j)?);
        }
    }
    let n = labels.len();
    if n == 0 {
        return Err(SpiError::format(path, "no data rows"));
    }
    let x = Array2::from_shape_vec((n, x_idx.len()), xs).map_err(|e| SpiError::format(path, e))?;
    let surrogates = Array2::from_shape_vec((n, s_idx.len()), ss).map_err(|e| SpiError::format(path, e))?;
    Ok(CsvCohort {
        covariate_names: x_idx.iter().map(|&j| head[j].clone()).collect(),
        surrogate_names: surrogate_cols.to_vec(),
        design: with_intercept(x.view()),
        surrogates,
        labels,
        rho: r_idx.map(|_| rho),
    })
}
