//! Canonical CSV layout for predictor matrices and responses.
//!
//! Predictors: a header row (`sample_id`, then one name per column), an
//! optional row whose first cell is `domain` holding the grid, then one row
//! per sample with its id in the first cell. Responses: a two-column file
//! `sample_id,<name>` joined to the predictors by id.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

const DOMAIN_TAG: &str = "domain";

/// Shortest decimal text that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn parse_error(path: &Path, row: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        row,
        column,
        message: message.into(),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

/// Rows of `path` with their 1-based line numbers. Blank lines are skipped.
fn records(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let mut out = Vec::new();
    for rec in reader(path)?.into_records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_error(path, line, 0, e.to_string())
        })?;
        let line = rec.position().map_or(out.len() + 1, |p| p.line() as usize);
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        out.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(out)
}

fn parse_cell(path: &Path, row: usize, column: usize, cell: &str) -> Result<f64> {
    let v: f64 = cell
        .parse()
        .map_err(|_| parse_error(path, row, column, format!("'{cell}' is not a number")))?;
    if !v.is_finite() {
        return Err(parse_error(
            path,
            row,
            column,
            format!("'{cell}' is not finite"),
        ));
    }
    Ok(v)
}

/// A predictor table as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub domain: Option<Vec<f64>>,
    pub ids: Vec<String>,
    pub values: DMatrix<f64>,
}

pub fn read_table(path: &Path) -> Result<Table> {
    let rows = records(path)?;
    let Some(((_, header), body)) = rows.split_first() else {
        return Err(parse_error(path, 1, 1, "file is empty"));
    };
    if header.len() < 2 {
        return Err(parse_error(
            path,
            1,
            1,
            "header needs an id column and at least one predictor",
        ));
    }
    let width = header.len();
    let columns = header[1..].to_vec();

    let mut domain = None;
    let mut body = body;
    if let Some(((line, first), rest)) = body.split_first() {
        if first[0].eq_ignore_ascii_case(DOMAIN_TAG) {
            domain = Some(numeric_row(path, *line, first, width)?);
            body = rest;
        }
    }

    let mut ids = Vec::with_capacity(body.len());
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut data = Vec::with_capacity(body.len() * (width - 1));
    for (line, rec) in body {
        let id = rec[0].clone();
        if id.is_empty() {
            return Err(parse_error(path, *line, 1, "missing sample id"));
        }
        if let Some(first) = seen.insert(id.clone(), *line) {
            return Err(parse_error(
                path,
                *line,
                1,
                format!("duplicate sample id '{id}' (first on line {first})"),
            ));
        }
        data.extend(numeric_row(path, *line, rec, width)?);
        ids.push(id);
    }
    if ids.is_empty() {
        return Err(parse_error(path, rows.len(), 1, "no sample rows"));
    }
    let values = DMatrix::from_row_slice(ids.len(), width - 1, &data);
    Ok(Table {
        columns,
        domain,
        ids,
        values,
    })
}

fn numeric_row(path: &Path, line: usize, rec: &[String], width: usize) -> Result<Vec<f64>> {
    if rec.len() != width {
        return Err(parse_error(
            path,
            line,
            rec.len().min(width) + 1,
            format!("row has {} fields, header has {width}", rec.len()),
        ));
    }
    rec[1..]
        .iter()
        .enumerate()
        .map(|(j, c)| parse_cell(path, line, j + 2, c))
        .collect()
}

/// Predictors from `path`, with a zero response.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let t = read_table(path)?;
    let mut d = Dataset::unlabeled(t.values)?.with_sample_ids(t.ids)?;
    if let Some(grid) = t.domain {
        d = d
            .with_domain(grid)
            .map_err(|e| parse_error(path, 2, 2, e.to_string()))?;
    }
    Ok(d)
}

/// `(id, value)` pairs from a two-column response file.
pub fn load_response(path: &Path) -> Result<Vec<(String, f64)>> {
    let rows = records(path)?;
    let Some(((_, header), body)) = rows.split_first() else {
        return Err(parse_error(path, 1, 1, "file is empty"));
    };
    if header.len() != 2 {
        return Err(parse_error(
            path,
            1,
            1,
            "response file needs exactly two columns",
        ));
    }
    let mut seen = HashMap::new();
    let mut out = Vec::with_capacity(body.len());
    for (line, rec) in body {
        if rec.len() != 2 {
            return Err(parse_error(
                path,
                *line,
                rec.len().min(2) + 1,
                format!("row has {} fields, expected 2", rec.len()),
            ));
        }
        if seen.insert(rec[0].clone(), *line).is_some() {
            return Err(parse_error(
                path,
                *line,
                1,
                format!("duplicate sample id '{}'", rec[0]),
            ));
        }
        out.push((rec[0].clone(), parse_cell(path, *line, 2, &rec[1])?));
    }
    Ok(out)
}

/// Predictors from `x_path` joined by sample id to the response in `y_path`.
/// Every predictor row needs a response; extra response ids are ignored.
pub fn load_dataset(x_path: &Path, y_path: &Path) -> Result<Dataset> {
    let d = load_csv(x_path)?;
    let response: HashMap<String, f64> = load_response(y_path)?.into_iter().collect();
    let ids = d.sample_ids().expect("loaded datasets carry ids");
    let mut y = DVector::zeros(ids.len());
    for (i, id) in ids.iter().enumerate() {
        y[i] = *response.get(id).ok_or_else(|| {
            Error::Input(format!(
                "no response for sample id '{id}' in {}",
                y_path.display()
            ))
        })?;
    }
    d.with_response(y)
}

fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))
}

/// Write rows of string cells as CSV.
pub fn write_rows(path: &Path, rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .flexible(true)
        .from_writer(create(path)?);
    for r in rows {
        w.write_record(r)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e.into()))?;
    }
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn default_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("s{i}")).collect()
}

fn default_columns(d: &Dataset) -> Vec<String> {
    (0..d.p()).map(|j| format!("x{j}")).collect()
}

/// Predictors of `d` in the canonical layout. Columns are named `x0, x1, …`.
pub fn save_csv(d: &Dataset, path: &Path) -> Result<()> {
    let ids = d
        .sample_ids()
        .map_or_else(|| default_ids(d.n()), <[String]>::to_vec);
    let mut rows = Vec::with_capacity(d.n() + 2);
    rows.push(
        std::iter::once("sample_id".to_string())
            .chain(default_columns(d))
            .collect(),
    );
    if let Some(grid) = d.domain() {
        rows.push(
            std::iter::once(DOMAIN_TAG.to_string())
                .chain(grid.iter().map(|&v| fmt_f64(v)))
                .collect(),
        );
    }
    for (i, id) in ids.into_iter().enumerate() {
        rows.push(
            std::iter::once(id)
                .chain(d.x().row(i).iter().map(|&v| fmt_f64(v)))
                .collect(),
        );
    }
    write_rows(path, &rows)
}

/// Response of `d`, in original units, keyed by sample id.
pub fn save_response(d: &Dataset, path: &Path, name: &str) -> Result<()> {
    let ids = d
        .sample_ids()
        .map_or_else(|| default_ids(d.n()), <[String]>::to_vec);
    let y = d.y_original();
    let mut rows = vec![vec!["sample_id".to_string(), name.to_string()]];
    rows.extend(
        ids.into_iter()
            .zip(y.iter())
            .map(|(id, &v)| vec![id, fmt_f64(v)]),
    );
    write_rows(path, &rows)
}

/// Source layouts accepted by [`convert`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// One sample per row; first cell the id; header row names the columns.
    Rows,
    /// One sample per column; first column the domain grid; header row
    /// holds the sample ids.
    Columns,
}

/// Rewrite a predictor file into the canonical layout. With
/// `header_is_domain`, the column names of a row-layout file are parsed as
/// the domain grid.
pub fn convert(
    input: &Path,
    output: &Path,
    layout: Layout,
    header_is_domain: bool,
) -> Result<Dataset> {
    let rows = records(input)?;
    let Some(((_, header), body)) = rows.split_first() else {
        return Err(parse_error(input, 1, 1, "file is empty"));
    };
    let width = header.len();
    if width < 2 || body.is_empty() {
        return Err(parse_error(
            input,
            1,
            1,
            "need a header and at least one data row",
        ));
    }
    let d = match layout {
        Layout::Rows => {
            let mut ids = Vec::new();
            let mut data = Vec::new();
            for (line, rec) in body {
                data.extend(numeric_row(input, *line, rec, width)?);
                ids.push(rec[0].clone());
            }
            let x = DMatrix::from_row_slice(ids.len(), width - 1, &data);
            let mut d = Dataset::unlabeled(x)?.with_sample_ids(unique_ids(input, ids)?)?;
            if header_is_domain {
                let grid = header[1..]
                    .iter()
                    .enumerate()
                    .map(|(j, c)| parse_cell(input, 1, j + 2, c))
                    .collect::<Result<Vec<_>>>()?;
                d = d.with_domain(grid)?;
            }
            d
        }
        Layout::Columns => {
            let mut grid = Vec::with_capacity(body.len());
            let mut data = Vec::with_capacity(body.len() * (width - 1));
            for (line, rec) in body {
                grid.push(parse_cell(input, *line, 1, &rec[0])?);
                data.extend(numeric_row(input, *line, rec, width)?);
            }
            // Stored grid-major; transpose so samples become rows.
            let x = DMatrix::from_row_slice(body.len(), width - 1, &data).transpose();
            Dataset::unlabeled(x)?
                .with_sample_ids(unique_ids(input, header[1..].to_vec())?)?
                .with_domain(grid)?
        }
    };
    save_csv(&d, output)?;
    Ok(d)
}

fn unique_ids(path: &Path, ids: Vec<String>) -> Result<Vec<String>> {
    let mut seen = HashMap::new();
    for (k, id) in ids.iter().enumerate() {
        if seen.insert(id, k).is_some() {
            return Err(parse_error(
                path,
                0,
                0,
                format!("duplicate sample id '{id}'"),
            ));
        }
    }
    Ok(ids)
}

/// Write `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    create(path)?
        .write_all(text.as_bytes())
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
