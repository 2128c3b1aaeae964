//! Curve and result files.
//!
//! A curve file has the header `id,response,t_0,…,t_{G−1}` where the `t_j`
//! are the grid points, followed by one row per observation. Values are
//! written with Rust's shortest round-trip float formatting, so a dataset
//! survives a write/read cycle bit for bit.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use tlflr_core::funcore::{FunctionalDataset, Grid, GridFunction, Population};

use crate::error::{CliError, CliResult};

/// Largest deviation of a header grid point from the uniform grid on `[0, 1]`.
pub const GRID_TOL: f64 = 1e-9;

pub const RESULT_COLUMNS: [&str; 9] = ["scenario", "method", "rep", "seed", "metric", "value", "m", "tau", "millis"];

/// A parsed curve file.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveTable {
    pub ids: Vec<String>,
    pub data: FunctionalDataset,
}

fn located(row: u64, col: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("row {row}, column {col}: {msg}"))
}

fn parse_cell(cell: &str, row: u64, col: usize) -> CliResult<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| located(row, col, format!("'{cell}' is not a number")))?;
    if !v.is_finite() {
        return Err(located(row, col, format!("'{cell}' is not finite")));
    }
    Ok(v)
}

/// Reads a curve table; rows and columns in error messages are 1-based.
pub fn read_curves<R: Read>(reader: R, label: Population) -> CliResult<CurveTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h.map_err(|e| CliError::Data(format!("unreadable header: {e}")))?,
        None => return Err(CliError::Data("empty curve file".into())),
    };
    if header.len() < 4 || header[0].trim() != "id" || header[1].trim() != "response" {
        return Err(located(1, 1, "header must be 'id,response,t_0,...,t_{G-1}' with at least two grid points"));
    }
    let g = header.len() - 2;
    for (j, cell) in header.iter().skip(2).enumerate() {
        let t = parse_cell(cell, 1, j + 3)?;
        let want = j as f64 / (g - 1) as f64;
        if (t - want).abs() > GRID_TOL {
            return Err(located(1, j + 3, format!("grid point {t} breaks the uniform grid on [0, 1] (expected {want})")));
        }
    }
    let grid = Grid::new(g)?;

    let mut ids = Vec::new();
    let mut curves = Vec::new();
    let mut responses = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| CliError::Data(format!("unreadable record: {e}")))?;
        let row = rec.position().map_or(0, |p| p.line());
        if rec.len() != g + 2 {
            return Err(located(row, rec.len().min(g + 2) + 1, format!("expected {} fields, found {}", g + 2, rec.len())));
        }
        ids.push(rec[0].to_string());
        responses.push(parse_cell(&rec[1], row, 2)?);
        let values = rec.iter().skip(2).enumerate().map(|(j, c)| parse_cell(c, row, j + 3)).collect::<CliResult<Vec<_>>>()?;
        curves.push(GridFunction::new(grid, values)?);
    }
    if curves.is_empty() {
        return Err(CliError::Data("curve file has a header but no observations".into()));
    }
    Ok(CurveTable { ids, data: FunctionalDataset::new(curves, responses, label)? })
}

pub fn load_curves_csv(path: &Path, label: Population) -> CliResult<CurveTable> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    read_curves(file, label).map_err(|e| match e {
        CliError::Data(msg) => CliError::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Writes a curve table; rows are labelled `0, 1, …` when `ids` is `None`.
pub fn write_curves<W: Write>(writer: W, data: &FunctionalDataset, ids: Option<&[String]>) -> CliResult<()> {
    if let Some(ids) = ids {
        if ids.len() != data.len() {
            return Err(CliError::Data(format!("{} ids for {} observations", ids.len(), data.len())));
        }
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string(), "response".to_string()];
    header.extend(data.grid().points().iter().map(|t| t.to_string()));
    w.write_record(&header).map_err(csv_err)?;
    for (i, (x, y)) in data.curves().iter().zip(data.responses()).enumerate() {
        let id = ids.map_or_else(|| i.to_string(), |ids| ids[i].clone());
        let mut rec = vec![id, y.to_string()];
        rec.extend(x.values().iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(())
}

pub fn write_curves_csv(path: &Path, data: &FunctionalDataset, ids: Option<&[String]>) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    write_curves(BufWriter::new(file), data, ids)
}

/// Two-column `t,value` file for a single function.
pub fn write_function_csv(path: &Path, f: &GridFunction, column: &str) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["t", column]).map_err(csv_err)?;
    for (t, v) in f.grid().points().iter().zip(f.values()) {
        w.write_record([t.to_string(), v.to_string()]).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Data(format!("CSV write failed: {e}"))
}

/// One line of a results file. `value`, `m` and `tau` are empty on error rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub scenario: String,
    pub method: String,
    pub rep: usize,
    pub seed: u64,
    pub metric: String,
    pub value: Option<f64>,
    pub m: Option<usize>,
    pub tau: Option<f64>,
    pub millis: u64,
}

impl ResultRow {
    pub fn is_error(&self) -> bool {
        self.metric == "error"
    }

    fn fields(&self) -> [String; 9] {
        let opt = |v: Option<String>| v.unwrap_or_default();
        [
            self.scenario.clone(),
            self.method.clone(),
            self.rep.to_string(),
            self.seed.to_string(),
            self.metric.clone(),
            opt(self.value.map(|v| v.to_string())),
            opt(self.m.map(|v| v.to_string())),
            opt(self.tau.map(|v| v.to_string())),
            self.millis.to_string(),
        ]
    }
}

pub fn write_results<W: Write>(writer: W, rows: &[ResultRow]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RESULT_COLUMNS).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.fields()).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::Data(e.to_string()))
}

pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    write_results(BufWriter::new(file), rows)
}

pub fn read_results<R: Read>(reader: R) -> CliResult<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers().map_err(|e| CliError::Data(e.to_string()))?.clone();
    if header.iter().ne(RESULT_COLUMNS) {
        return Err(CliError::Data(format!("unexpected results header {:?}", header)));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Data(e.to_string()))?;
        let row = rec.position().map_or(0, |p| p.line());
        let num = |i: usize| -> CliResult<Option<f64>> {
            if rec[i].is_empty() { Ok(None) } else { parse_cell(&rec[i], row, i + 1).map(Some) }
        };
        let int = |i: usize| -> CliResult<u64> {
            rec[i].parse().map_err(|_| located(row, i + 1, format!("'{}' is not an integer", &rec[i])))
        };
        rows.push(ResultRow {
            scenario: rec[0].to_string(),
            method: rec[1].to_string(),
            rep: int(2)? as usize,
            seed: int(3)?,
            metric: rec[4].to_string(),
            value: num(5)?,
            m: if rec[6].is_empty() { None } else { Some(int(6)? as usize) },
            tau: num(7)?,
            millis: int(8)?,
        });
    }
    Ok(rows)
}
