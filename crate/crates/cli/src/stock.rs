//! Stock prices as functional data.
//!
//! For each ticker, the first month's price path becomes the relative-return
//! curve `X(t) = (v(t) − v(t₀)) / v(t₀)` with trading days placed evenly on
//! `[0, 1]`, and the response is the second month's overall return
//! `Y = (v′(t_T) − v′(t₀)) / v′(t₀)`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::Deserialize;
use tlflr_core::funcore::{FunctionalDataset, Grid, GridFunction, Population};

use crate::error::{CliError, CliResult};

/// One row of a stock file.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct StockRecord {
    pub ticker: String,
    pub day: f64,
    pub price: f64,
    pub month: u8,
}

/// Curve and response for one ticker on `grid`.
pub fn stock_transform(month1: &[f64], month2: &[f64], grid: Grid) -> CliResult<(GridFunction, f64)> {
    let (Some(&v0), Some(&w0), Some(&w_end)) = (month1.first(), month2.first(), month2.last()) else {
        return Err(CliError::Data("both months need at least one price".into()));
    };
    if v0 == 0.0 || w0 == 0.0 {
        return Err(CliError::Data("initial price is zero".into()));
    }
    if month1.iter().chain(month2).any(|p| !p.is_finite()) {
        return Err(CliError::Data("non-finite price".into()));
    }
    let returns: Vec<f64> = month1.iter().map(|v| (v - v0) / v0).collect();
    let curve = if returns.len() == 1 {
        GridFunction::constant(grid, returns[0])
    } else {
        GridFunction::new(Grid::new(returns.len())?, returns)?.resample(grid)
    };
    Ok((curve, (w_end - w0) / w0))
}

pub fn read_stock_records<R: Read>(reader: R) -> CliResult<Vec<StockRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<StockRecord>().enumerate() {
        let rec = rec.map_err(|e| CliError::Data(format!("row {}: {e}", i + 2)))?;
        if rec.month != 1 && rec.month != 2 {
            return Err(CliError::Data(format!("row {}: month must be 1 or 2, got {}", i + 2, rec.month)));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Builds one observation per ticker, ordered by ticker. Prices within a
/// month are ordered by `day`.
pub fn stock_dataset(records: &[StockRecord], grid: Grid, label: Population) -> CliResult<(Vec<String>, FunctionalDataset)> {
    let mut by_ticker: BTreeMap<&str, [Vec<(f64, f64)>; 2]> = BTreeMap::new();
    for r in records {
        by_ticker.entry(&r.ticker).or_default()[(r.month - 1) as usize].push((r.day, r.price));
    }
    let mut ids = Vec::new();
    let mut curves = Vec::new();
    let mut responses = Vec::new();
    for (ticker, mut months) in by_ticker {
        for m in months.iter_mut() {
            m.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
        let prices = |m: &[(f64, f64)]| m.iter().map(|p| p.1).collect::<Vec<_>>();
        let (x, y) = stock_transform(&prices(&months[0]), &prices(&months[1]), grid)
            .map_err(|e| CliError::Data(format!("ticker {ticker}: {e}")))?;
        ids.push(ticker.to_string());
        curves.push(x);
        responses.push(y);
    }
    if curves.is_empty() {
        return Err(CliError::Data("stock file has no records".into()));
    }
    Ok((ids, FunctionalDataset::new(curves, responses, label)?))
}

pub fn load_stock_csv(path: &Path, grid: Grid, label: Population) -> CliResult<(Vec<String>, FunctionalDataset)> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let records = read_stock_records(file).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    stock_dataset(&records, grid, label)
}
