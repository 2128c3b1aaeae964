//! Prediction study on grouped real data.
//!
//! Each sector in turn is the target and the remaining sectors are the
//! sources. The target is split into training and test parts, the estimators
//! are fitted on the training part, and the test mean squared prediction
//! error is reported along with its ratio to the target-only baseline.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;
use tlflr_core::adaptive::SplitSpec;
use tlflr_core::funcore::{FunctionalDataset, Grid, Population};
use tlflr_core::regress::{predict, SlopeEstimate};
use tlflr_core::seeding::derive_seed;

use crate::bench::{fit_method, AggregationCheck, BenchOutput, MethodInputs, DOMINANCE_TOL};
use crate::config::{Method, RunConfig};
use crate::error::{CliError, CliResult};
use crate::io::{load_curves_csv, ResultRow};
use crate::stock::load_stock_csv;

/// A named group of observations.
#[derive(Clone, Debug, PartialEq)]
pub struct Sector {
    pub name: String,
    pub data: FunctionalDataset,
}

/// Loads a sector from either a curve file (`id,response,…`) or a stock file
/// (`ticker,day,price,month`), chosen by the first header field. Stock curves
/// are placed on `grid`.
pub fn load_sector(path: &Path, grid: Grid) -> CliResult<Sector> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut first = String::new();
    BufReader::new(file).read_line(&mut first).map_err(|e| CliError::io(path, e))?;
    let name = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
    let data = match first.split(',').next().map(str::trim) {
        Some("id") => load_curves_csv(path, Population::Target)?.data,
        Some("ticker") => load_stock_csv(path, grid, Population::Target)?.1,
        _ => return Err(CliError::Data(format!("{}: unrecognised header '{}'", path.display(), first.trim()))),
    };
    Ok(Sector { name, data })
}

fn prediction_error(est: &SlopeEstimate, test: &FunctionalDataset) -> tlflr_core::Result<f64> {
    let mut acc = 0.0;
    for (x, y) in test.curves().iter().zip(test.responses()) {
        acc += (y - predict(est, x)?).powi(2);
    }
    Ok(acc / test.len() as f64)
}

fn relabel(data: &FunctionalDataset, label: Population) -> FunctionalDataset {
    data.clone().with_label(label)
}

fn run_one(cfg: &RunConfig, sectors: &[Sector], target_idx: usize, rep: usize) -> CliResult<BenchOutput> {
    let target = &sectors[target_idx];
    let seed = derive_seed(cfg.master_seed, &[target_idx as u64, rep as u64]);
    let split = SplitSpec::random(target.data.len(), 1.0 - cfg.test_fraction, seed)?;
    let (train, test) = split.apply(&target.data)?;
    let sources: Vec<FunctionalDataset> = sectors
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != target_idx)
        .enumerate()
        .map(|(l, (_, s))| relabel(&s.data, Population::Source(l)))
        .collect();
    let methods: &[Method] = if sources.is_empty() { &[Method::Flr] } else { &[Method::Flr, Method::NaiveTl, Method::AggTl] };
    let inputs = MethodInputs { target: &train, sources: &sources, informative: None };

    let mut out = BenchOutput::default();
    let mut baseline = None;
    for &method in methods {
        let method_seed = derive_seed(cfg.master_seed, &[target_idx as u64, rep as u64, method.tag()]);
        let start = std::time::Instant::now();
        let result = fit_method(method, &inputs, cfg, method_seed).and_then(|(est, agg)| {
            let err = prediction_error(&est, &test)?;
            Ok((est, agg, err))
        });
        let millis = if cfg.timing { start.elapsed().as_millis() as u64 } else { 0 };
        let mut row = ResultRow {
            scenario: target.name.clone(),
            method: method.to_string(),
            rep,
            seed,
            metric: "pred_error".into(),
            value: None,
            m: None,
            tau: None,
            millis,
        };
        match result {
            Ok((est, agg, err)) => {
                if let Some(agg) = agg {
                    let min = agg.empirical_risks.iter().cloned().fold(f64::INFINITY, f64::min);
                    if agg.aggregate_risk > min + DOMINANCE_TOL {
                        return Err(CliError::Invariant(format!("aggregate risk {} exceeds {min}", agg.aggregate_risk)));
                    }
                    out.aggregation_checks.push(AggregationCheck {
                        rep,
                        aggregate_risk: agg.aggregate_risk,
                        min_candidate_risk: min,
                    });
                }
                row.value = Some(err);
                row.m = Some(est.tuning().m);
                row.tau = Some(est.tuning().tau);
                if method == Method::Flr {
                    baseline = Some(err);
                }
                out.rows.push(row.clone());
                if method != Method::Flr {
                    if let Some(base) = baseline.filter(|b| *b > 0.0) {
                        out.rows.push(ResultRow { metric: "rel_pred_error".into(), value: Some(err / base), ..row });
                    }
                }
            }
            Err(tlflr_core::Error::Invariant(msg)) => return Err(CliError::Invariant(msg)),
            Err(e) => {
                row.metric = "error".into();
                out.failures.push((rep, method, format!("{}: {e}", target.name)));
                out.rows.push(row);
            }
        }
    }
    Ok(out)
}

/// Runs every (target sector, repetition) pair; rows are ordered by sector, then repetition.
pub fn run_realdata_on(sectors: &[Sector], cfg: &RunConfig) -> CliResult<BenchOutput> {
    run_targets(sectors, &(0..sectors.len()).collect::<Vec<_>>(), cfg)
}

/// As [`run_realdata_on`], but only the listed sectors take the target role.
pub fn run_targets(sectors: &[Sector], targets: &[usize], cfg: &RunConfig) -> CliResult<BenchOutput> {
    if sectors.is_empty() {
        return Err(CliError::Config("no sectors given".into()));
    }
    if cfg.reps == 0 {
        return Err(CliError::Config("repetitions must be at least 1".into()));
    }
    if !(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0) {
        return Err(CliError::Config(format!("test fraction must lie in (0, 1), got {}", cfg.test_fraction)));
    }
    if let Some(s) = sectors.iter().find(|s| s.data.grid() != sectors[0].data.grid()) {
        return Err(CliError::Data(format!("sector {} uses a different grid", s.name)));
    }
    if let Some(t) = targets.iter().find(|&&t| t >= sectors.len()) {
        return Err(CliError::Config(format!("target sector {t} out of range")));
    }
    let jobs: Vec<(usize, usize)> = targets.iter().flat_map(|&s| (0..cfg.reps).map(move |r| (s, r))).collect();
    let parts = cfg.in_pool(|| jobs.par_iter().map(|&(s, r)| run_one(cfg, sectors, s, r)).collect::<CliResult<Vec<_>>>())??;
    let mut out = BenchOutput::default();
    for p in parts {
        out.rows.extend(p.rows);
        out.aggregation_checks.extend(p.aggregation_checks);
        out.failures.extend(p.failures);
    }
    Ok(out)
}

pub fn run_realdata(cfg: &RunConfig) -> CliResult<BenchOutput> {
    if cfg.sectors.is_empty() {
        return Err(CliError::Config("realdata needs at least one sector file".into()));
    }
    let grid = cfg.grid()?;
    let sectors = cfg.sectors.iter().map(|p| load_sector(p, grid)).collect::<CliResult<Vec<_>>>()?;
    run_realdata_on(&sectors, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tlflr_core::synth::{ModelKind, Scenario, SyntheticConfig};

    fn sectors(count: usize, seed: u64) -> Vec<Sector> {
        let cfg = SyntheticConfig {
            model: ModelKind::II,
            n: 40,
            n_source: 40,
            sources: count - 1,
            informative: count - 1,
            seed,
            ..Default::default()
        };
        let sc = Scenario::generate(&cfg, Grid::new(30).unwrap()).unwrap();
        let mut out = vec![Sector { name: "target".into(), data: sc.target }];
        out.extend(sc.sources.into_iter().enumerate().map(|(i, s)| Sector { name: format!("s{i}"), data: s.dataset }));
        out
    }

    fn cfg() -> RunConfig {
        RunConfig { reps: 2, m_grid: Some(vec![1, 2, 3]), tau_grid: Some(vec![0.0, 0.05]), ..Default::default() }
    }

    #[test]
    fn single_sector_only_flr() {
        let s = sectors(1, 1);
        let out = run_realdata_on(&s, &cfg()).unwrap();
        assert_eq!(out.rows.len(), 2);
        assert!(out.rows.iter().all(|r| r.method == "FLR" && r.metric == "pred_error"));
    }

    #[test]
    fn rows_and_ratios() {
        let s = sectors(3, 2);
        let out = run_realdata_on(&s, &cfg()).unwrap();
        assert!(out.failures.is_empty(), "{:?}", out.failures);
        // per (sector, rep): FLR, Naive, Naive ratio, Agg, Agg ratio
        assert_eq!(out.rows.len(), 3 * 2 * 5);
        let flr = out.rows[0].value.unwrap();
        let naive = out.rows[1].value.unwrap();
        assert!((out.rows[2].value.unwrap() - naive / flr).abs() < 1e-15);
        assert_eq!(out.rows[2].metric, "rel_pred_error");
        assert_eq!(out.aggregation_checks.len(), 6);
        let again = run_realdata_on(&s, &cfg()).unwrap();
        assert_eq!(out.rows, again.rows);
    }

    #[test]
    fn missing_sector_file() {
        let cfg = RunConfig { sectors: vec!["/definitely/not/here.csv".into()], ..cfg() };
        assert_eq!(run_realdata(&cfg).unwrap_err().exit_code(), 3);
        assert_eq!(run_realdata(&RunConfig::default()).unwrap_err().exit_code(), 2);
    }
}
