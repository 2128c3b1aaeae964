//! Monte Carlo comparison of the estimators on synthetic data.
//!
//! Repetition `r` draws its data from `derive_seed(master, [r])`, so every
//! method sees the same sample; each method's cross-validation folds and
//! splits use `derive_seed(master, [r, method])`. Repetitions run in
//! parallel and rows are emitted in repetition order.

use std::time::Instant;

use rayon::prelude::*;
use tlflr_core::adaptive::{adaptive_fit, AdaptiveConfig, AggregationResult, CandidateTuning};
use tlflr_core::funcore::{FunctionalDataset, Grid};
use tlflr_core::modelsel::{select_and_fit, Estimator};
use tlflr_core::regress::SlopeEstimate;
use tlflr_core::seeding::derive_seed;
use tlflr_core::synth::{mise, Scenario};

use crate::config::{Method, RunConfig};
use crate::error::{CliError, CliResult};
use crate::io::ResultRow;

/// Slack allowed when checking that the aggregate does not lose to its best candidate.
pub const DOMINANCE_TOL: f64 = 1e-10;

/// Held-out risks from one sparse aggregation.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregationCheck {
    pub rep: usize,
    pub aggregate_risk: f64,
    pub min_candidate_risk: f64,
}

impl AggregationCheck {
    fn from_result(rep: usize, agg: &AggregationResult) -> Self {
        AggregationCheck {
            rep,
            aggregate_risk: agg.aggregate_risk,
            min_candidate_risk: agg.empirical_risks.iter().cloned().fold(f64::INFINITY, f64::min),
        }
    }

    pub fn holds(&self) -> bool {
        self.aggregate_risk <= self.min_candidate_risk + DOMINANCE_TOL
    }
}

#[derive(Clone, Debug, Default)]
pub struct BenchOutput {
    pub rows: Vec<ResultRow>,
    pub aggregation_checks: Vec<AggregationCheck>,
    /// `(rep, method, message)` for every failed fit.
    pub failures: Vec<(usize, Method, String)>,
}

/// Data a method may draw on.
pub struct MethodInputs<'a> {
    pub target: &'a FunctionalDataset,
    pub sources: &'a [FunctionalDataset],
    /// The truly informative sources, when known.
    pub informative: Option<&'a [FunctionalDataset]>,
}

/// Fits one method with cross-validated tuning; also returns the aggregation
/// details for the adaptive method.
pub fn fit_method(
    method: Method,
    inputs: &MethodInputs<'_>,
    cfg: &RunConfig,
    seed: u64,
) -> tlflr_core::Result<(SlopeEstimate, Option<AggregationResult>)> {
    let target = inputs.target;
    let plan = cfg.cv_plan();
    let cv = || plan.resolve(target.len(), target.grid().len(), seed);
    let nonempty = |s: &[FunctionalDataset], what: &str| {
        if s.is_empty() {
            Err(tlflr_core::Error::Domain(format!("{what} has no sources")))
        } else {
            Ok(())
        }
    };
    match method {
        Method::Flr => Ok((select_and_fit(target, &[], &cv()?, Estimator::Flr)?.0, None)),
        Method::OracleTl => {
            let informative = inputs
                .informative
                .ok_or_else(|| tlflr_core::Error::Domain("the informative set is unknown".into()))?;
            nonempty(informative, "the informative set")?;
            Ok((select_and_fit(target, informative, &cv()?, Estimator::Tlflr)?.0, None))
        }
        Method::NaiveTl => {
            nonempty(inputs.sources, "the source list")?;
            Ok((select_and_fit(target, inputs.sources, &cv()?, Estimator::Tlflr)?.0, None))
        }
        Method::AggTl => {
            let config = AdaptiveConfig {
                split_fraction: cfg.split_fraction,
                seed,
                tuning: CandidateTuning::PerCandidate(plan.clone()),
            };
            let fit = adaptive_fit(target, inputs.sources, &config)?;
            Ok((fit.aggregation.aggregate.clone(), Some(fit.aggregation)))
        }
    }
}

struct RepOutput {
    rows: Vec<ResultRow>,
    checks: Vec<AggregationCheck>,
    failures: Vec<(usize, Method, String)>,
}

fn run_rep(cfg: &RunConfig, grid: Grid, methods: &[Method], label: &str, rep: usize) -> CliResult<RepOutput> {
    let data_seed = derive_seed(cfg.master_seed, &[rep as u64]);
    let scenario = Scenario::generate(&cfg.synthetic(data_seed)?, grid)?;
    let sources = scenario.source_datasets();
    let informative = scenario.informative_datasets();
    let inputs = MethodInputs { target: &scenario.target, sources: &sources, informative: Some(&informative) };

    let mut out = RepOutput { rows: Vec::new(), checks: Vec::new(), failures: Vec::new() };
    for &method in methods {
        let seed = derive_seed(cfg.master_seed, &[rep as u64, method.tag()]);
        let start = Instant::now();
        let fitted = fit_method(method, &inputs, cfg, seed);
        let millis = if cfg.timing { start.elapsed().as_millis() as u64 } else { 0 };
        let mut row = ResultRow {
            scenario: label.to_string(),
            method: method.to_string(),
            rep,
            seed: data_seed,
            metric: "mise".into(),
            value: None,
            m: None,
            tau: None,
            millis,
        };
        match fitted {
            Ok((est, agg)) => {
                if let Some(agg) = agg {
                    let check = AggregationCheck::from_result(rep, &agg);
                    if !check.holds() {
                        return Err(CliError::Invariant(format!(
                            "rep {rep}: aggregate risk {} exceeds best candidate risk {}",
                            check.aggregate_risk, check.min_candidate_risk
                        )));
                    }
                    out.checks.push(check);
                }
                let tuning = est.tuning();
                row.value = Some(mise(&est, &scenario.truth));
                row.m = Some(tuning.m);
                row.tau = Some(tuning.tau);
            }
            Err(tlflr_core::Error::Invariant(msg)) => return Err(CliError::Invariant(msg)),
            Err(e) => {
                row.metric = "error".into();
                out.failures.push((rep, method, e.to_string()));
            }
        }
        out.rows.push(row);
    }
    Ok(out)
}

pub fn run_benchmark(cfg: &RunConfig) -> CliResult<BenchOutput> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let methods = cfg.method_list()?;
    let label = cfg.scenario_label();
    let per_rep: Vec<RepOutput> = cfg.in_pool(|| {
        (0..cfg.reps).into_par_iter().map(|rep| run_rep(cfg, grid, &methods, &label, rep)).collect::<CliResult<Vec<_>>>()
    })??;
    let mut out = BenchOutput::default();
    for r in per_rep {
        out.rows.extend(r.rows);
        out.aggregation_checks.extend(r.checks);
        out.failures.extend(r.failures);
    }
    Ok(out)
}

/// Median of the finite values of `metric` for `method`.
pub fn median_metric(rows: &[ResultRow], method: Method, metric: &str) -> Option<f64> {
    let name = method.to_string();
    let mut v: Vec<f64> =
        rows.iter().filter(|r| r.method == name && r.metric == metric).filter_map(|r| r.value).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len();
    Some(if k % 2 == 1 { v[k / 2] } else { 0.5 * (v[k / 2 - 1] + v[k / 2]) })
}
