//! Run configuration shared by all subcommands.
//!
//! Values come from built-in defaults, then an optional JSON file whose keys
//! mirror the field names below, then command-line flags.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use tlflr_core::funcore::Grid;
use tlflr_core::modelsel::CvPlan;
use tlflr_core::synth::{ModelKind, ScoreDist, SyntheticConfig};

use crate::error::{CliError, CliResult};

/// Estimators compared by the benchmark and real-data runners.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Flr,
    /// Transfer on the true informative set.
    OracleTl,
    /// Transfer on every source.
    NaiveTl,
    /// Sparse aggregation over nested candidate sets.
    AggTl,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Flr, Method::OracleTl, Method::NaiveTl, Method::AggTl];

    /// Stream tag for seeds derived per method.
    pub fn tag(self) -> u64 {
        match self {
            Method::Flr => 1,
            Method::OracleTl => 2,
            Method::NaiveTl => 3,
            Method::AggTl => 4,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Flr => "FLR",
            Method::OracleTl => "TL-FLR",
            Method::NaiveTl => "Naive TL-FLR",
            Method::AggTl => "Agg TL-FLR",
        })
    }
}

impl FromStr for Method {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s.trim().to_ascii_lowercase().replace(' ', "-").as_str() {
            "flr" => Ok(Method::Flr),
            "tl-flr" | "tl" | "oracle" => Ok(Method::OracleTl),
            "naive-tl-flr" | "naive" => Ok(Method::NaiveTl),
            "agg-tl-flr" | "agg" => Ok(Method::AggTl),
            other => Err(CliError::Config(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Label written to the `scenario` column; derived from the model when absent.
    pub scenario: Option<String>,
    pub model: String,
    pub alpha: f64,
    pub beta: f64,
    pub n: usize,
    pub n_source: usize,
    /// Number of sources `L`.
    #[serde(rename = "L")]
    pub sources: usize,
    /// Number of informative sources `K`.
    #[serde(rename = "K")]
    pub informative: usize,
    pub h: f64,
    pub s: usize,
    pub sigma_eps: f64,
    pub score_dist: String,
    pub truncation: usize,
    /// Grid length; the model's default when absent.
    pub grid_len: Option<usize>,
    pub reps: usize,
    pub master_seed: u64,
    pub folds: usize,
    pub m_grid: Option<Vec<usize>>,
    pub tau_grid: Option<Vec<f64>>,
    /// Methods to run; a model-dependent default when absent.
    pub methods: Option<Vec<String>>,
    pub split_fraction: f64,
    /// Share of each target sector held out for testing in `realdata`.
    pub test_fraction: f64,
    pub jobs: Option<usize>,
    /// Record wall-clock milliseconds; otherwise the column is 0 so output is reproducible.
    pub timing: bool,
    pub out: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub source_files: Vec<PathBuf>,
    pub sectors: Vec<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let syn = SyntheticConfig::default();
        RunConfig {
            scenario: None,
            model: syn.model.to_string(),
            alpha: syn.alpha,
            beta: syn.beta,
            n: syn.n,
            n_source: syn.n_source,
            sources: syn.sources,
            informative: syn.informative,
            h: syn.h,
            s: syn.s,
            sigma_eps: syn.sigma_eps,
            score_dist: syn.score_dist.to_string(),
            truncation: syn.truncation,
            grid_len: None,
            reps: 100,
            master_seed: 0,
            folds: 5,
            m_grid: None,
            tau_grid: None,
            methods: None,
            split_fraction: tlflr_core::adaptive::DEFAULT_SPLIT_FRACTION,
            test_fraction: 0.2,
            jobs: None,
            timing: false,
            out: None,
            target: None,
            source_files: Vec::new(),
            sectors: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn model_kind(&self) -> CliResult<ModelKind> {
        self.model.parse().map_err(|e: tlflr_core::Error| CliError::Config(e.to_string()))
    }

    pub fn score_distribution(&self) -> CliResult<ScoreDist> {
        self.score_dist.parse().map_err(|e: tlflr_core::Error| CliError::Config(e.to_string()))
    }

    /// Generator settings for one draw.
    pub fn synthetic(&self, seed: u64) -> CliResult<SyntheticConfig> {
        let cfg = SyntheticConfig {
            alpha: self.alpha,
            beta: self.beta,
            n: self.n,
            n_source: self.n_source,
            sources: self.sources,
            informative: self.informative,
            h: self.h,
            s: self.s,
            sigma_eps: self.sigma_eps,
            model: self.model_kind()?,
            score_dist: self.score_distribution()?,
            truncation: self.truncation,
            seed,
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn grid(&self) -> CliResult<Grid> {
        let len = match self.grid_len {
            Some(len) => len,
            None => self.synthetic(0)?.default_grid_len(),
        };
        Grid::new(len).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn cv_plan(&self) -> CvPlan {
        CvPlan { folds: self.folds, m_grid: self.m_grid.clone(), tau_grid: self.tau_grid.clone() }
    }

    pub fn method_list(&self) -> CliResult<Vec<Method>> {
        match &self.methods {
            Some(names) => {
                let mut out: Vec<Method> = names.iter().map(|s| s.parse()).collect::<CliResult<_>>()?;
                out.sort();
                out.dedup();
                if out.is_empty() {
                    return Err(CliError::Config("method list is empty".into()));
                }
                Ok(out)
            }
            None => Ok(match self.model_kind()? {
                ModelKind::I => vec![Method::Flr, Method::OracleTl],
                _ => Method::ALL.to_vec(),
            }),
        }
    }

    pub fn scenario_label(&self) -> String {
        self.scenario.clone().unwrap_or_else(|| {
            format!("model-{}_h{}_s{}_K{}_{}", self.model, self.h, self.s, self.informative, self.score_dist)
        })
    }

    /// Checks everything the runners rely on.
    pub fn validate(&self) -> CliResult<()> {
        if self.reps == 0 {
            return Err(CliError::Config("repetitions must be at least 1".into()));
        }
        if self.folds < 2 {
            return Err(CliError::Config("need at least 2 folds".into()));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(CliError::Config(format!("split fraction must lie in (0, 1), got {}", self.split_fraction)));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(CliError::Config(format!("test fraction must lie in (0, 1), got {}", self.test_fraction)));
        }
        if self.jobs == Some(0) {
            return Err(CliError::Config("jobs must be at least 1".into()));
        }
        self.synthetic(0)?;
        self.grid()?;
        self.method_list()?;
        Ok(())
    }

    /// Runs `f` on a thread pool sized by `jobs` (rayon's default when unset).
    pub fn in_pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> CliResult<T> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(j) = self.jobs {
            builder = builder.num_threads(j);
        }
        let pool = builder.build().map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
        Ok(pool.install(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.grid().unwrap().len(), 100);
        assert_eq!(cfg.method_list().unwrap(), vec![Method::Flr, Method::OracleTl]);
    }

    #[test]
    fn json_overrides_and_rejects_unknown_keys() {
        let cfg = RunConfig::from_json_str(r#"{"model": "IV", "K": 12, "reps": 3, "methods": ["agg", "FLR"]}"#).unwrap();
        assert_eq!(cfg.informative, 12);
        assert_eq!(cfg.grid().unwrap().len(), 257);
        assert_eq!(cfg.method_list().unwrap(), vec![Method::Flr, Method::AggTl]);
        let e = RunConfig::from_json_str(r#"{"bogus": 1}"#).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn invalid_settings() {
        for cfg in [
            RunConfig { reps: 0, ..Default::default() },
            RunConfig { model: "V".into(), ..Default::default() },
            RunConfig { informative: 30, ..Default::default() },
            RunConfig { methods: Some(vec!["lasso".into()]), ..Default::default() },
            RunConfig { split_fraction: 1.0, ..Default::default() },
        ] {
            assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
    }
}
