//! K-fold cross-validation over the truncation level `m` and the lasso
//! penalty `τ`.
//!
//! Only target rows are folded; source samples enter every training fold.
//! Configurations that are ill-conditioned on some fold get an infinite risk.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::funcore::{compute_scores, mean_function, scores_about, FunctionalDataset};
use crate::regress::{LassoSettings, SlopeEstimate, SourceFit, TargetFpca, Tuning};
use crate::seeding::rng_from;

/// Multipliers `c` of the default penalty grid `c · n^{-1/2}`.
pub const DEFAULT_TAU_MULTIPLIERS: [f64; 6] = [0.0, 0.25, 0.5, 1.0, 2.0, 4.0];

/// Largest truncation level in the default grid.
pub const DEFAULT_MAX_M: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Estimator {
    /// Two-step transfer estimator on target plus sources.
    Tlflr,
    /// Target-only FPCA regression; ignores the penalty grid.
    Flr,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvConfig {
    folds: usize,
    m_grid: Vec<usize>,
    tau_grid: Vec<f64>,
    seed: u64,
}

impl CvConfig {
    /// Validates the grids. The penalty grid is sorted, deduplicated and
    /// always gets `0` added.
    pub fn new(folds: usize, m_grid: Vec<usize>, tau_grid: Vec<f64>, seed: u64) -> Result<Self> {
        if folds < 2 {
            return Err(Error::Validation(format!("need at least 2 folds, got {folds}")));
        }
        if m_grid.is_empty() || m_grid.contains(&0) {
            return Err(Error::Validation("truncation grid must be nonempty and positive".into()));
        }
        if tau_grid.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::Validation("penalty grid must be finite and non-negative".into()));
        }
        let mut m_grid = m_grid;
        m_grid.sort_unstable();
        m_grid.dedup();
        let mut tau_grid = tau_grid;
        tau_grid.push(0.0);
        tau_grid.sort_by(f64::total_cmp);
        tau_grid.dedup();
        Ok(CvConfig { folds, m_grid, tau_grid, seed })
    }

    /// `m ∈ {1, …, min(20, n − 2, G − 1)}` and `τ = c · n^{-1/2}`.
    pub fn default_for(n: usize, grid_len: usize, seed: u64) -> Result<Self> {
        CvPlan::default().resolve(n, grid_len, seed)
    }

    pub fn folds(&self) -> usize {
        self.folds
    }

    pub fn m_grid(&self) -> &[usize] {
        &self.m_grid
    }

    pub fn tau_grid(&self) -> &[f64] {
        &self.tau_grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// A CV recipe whose grids may be left to the data-dependent defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct CvPlan {
    pub folds: usize,
    pub m_grid: Option<Vec<usize>>,
    pub tau_grid: Option<Vec<f64>>,
}

impl Default for CvPlan {
    fn default() -> Self {
        CvPlan { folds: 5, m_grid: None, tau_grid: None }
    }
}

impl CvPlan {
    pub fn resolve(&self, n: usize, grid_len: usize, seed: u64) -> Result<CvConfig> {
        let m_grid = match &self.m_grid {
            Some(g) => g.clone(),
            None => {
                let top = DEFAULT_MAX_M.min(n.saturating_sub(2)).min(grid_len.saturating_sub(1));
                if top == 0 {
                    return Err(Error::Domain(format!("no default truncation grid for n = {n}")));
                }
                (1..=top).collect()
            }
        };
        let tau_grid = match &self.tau_grid {
            Some(g) => g.clone(),
            None => {
                let scale = 1.0 / (n as f64).sqrt();
                DEFAULT_TAU_MULTIPLIERS.iter().map(|c| c * scale).collect()
            }
        };
        CvConfig::new(self.folds, m_grid, tau_grid, seed)
    }
}

/// Held-out risks for every `(m, τ)` pair and the selected pair.
#[derive(Clone, Debug, PartialEq)]
pub struct CvReport {
    pub m_grid: Vec<usize>,
    pub tau_grid: Vec<f64>,
    /// `risks[i][j]` is the mean held-out squared error at `(m_grid[i], tau_grid[j])`.
    pub risks: Vec<Vec<f64>>,
    pub best: Tuning,
}

impl CvReport {
    pub fn best_risk(&self) -> f64 {
        let i = self.m_grid.iter().position(|&m| m == self.best.m).unwrap_or(0);
        let j = self.tau_grid.iter().position(|&t| t == self.best.tau).unwrap_or(0);
        self.risks[i][j]
    }
}

/// Shuffles `0..n` and deals it into `folds` groups whose sizes differ by at most one.
pub fn make_folds(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds == 0 || folds > n {
        return Err(Error::Domain(format!("cannot split {n} rows into {folds} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from(seed, &[0xF01D]));
    let base = n / folds;
    let extra = n % folds;
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let size = base + usize::from(f < extra);
        let mut fold = order[start..start + size].to_vec();
        fold.sort_unstable();
        out.push(fold);
        start += size;
    }
    Ok(out)
}

enum Prepared<'a> {
    Flr,
    Tlflr(&'a SourceFit),
}

/// Cross-validated risks over the configured grid.
pub fn cross_validate(
    target: &FunctionalDataset,
    sources: &[FunctionalDataset],
    config: &CvConfig,
    estimator: Estimator,
) -> Result<CvReport> {
    match estimator {
        Estimator::Flr => cv_prepared(target, config, Prepared::Flr),
        Estimator::Tlflr => {
            let max_m = *config.m_grid.last().unwrap_or(&1);
            let source_fit = SourceFit::new(sources, max_m)?;
            cv_prepared(target, config, Prepared::Tlflr(&source_fit))
        }
    }
}

/// Cross-validates, then refits the selected configuration on the whole target.
pub fn select_and_fit(
    target: &FunctionalDataset,
    sources: &[FunctionalDataset],
    config: &CvConfig,
    estimator: Estimator,
) -> Result<(SlopeEstimate, CvReport)> {
    match estimator {
        Estimator::Flr => {
            let report = cv_prepared(target, config, Prepared::Flr)?;
            let fit = TargetFpca::new(target, report.best.m)?.fit(report.best.m)?;
            Ok((fit, report))
        }
        Estimator::Tlflr => {
            let max_m = *config.m_grid.last().unwrap_or(&1);
            let source_fit = SourceFit::new(sources, max_m)?;
            let report = cv_prepared(target, config, Prepared::Tlflr(&source_fit))?;
            let fit = source_fit.fit(target, report.best.m, report.best.tau)?;
            Ok((fit, report))
        }
    }
}

fn cv_prepared(target: &FunctionalDataset, config: &CvConfig, prepared: Prepared<'_>) -> Result<CvReport> {
    let n = target.len();
    let folds = make_folds(n, config.folds, config.seed)?;
    let nm = config.m_grid.len();
    let nt = config.tau_grid.len();

    let per_fold: Vec<Vec<Vec<f64>>> = folds
        .par_iter()
        .map(|held_out| {
            let mut in_fold = vec![false; n];
            held_out.iter().for_each(|&i| in_fold[i] = true);
            let train_idx: Vec<usize> = (0..n).filter(|&i| !in_fold[i]).collect();
            let train = target.subset(&train_idx)?;
            let test = target.subset(held_out)?;
            fold_risks(&train, &test, config, &prepared)
        })
        .collect::<Result<_>>()?;

    let mut risks = vec![vec![0.0; nt]; nm];
    for fold in &per_fold {
        for i in 0..nm {
            for j in 0..nt {
                risks[i][j] += fold[i][j] / per_fold.len() as f64;
            }
        }
    }

    let mut best: Option<(f64, usize, usize)> = None;
    for (i, row) in risks.iter().enumerate() {
        for (j, &r) in row.iter().enumerate() {
            if r.is_finite() && best.map_or(true, |(b, _, _)| r < b) {
                best = Some((r, i, j));
            }
        }
    }
    let Some((_, bi, bj)) = best else {
        return Err(Error::Domain("every (m, tau) configuration was infeasible".into()));
    };
    Ok(CvReport {
        m_grid: config.m_grid.clone(),
        tau_grid: config.tau_grid.clone(),
        risks,
        best: Tuning { m: config.m_grid[bi], tau: config.tau_grid[bj] },
    })
}

fn mse(test: &FunctionalDataset, intercept: f64, test_scores: &DMatrix<f64>, coefs: &[f64]) -> f64 {
    let m = coefs.len();
    let fitted = test_scores.columns(0, m) * DVector::from_column_slice(coefs);
    test.responses().iter().zip(fitted.iter()).map(|(y, f)| (y - intercept - f).powi(2)).sum::<f64>()
        / test.len() as f64
}

fn fold_risks(
    train: &FunctionalDataset,
    test: &FunctionalDataset,
    config: &CvConfig,
    prepared: &Prepared<'_>,
) -> Result<Vec<Vec<f64>>> {
    let nt = config.tau_grid.len();
    let max_m = *config.m_grid.last().unwrap_or(&1);
    let y_mean = train.response_mean();
    match prepared {
        Prepared::Flr => {
            let fpca = match TargetFpca::new(train, max_m) {
                Ok(f) => f,
                Err(e) if e.is_ill_conditioned() => return Ok(vec![vec![f64::INFINITY; nt]; config.m_grid.len()]),
                Err(e) => return Err(e),
            };
            let usable = fpca.max_m();
            let test_scores = scores_about(test, &mean_function(train)?, fpca.basis(), usable)?;
            Ok(config
                .m_grid
                .iter()
                .map(|&m| {
                    let risk = match fpca.coefficients(m) {
                        Ok(c) => mse(test, y_mean, test_scores.scores(), c),
                        Err(_) => f64::INFINITY,
                    };
                    vec![risk; nt]
                })
                .collect())
        }
        Prepared::Tlflr(source_fit) => {
            let usable = source_fit.max_m().min(max_m);
            let train_scores = compute_scores(train, source_fit.basis(), usable)?;
            let test_scores = scores_about(test, train_scores.center(), source_fit.basis(), usable)?;
            let centered: Vec<f64> = train.responses().iter().map(|y| y - y_mean).collect();
            let mut out = Vec::with_capacity(config.m_grid.len());
            for &m in &config.m_grid {
                let mut row = Vec::with_capacity(nt);
                for &tau in &config.tau_grid {
                    let risk = if m > usable {
                        f64::INFINITY
                    } else {
                        match source_fit.correct(train_scores.scores(), &centered, m, tau, LassoSettings::default()) {
                            Ok((coefs, _)) => mse(test, y_mean, test_scores.scores(), &coefs),
                            Err(e) if e.is_ill_conditioned() => f64::INFINITY,
                            Err(e) => return Err(e),
                        }
                    };
                    row.push(risk);
                }
                out.push(row);
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcore::{Grid, GridFunction, Population};
    use crate::regress::{fit_flr, fit_tlflr, predict};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn sample(grid: Grid, n: usize, coefs: &[f64], noise: f64, seed: u64, label: Population) -> FunctionalDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut curves = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..n {
            let z: Vec<f64> = (1..=6).map(|k| rng.gen_range(-1.7..1.7) / k as f64).collect();
            curves.push(GridFunction::from_fn(grid, |t| {
                (1..=6).map(|k| z[k - 1] * 2f64.sqrt() * (k as f64 * PI * t).cos()).sum()
            }));
            ys.push(coefs.iter().zip(&z).map(|(b, z)| b * z).sum::<f64>() + noise * rng.gen_range(-1.0..1.0));
        }
        FunctionalDataset::new(curves, ys, label).unwrap()
    }

    #[test]
    fn folds_partition_rows() {
        let folds = make_folds(10, 5, 3).unwrap();
        assert!(folds.iter().all(|f| f.len() == 2));
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());

        let loo = make_folds(7, 7, 1).unwrap();
        assert!(loo.iter().all(|f| f.len() == 1));

        assert_eq!(make_folds(23, 5, 99).unwrap(), make_folds(23, 5, 99).unwrap());
        let sizes: Vec<usize> = make_folds(23, 5, 99).unwrap().iter().map(Vec::len).collect();
        assert!(sizes.iter().all(|&s| s == 4 || s == 5));
        assert!(make_folds(3, 4, 0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(CvConfig::new(1, vec![1], vec![0.0], 0).is_err());
        assert!(CvConfig::new(5, vec![], vec![0.0], 0).is_err());
        assert!(CvConfig::new(5, vec![1], vec![-0.1], 0).is_err());
        let c = CvConfig::new(5, vec![3, 1], vec![0.5, 0.1], 0).unwrap();
        assert_eq!(c.tau_grid(), &[0.0, 0.1, 0.5]);
        assert_eq!(c.m_grid(), &[1, 3]);

        let d = CvConfig::default_for(150, 100, 0).unwrap();
        assert_eq!(d.m_grid(), (1..=20).collect::<Vec<_>>().as_slice());
        assert_eq!(d.tau_grid().len(), 6);
        assert!((d.tau_grid()[5] - 4.0 / 150f64.sqrt()).abs() < 1e-15);
        let small = CvConfig::default_for(8, 100, 0).unwrap();
        assert_eq!(small.m_grid().last(), Some(&6));
    }

    #[test]
    fn singleton_grid_selects_only_pair() {
        let grid = Grid::new(41).unwrap();
        let target = sample(grid, 30, &[1.0, 0.5], 0.1, 1, Population::Target);
        let sources = vec![sample(grid, 40, &[1.0, 0.6], 0.1, 2, Population::Source(0))];
        let cfg = CvConfig::new(5, vec![2], vec![0.0], 4).unwrap();
        let rep = cross_validate(&target, &sources, &cfg, Estimator::Tlflr).unwrap();
        assert_eq!(rep.best, Tuning { m: 2, tau: 0.0 });
    }

    #[test]
    fn flr_risks_constant_across_tau() {
        let grid = Grid::new(41).unwrap();
        let target = sample(grid, 30, &[1.0, 0.5], 0.1, 3, Population::Target);
        let cfg = CvConfig::new(5, vec![1, 2, 3], vec![0.0, 0.1, 1.0], 4).unwrap();
        let rep = cross_validate(&target, &[], &cfg, Estimator::Flr).unwrap();
        for row in &rep.risks {
            assert!(row.iter().all(|&r| r == row[0]));
        }
        assert_eq!(rep.best.tau, 0.0);
    }

    #[test]
    fn true_single_component_is_selected() {
        let grid = Grid::new(61).unwrap();
        let target = sample(grid, 30, &[2.0], 0.0, 5, Population::Target);
        let cfg = CvConfig::new(5, vec![1, 40], vec![0.0], 6).unwrap();
        let rep = cross_validate(&target, &[], &cfg, Estimator::Flr).unwrap();
        assert_eq!(rep.best.m, 1);

        // Scripted oracle: refit each fold with the public estimator and predict row by row.
        let folds = make_folds(30, 5, 6).unwrap();
        for (i, &m) in [1usize, 40].iter().enumerate() {
            let mut total = 0.0;
            let mut infeasible = false;
            for f in &folds {
                let train: Vec<usize> = (0..30).filter(|r| !f.contains(r)).collect();
                match fit_flr(&target.subset(&train).unwrap(), m) {
                    Ok(est) => {
                        let err: f64 = f
                            .iter()
                            .map(|&r| (target.responses()[r] - predict(&est, &target.curves()[r]).unwrap()).powi(2))
                            .sum();
                        total += err / f.len() as f64 / 5.0;
                    }
                    Err(e) => {
                        assert!(e.is_ill_conditioned());
                        infeasible = true;
                    }
                }
            }
            let want = if infeasible { f64::INFINITY } else { total };
            let got = rep.risks[i][0];
            assert!(got == want || (got - want).abs() < 1e-10, "m={m}: {got} vs {want}");
        }
    }

    #[test]
    fn tlflr_cv_matches_scripted_oracle() {
        let grid = Grid::new(41).unwrap();
        let target = sample(grid, 25, &[1.0, -0.5, 0.2], 0.2, 7, Population::Target);
        let sources = vec![
            sample(grid, 30, &[1.1, -0.5, 0.2], 0.2, 8, Population::Source(0)),
            sample(grid, 35, &[0.9, -0.4, 0.2], 0.2, 9, Population::Source(1)),
        ];
        let cfg = CvConfig::new(5, vec![1, 3], vec![0.0, 0.05], 12).unwrap();
        let rep = cross_validate(&target, &sources, &cfg, Estimator::Tlflr).unwrap();
        let folds = make_folds(25, 5, 12).unwrap();
        for (i, &m) in cfg.m_grid().iter().enumerate() {
            for (j, &tau) in cfg.tau_grid().iter().enumerate() {
                let mut total = 0.0;
                for f in &folds {
                    let train: Vec<usize> = (0..25).filter(|r| !f.contains(r)).collect();
                    let est = fit_tlflr(&target.subset(&train).unwrap(), &sources, m, tau).unwrap();
                    let err: f64 = f
                        .iter()
                        .map(|&r| (target.responses()[r] - predict(&est, &target.curves()[r]).unwrap()).powi(2))
                        .sum();
                    total += err / f.len() as f64 / 5.0;
                }
                assert!((rep.risks[i][j] - total).abs() < 1e-10 * (1.0 + total));
            }
        }
    }

    #[test]
    fn all_infeasible_is_an_error() {
        let grid = Grid::new(61).unwrap();
        let target = sample(grid, 10, &[2.0], 0.0, 5, Population::Target);
        let cfg = CvConfig::new(5, vec![30], vec![0.0], 6).unwrap();
        assert!(matches!(cross_validate(&target, &[], &cfg, Estimator::Flr), Err(Error::Domain(_))));
    }

    #[test]
    fn cv_is_deterministic_and_finite_or_infinite() {
        let grid = Grid::new(41).unwrap();
        let target = sample(grid, 40, &[1.0, 0.5], 0.3, 11, Population::Target);
        let sources = vec![sample(grid, 50, &[1.0, 0.5], 0.3, 12, Population::Source(0))];
        let cfg = CvConfig::default_for(40, 41, 3).unwrap();
        let a = cross_validate(&target, &sources, &cfg, Estimator::Tlflr).unwrap();
        let b = cross_validate(&target, &sources, &cfg, Estimator::Tlflr).unwrap();
        assert_eq!(a, b);
        assert!(a.risks.iter().flatten().all(|r| !r.is_nan() && *r >= 0.0));
    }
}
