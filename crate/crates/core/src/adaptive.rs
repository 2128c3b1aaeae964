//! Adaptive transfer when the informative sources are unknown.
//!
//! The target sample is split in two. On the first half every source is
//! ranked by how far its empirical cross-moment curve `E[X(t)(Y − EY)]` lies
//! from the target's; nested candidate sets are formed from the ranking and
//! one estimator is fitted per set. The second half then selects and mixes
//! candidates by sparse aggregation, or optionally by Q-aggregation.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::funcore::{inner_product, mean_function, FunctionalDataset, GridFunction};
use crate::modelsel::{select_and_fit, CvPlan, CvReport, Estimator};
use crate::regress::{intercept_of, SlopeEstimate, SourceFit, TargetFpca, Tuning};
use crate::seeding::{derive_seed, rng_from};

/// Quadratic coefficients below this make the mixing weight degenerate.
pub const DEGENERATE_QUADRATIC: f64 = 1e-14;

pub const DEFAULT_SPLIT_FRACTION: f64 = 0.5;

const SPLIT_STREAM: u64 = 0x5B11;
const CANDIDATE_STREAM: u64 = 0xCA4D;

/// Disjoint partition of the target indices into a fitting half `ℐ₁` and an
/// aggregation half `ℐ₂`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    indices_d1: Vec<usize>,
    indices_d2: Vec<usize>,
    seed: u64,
}

impl SplitSpec {
    /// Random split with `|ℐ₁| = ⌈n · fraction⌉`, kept within `[1, n − 1]`.
    pub fn random(n: usize, fraction: f64, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::Domain(format!("cannot split {n} observations into two nonempty halves")));
        }
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::Validation(format!("split fraction must lie in (0, 1), got {fraction}")));
        }
        let n1 = ((n as f64 * fraction).ceil() as usize).clamp(1, n - 1);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng_from(seed, &[SPLIT_STREAM]));
        let mut d1 = perm[..n1].to_vec();
        let mut d2 = perm[n1..].to_vec();
        d1.sort_unstable();
        d2.sort_unstable();
        Ok(SplitSpec { indices_d1: d1, indices_d2: d2, seed })
    }

    /// Explicit split; validated to be a disjoint cover of `0..n`.
    pub fn from_indices(n: usize, mut d1: Vec<usize>, mut d2: Vec<usize>, seed: u64) -> Result<Self> {
        if d1.is_empty() || d2.is_empty() {
            return Err(Error::Validation("both halves of a split must be nonempty".into()));
        }
        let mut seen = vec![false; n];
        for &i in d1.iter().chain(&d2) {
            if i >= n || seen[i] {
                return Err(Error::Validation(format!("index {i} is out of range or repeated")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Validation("split does not cover every observation".into()));
        }
        d1.sort_unstable();
        d2.sort_unstable();
        Ok(SplitSpec { indices_d1: d1, indices_d2: d2, seed })
    }

    pub fn indices_d1(&self) -> &[usize] {
        &self.indices_d1
    }

    pub fn indices_d2(&self) -> &[usize] {
        &self.indices_d2
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn apply(&self, data: &FunctionalDataset) -> Result<(FunctionalDataset, FunctionalDataset)> {
        Ok((data.subset(&self.indices_d1)?, data.subset(&self.indices_d2)?))
    }
}

/// Discrepancy statistics and the nested candidate sets built from them.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSets {
    zeta: Vec<f64>,
    sets: Vec<Vec<usize>>,
}

impl CandidateSets {
    pub fn zeta(&self) -> &[f64] {
        &self.zeta
    }

    /// `Â₀ … Â_L`, each sorted by source index.
    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    /// Sources in increasing order of discrepancy.
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.zeta.len()).collect();
        order.sort_by(|&a, &b| self.zeta[a].partial_cmp(&self.zeta[b]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
        order
    }
}

/// `t ↦ n⁻¹ Σ Xᵢ(t)(Yᵢ − Ȳ)`.
fn cross_moment(data: &FunctionalDataset) -> GridFunction {
    let ybar = data.response_mean();
    let n = data.len() as f64;
    let mut acc = vec![0.0; data.grid().len()];
    for (x, y) in data.curves().iter().zip(data.responses()) {
        let c = (y - ybar) / n;
        for (a, v) in acc.iter_mut().zip(x.values()) {
            *a += c * v;
        }
    }
    GridFunction::new(data.grid(), acc).expect("finite cross moment")
}

/// Integrated squared distance between the source and target cross-moment curves.
pub fn zeta_statistic(source: &FunctionalDataset, target_d1: &FunctionalDataset) -> Result<f64> {
    if source.grid() != target_d1.grid() {
        return Err(Error::Dimension("source and target are sampled on different grids".into()));
    }
    let diff = cross_moment(source).sub(&cross_moment(target_d1))?;
    Ok(inner_product(&diff, &diff)?.max(0.0))
}

/// `Â_l` holds the `l` sources with smallest `ζ̂`, ties going to the lower index.
pub fn build_candidate_sets(zeta: &[f64]) -> Result<CandidateSets> {
    if let Some(bad) = zeta.iter().find(|z| !z.is_finite()) {
        return Err(Error::Validation(format!("discrepancy statistic {bad} is not finite")));
    }
    let mut out = CandidateSets { zeta: zeta.to_vec(), sets: Vec::with_capacity(zeta.len() + 1) };
    let order = out.ranking();
    for l in 0..=zeta.len() {
        let mut set = order[..l].to_vec();
        set.sort_unstable();
        out.sets.push(set);
    }
    Ok(out)
}

/// Outcome of sparse aggregation.
#[derive(Clone, Debug)]
pub struct AggregationResult {
    /// Index of the empirical risk minimizer `l₁⋆`.
    pub l1: usize,
    /// Index of the mixing partner `l₂⋆`.
    pub l2: usize,
    /// Weight on `l₁⋆`.
    pub lambda: f64,
    /// The mixture; reports the tuning of the `l₁⋆` candidate.
    pub aggregate: SlopeEstimate,
    /// `R_{n,2}` of every candidate.
    pub empirical_risks: Vec<f64>,
    /// `R_{n,2}` of the aggregate.
    pub aggregate_risk: f64,
}

/// Centered responses and the candidates' centered predictions on the aggregation half.
struct HoldoutDesign {
    centered: Vec<f64>,
    /// `preds[l][i] = ⟨Xᵢ − X̄₂, b̂_l⟩`.
    preds: Vec<Vec<f64>>,
    x_mean: GridFunction,
    y_mean: f64,
}

impl HoldoutDesign {
    fn new(candidates: &[SlopeEstimate], d2: &FunctionalDataset) -> Result<Self> {
        let grid = d2.grid();
        if let Some(c) = candidates.iter().find(|c| c.slope_curve().grid() != grid) {
            return Err(Error::Dimension(format!(
                "candidate on a {}-point grid, aggregation data on {} points",
                c.slope_curve().grid().len(),
                grid.len()
            )));
        }
        let x_mean = mean_function(d2)?;
        let y_mean = d2.response_mean();
        let centered_x: Vec<GridFunction> = d2.curves().iter().map(|x| x.sub(&x_mean)).collect::<Result<_>>()?;
        let centered = d2.responses().iter().map(|y| y - y_mean).collect();
        let preds = candidates
            .iter()
            .map(|c| centered_x.iter().map(|x| inner_product(x, c.slope_curve())).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?;
        Ok(HoldoutDesign { centered, preds, x_mean, y_mean })
    }

    fn n(&self) -> f64 {
        self.centered.len() as f64
    }

    fn risk_of(&self, pred: &[f64]) -> f64 {
        self.centered.iter().zip(pred).map(|(c, p)| (c - p).powi(2)).sum::<f64>() / self.n()
    }
}

/// `R_{n,2}(b)` on a held-out sample, using that sample's own means.
pub fn holdout_risk(slope: &GridFunction, d2: &FunctionalDataset) -> Result<f64> {
    let x_mean = mean_function(d2)?;
    let y_mean = d2.response_mean();
    let mut acc = 0.0;
    for (x, y) in d2.curves().iter().zip(d2.responses()) {
        acc += (y - y_mean - inner_product(&x.sub(&x_mean)?, slope)?).powi(2);
    }
    Ok(acc / d2.len() as f64)
}

fn argmin_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Selects the empirical risk minimizer and mixes it with the partner that
/// most reduces risk on the aggregation half. The aggregate carries the
/// aggregation half's means as its intercept.
pub fn sparse_aggregate(candidates: &[SlopeEstimate], target_d2: &FunctionalDataset) -> Result<AggregationResult> {
    if candidates.is_empty() {
        return Err(Error::Validation("no candidates to aggregate".into()));
    }
    let design = HoldoutDesign::new(candidates, target_d2)?;
    let risks: Vec<f64> = design.preds.iter().map(|p| design.risk_of(p)).collect();
    let l1 = argmin_first(&risks);
    let n = design.n();
    let p1 = &design.preds[l1];

    let mut best = (risks[l1], l1, 1.0);
    for (l, pl) in design.preds.iter().enumerate() {
        // risk(λ) = n⁻¹‖u − λd‖² with u = c − p_l, d = p_{l₁} − p_l
        let (mut dd, mut du) = (0.0, 0.0);
        for ((c, a), b) in design.centered.iter().zip(p1).zip(pl) {
            let d = a - b;
            dd += d * d;
            du += d * (c - b);
        }
        let lambda = if dd / n < DEGENERATE_QUADRATIC { 1.0 } else { (du / dd).clamp(0.0, 1.0) };
        let mixed: Vec<f64> = p1.iter().zip(pl).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
        let r = design.risk_of(&mixed);
        if r < best.0 {
            best = (r, l, lambda);
        }
    }
    let (_, l2, lambda) = best;

    let curve = candidates[l1].slope_curve().combine(lambda, candidates[l2].slope_curve(), 1.0 - lambda)?;
    let tuning = candidates[l1].tuning();
    let aggregate_risk = holdout_risk(&curve, target_d2)?;
    let aggregate = SlopeEstimate::from_curve(curve, design.y_mean, design.x_mean, tuning)?;
    Ok(AggregationResult { l1, l2, lambda, aggregate, empirical_risks: risks, aggregate_risk })
}

/// Simplex weights produced by Q-aggregation.
#[derive(Clone, Debug, PartialEq)]
pub struct QAggWeights {
    pub rho: Vec<f64>,
    pub temperature: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QAggSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QAggSettings {
    fn default() -> Self {
        QAggSettings { tol: 1e-8, max_iter: 50_000 }
    }
}

/// The Q-aggregation objective in terms of held-out predictions.
struct QObjective {
    centered: Vec<f64>,
    preds: Vec<Vec<f64>>,
    risks: Vec<f64>,
    /// Weight of the entropy term, `2T / n̄`.
    kappa: f64,
}

impl QObjective {
    fn n(&self) -> f64 {
        self.centered.len() as f64
    }

    fn mixture(&self, rho: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.centered.len()];
        for (r, p) in rho.iter().zip(&self.preds) {
            for (o, v) in out.iter_mut().zip(p) {
                *o += r * v;
            }
        }
        out
    }

    fn value(&self, rho: &[f64]) -> f64 {
        let mix = self.mixture(rho);
        let fit = self.centered.iter().zip(&mix).map(|(c, m)| (c - m).powi(2)).sum::<f64>() / self.n();
        let lin: f64 = rho.iter().zip(&self.risks).map(|(r, l)| r * l).sum();
        let ent: f64 = rho.iter().filter(|&&r| r > 0.0).map(|r| r * r.ln()).sum();
        fit + lin + self.kappa * ent
    }

    /// Gradient of the smooth part.
    fn gradient(&self, rho: &[f64]) -> Vec<f64> {
        let mix = self.mixture(rho);
        let resid: Vec<f64> = self.centered.iter().zip(&mix).map(|(c, m)| c - m).collect();
        self.preds
            .iter()
            .zip(&self.risks)
            .map(|(p, r)| -2.0 / self.n() * p.iter().zip(&resid).map(|(a, b)| a * b).sum::<f64>() + r)
            .collect()
    }

    /// Largest entry of the Hessian `(2/n̄) PᵀP`, the smoothness constant in ℓ₁.
    fn curvature(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for a in &self.preds {
            for b in &self.preds {
                let h = 2.0 / self.n() * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
                worst = worst.max(h.abs());
            }
        }
        worst
    }
}

/// Entropy-penalized simplex weights minimizing the Q-aggregation objective,
/// found by proximal exponentiated-gradient steps from the uniform point.
pub fn q_aggregate(
    candidates: &[SlopeEstimate],
    target_d2: &FunctionalDataset,
    temperature: f64,
) -> Result<QAggWeights> {
    q_aggregate_with(candidates, target_d2, temperature, QAggSettings::default())
}

pub fn q_aggregate_with(
    candidates: &[SlopeEstimate],
    target_d2: &FunctionalDataset,
    temperature: f64,
    settings: QAggSettings,
) -> Result<QAggWeights> {
    if candidates.is_empty() {
        return Err(Error::Validation("no candidates to aggregate".into()));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Domain(format!("temperature must be positive, got {temperature}")));
    }
    let design = HoldoutDesign::new(candidates, target_d2)?;
    let risks = design.preds.iter().map(|p| design.risk_of(p)).collect();
    let kappa = 2.0 * temperature / design.n();
    let obj = QObjective { centered: design.centered, preds: design.preds, risks, kappa };

    let k = candidates.len();
    let mut rho = vec![1.0 / k as f64; k];
    let mut value = obj.value(&rho);
    if k == 1 {
        return Ok(QAggWeights { rho, temperature, objective: value, iterations: 0, converged: true });
    }
    let eta = 1.0 / obj.curvature().max(kappa).max(f64::MIN_POSITIVE);
    let shrink = 1.0 / (1.0 + eta * kappa);

    let mut converged = false;
    let mut iterations = 0;
    while iterations < settings.max_iter {
        iterations += 1;
        let grad = obj.gradient(&rho);
        let logits: Vec<f64> = rho.iter().zip(&grad).map(|(r, g)| (r.ln() - eta * g) * shrink).collect();
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut next: Vec<f64> = logits.iter().map(|z| (z - top).exp()).collect();
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|r| *r = (*r / total).max(f64::MIN_POSITIVE));
        let next_value = obj.value(&next);
        let change = (value - next_value).abs();
        rho = next;
        value = next_value;
        if change < settings.tol {
            converged = true;
            break;
        }
    }
    let total: f64 = rho.iter().sum();
    rho.iter_mut().for_each(|r| *r /= total);
    let objective = obj.value(&rho);
    Ok(QAggWeights { rho, temperature, objective, iterations, converged })
}

/// Value of the Q-aggregation objective at given weights (for diagnostics and tests).
pub fn q_objective(
    candidates: &[SlopeEstimate],
    target_d2: &FunctionalDataset,
    temperature: f64,
    rho: &[f64],
) -> Result<f64> {
    if rho.len() != candidates.len() {
        return Err(Error::Dimension(format!("{} weights for {} candidates", rho.len(), candidates.len())));
    }
    let design = HoldoutDesign::new(candidates, target_d2)?;
    let risks = design.preds.iter().map(|p| design.risk_of(p)).collect();
    let kappa = 2.0 * temperature / design.n();
    Ok(QObjective { centered: design.centered, preds: design.preds, risks, kappa }.value(rho))
}

/// How candidate estimators are tuned.
#[derive(Clone, Debug, PartialEq)]
pub enum CandidateTuning {
    /// Cross-validate each candidate separately on the fitting half.
    PerCandidate(CvPlan),
    /// Use one `(m, τ)` for every candidate (`τ` is ignored by the target-only one).
    Shared(Tuning),
}

impl Default for CandidateTuning {
    fn default() -> Self {
        CandidateTuning::PerCandidate(CvPlan::default())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveConfig {
    pub split_fraction: f64,
    pub seed: u64,
    pub tuning: CandidateTuning,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig { split_fraction: DEFAULT_SPLIT_FRACTION, seed: 0, tuning: CandidateTuning::default() }
    }
}

/// A fitted candidate together with its cross-validation report, if any.
#[derive(Clone, Debug)]
pub struct Candidate {
    pub sources: Vec<usize>,
    pub estimate: SlopeEstimate,
    pub report: Option<CvReport>,
}

#[derive(Clone, Debug)]
pub struct AdaptiveFit {
    pub split: SplitSpec,
    pub candidate_sets: CandidateSets,
    pub candidates: Vec<Candidate>,
    /// Aggregation on the second half. Its estimate's intercept uses the whole target.
    pub aggregation: AggregationResult,
}

impl AdaptiveFit {
    pub fn estimate(&self) -> &SlopeEstimate {
        &self.aggregation.aggregate
    }
}

fn fit_candidate(
    d1: &FunctionalDataset,
    sources: &[FunctionalDataset],
    set: &[usize],
    tuning: &CandidateTuning,
    seed: u64,
) -> Result<Candidate> {
    let chosen: Vec<FunctionalDataset> = set.iter().map(|&i| sources[i].clone()).collect();
    let (estimate, report) = match tuning {
        CandidateTuning::PerCandidate(plan) => {
            let config = plan.resolve(d1.len(), d1.grid().len(), seed)?;
            let estimator = if chosen.is_empty() { Estimator::Flr } else { Estimator::Tlflr };
            let (est, rep) = select_and_fit(d1, &chosen, &config, estimator)?;
            (est, Some(rep))
        }
        CandidateTuning::Shared(t) => {
            let est = if chosen.is_empty() {
                TargetFpca::new(d1, t.m)?.fit(t.m)?
            } else {
                SourceFit::new(&chosen, t.m)?.fit(d1, t.m, t.tau)?
            };
            (est, None)
        }
    };
    Ok(Candidate { sources: set.to_vec(), estimate, report })
}

/// Split, rank sources, fit one candidate per nested set and aggregate.
pub fn adaptive_fit(
    target: &FunctionalDataset,
    sources: &[FunctionalDataset],
    config: &AdaptiveConfig,
) -> Result<AdaptiveFit> {
    if target.len() < 4 {
        return Err(Error::Domain(format!("adaptive fitting needs at least 4 target observations, got {}", target.len())));
    }
    let split = SplitSpec::random(target.len(), config.split_fraction, config.seed)?;
    adaptive_fit_with_split(target, sources, split, &config.tuning)
}

pub fn adaptive_fit_with_split(
    target: &FunctionalDataset,
    sources: &[FunctionalDataset],
    split: SplitSpec,
    tuning: &CandidateTuning,
) -> Result<AdaptiveFit> {
    let (d1, d2) = split.apply(target)?;
    let zeta = sources.iter().map(|s| zeta_statistic(s, &d1)).collect::<Result<Vec<_>>>()?;
    let candidate_sets = build_candidate_sets(&zeta)?;
    let candidates = candidate_sets
        .sets()
        .par_iter()
        .enumerate()
        .map(|(l, set)| {
            fit_candidate(&d1, sources, set, tuning, derive_seed(split.seed(), &[CANDIDATE_STREAM, l as u64]))
        })
        .collect::<Result<Vec<_>>>()?;
    let estimates: Vec<SlopeEstimate> = candidates.iter().map(|c| c.estimate.clone()).collect();
    let mut aggregation = sparse_aggregate(&estimates, &d2)?;
    let (y_mean, x_mean) = intercept_of(target)?;
    aggregation.aggregate = aggregation.aggregate.with_intercept(y_mean, x_mean)?;
    Ok(AdaptiveFit { split, candidate_sets, candidates, aggregation })
}
