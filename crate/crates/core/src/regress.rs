//! Slope estimation: the two-step transfer estimator (pooled-source initial
//! fit followed by a lasso bias correction on the target), the target-only
//! FPCA baseline, and prediction.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::funcore::{
    compute_scores, inner_product, mean_function, pooled_fpca, pooled_score_gram, covariance_estimate,
    eigendecompose, EigenSystem, FunctionalDataset, GridFunction, ScoreMatrix,
};

/// Eigenvalues (or pooled Gram diagonals) below this make a truncation level unusable.
pub const MIN_EIGENVALUE: f64 = 1e-12;

/// Relative tolerance on the off-diagonal of the pooled source score Gram.
pub const DIAGONAL_TOL: f64 = 1e-6;

/// Stopping rule for the coordinate-descent lasso.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LassoSettings {
    /// Convergence threshold on the largest coordinate change in a sweep.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for LassoSettings {
    fn default() -> Self {
        LassoSettings { tol: 1e-8, max_sweeps: 10_000 }
    }
}

/// Truncation level and lasso penalty used for a fit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tuning {
    pub m: usize,
    pub tau: f64,
}

/// Coefficients of a slope in an eigenbasis.
#[derive(Clone, Debug, PartialEq)]
pub struct Expansion {
    pub coefficients: Vec<f64>,
    pub basis: Arc<EigenSystem>,
}

/// A fitted slope function together with what prediction needs.
#[derive(Clone, Debug, PartialEq)]
pub struct SlopeEstimate {
    slope_curve: GridFunction,
    expansion: Option<Expansion>,
    response_mean: f64,
    curve_mean: GridFunction,
    tuning: Tuning,
}

impl SlopeEstimate {
    pub fn from_expansion(
        coefficients: Vec<f64>,
        basis: Arc<EigenSystem>,
        response_mean: f64,
        curve_mean: GridFunction,
        tuning: Tuning,
    ) -> Result<Self> {
        let slope_curve = basis.expand(&coefficients)?;
        if curve_mean.grid() != slope_curve.grid() {
            return Err(Error::Dimension("curve mean and basis on different grids".into()));
        }
        Ok(SlopeEstimate {
            slope_curve,
            expansion: Some(Expansion { coefficients, basis }),
            response_mean,
            curve_mean,
            tuning,
        })
    }

    /// An estimate known only pointwise, e.g. a combination of fits in different bases.
    pub fn from_curve(
        slope_curve: GridFunction,
        response_mean: f64,
        curve_mean: GridFunction,
        tuning: Tuning,
    ) -> Result<Self> {
        if curve_mean.grid() != slope_curve.grid() {
            return Err(Error::Dimension("curve mean and slope on different grids".into()));
        }
        Ok(SlopeEstimate { slope_curve, expansion: None, response_mean, curve_mean, tuning })
    }

    pub fn slope_curve(&self) -> &GridFunction {
        &self.slope_curve
    }

    pub fn expansion(&self) -> Option<&Expansion> {
        self.expansion.as_ref()
    }

    pub fn coefficients(&self) -> Option<&[f64]> {
        self.expansion.as_ref().map(|e| e.coefficients.as_slice())
    }

    pub fn response_mean(&self) -> f64 {
        self.response_mean
    }

    pub fn curve_mean(&self) -> &GridFunction {
        &self.curve_mean
    }

    pub fn tuning(&self) -> Tuning {
        self.tuning
    }

    pub fn with_intercept(mut self, response_mean: f64, curve_mean: GridFunction) -> Result<Self> {
        if curve_mean.grid() != self.slope_curve.grid() {
            return Err(Error::Dimension("curve mean on a different grid".into()));
        }
        self.response_mean = response_mean;
        self.curve_mean = curve_mean;
        Ok(self)
    }
}

/// `Ȳ + ⟨X − X̄, b̂⟩`.
pub fn predict(estimate: &SlopeEstimate, curve: &GridFunction) -> Result<f64> {
    let centered = curve.sub(&estimate.curve_mean)?;
    Ok(estimate.response_mean + inner_product(&centered, &estimate.slope_curve)?)
}

pub fn soft_threshold(z: f64, tau: f64) -> f64 {
    if z > tau {
        z - tau
    } else if z < -tau {
        z + tau
    } else {
        0.0
    }
}

/// Output of [`lasso_cd`].
#[derive(Clone, Debug, PartialEq)]
pub struct LassoSolution {
    pub delta: Vec<f64>,
    /// Objective after each sweep.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `(1/2n)‖r − Ξδ‖² + τ‖δ‖₁` by cyclic coordinate descent.
///
/// `partial_residual` is `Y − Ȳ − Ξŵ` for the bias-correction step. The
/// coordinates are visited in order `0..m` with exact minimization. Once the
/// sweep converges, the solution is polished by an exact solve on its active
/// set with fixed signs, which is accepted only when it satisfies the
/// optimality conditions and does not raise the objective.
pub fn lasso_cd(
    design: &DMatrix<f64>,
    partial_residual: &[f64],
    tau: f64,
    settings: LassoSettings,
) -> Result<LassoSolution> {
    let n = design.nrows();
    let m = design.ncols();
    if partial_residual.len() != n {
        return Err(Error::Dimension(format!("{n} design rows but {} residuals", partial_residual.len())));
    }
    if n == 0 {
        return Err(Error::Domain("lasso with no observations".into()));
    }
    if !tau.is_finite() || tau < 0.0 {
        return Err(Error::Validation(format!("penalty must be finite and non-negative, got {tau}")));
    }
    if design.iter().chain(partial_residual).any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite lasso input".into()));
    }
    let r = DVector::from_column_slice(partial_residual);
    let gram = design.transpose() * design / n as f64;
    let corr = design.transpose() * &r / n as f64;
    let base = r.norm_squared() / (2.0 * n as f64);
    let problem = Quadratic { gram, corr, base, tau };

    if tau == 0.0 {
        problem.check_unpenalized_rank()?;
    }

    let mut delta = vec![0.0; m];
    // gradient of the smooth part: Gδ − c
    let mut grad: Vec<f64> = problem.corr.iter().map(|c| -c).collect();
    let mut trace = Vec::new();
    let mut converged = m == 0;
    let mut sweeps = 0;
    while !converged && sweeps < settings.max_sweeps {
        sweeps += 1;
        let mut max_change: f64 = 0.0;
        for k in 0..m {
            let gkk = problem.gram[(k, k)];
            if gkk <= 0.0 {
                continue;
            }
            let z = gkk * delta[k] - grad[k];
            let updated = soft_threshold(z, tau) / gkk;
            let change = updated - delta[k];
            if change != 0.0 {
                for j in 0..m {
                    grad[j] += problem.gram[(j, k)] * change;
                }
                delta[k] = updated;
                max_change = max_change.max(change.abs());
            }
        }
        trace.push(problem.objective(&delta));
        converged = max_change <= settings.tol;
    }

    if converged && m > 0 {
        if let Some(polished) = problem.polish(&delta, settings.tol) {
            let value = problem.objective(&polished);
            if value <= *trace.last().unwrap_or(&f64::INFINITY) {
                delta = polished;
                trace.push(value);
            }
        }
    }

    Ok(LassoSolution { delta, objective_trace: trace, iterations: sweeps, converged })
}

struct Quadratic {
    gram: DMatrix<f64>,
    corr: DVector<f64>,
    base: f64,
    tau: f64,
}

impl Quadratic {
    fn objective(&self, delta: &[f64]) -> f64 {
        let d = DVector::from_column_slice(delta);
        let quad = 0.5 * d.dot(&(&self.gram * &d));
        self.base - self.corr.dot(&d) + quad + self.tau * delta.iter().map(|v| v.abs()).sum::<f64>()
    }

    fn check_unpenalized_rank(&self) -> Result<()> {
        let m = self.gram.nrows();
        if m == 0 {
            return Ok(());
        }
        if let Some(k) = (0..m).find(|&k| self.gram[(k, k)] <= 0.0) {
            return Err(Error::IllConditioned(format!("score column {k} is zero and the penalty is zero")));
        }
        let eig = SymmetricEigen::new(self.gram.clone()).eigenvalues;
        let max = eig.iter().cloned().fold(0.0, f64::max);
        let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        if min <= MIN_EIGENVALUE * max.max(1.0) {
            return Err(Error::IllConditioned(format!(
                "score Gram is rank deficient (smallest eigenvalue {min:e}) with zero penalty"
            )));
        }
        Ok(())
    }

    /// Exact solution on the active set of `delta` with its signs held fixed.
    fn polish(&self, delta: &[f64], tol: f64) -> Option<Vec<f64>> {
        let active: Vec<usize> = (0..delta.len()).filter(|&k| delta[k] != 0.0).collect();
        let mut out = vec![0.0; delta.len()];
        if !active.is_empty() {
            let a = active.len();
            let sub = DMatrix::from_fn(a, a, |i, j| self.gram[(active[i], active[j])]);
            let rhs = DVector::from_fn(a, |i, _| self.corr[active[i]] - self.tau * delta[active[i]].signum());
            let sol = sub.cholesky()?.solve(&rhs);
            for (i, &k) in active.iter().enumerate() {
                if sol[i].signum() != delta[k].signum() || !sol[i].is_finite() {
                    return None;
                }
                out[k] = sol[i];
            }
        }
        let d = DVector::from_column_slice(&out);
        let grad = &self.gram * &d - &self.corr;
        let slack = 10.0 * tol;
        for k in 0..out.len() {
            if out[k] == 0.0 && grad[k].abs() > self.tau + slack {
                return None;
            }
        }
        Some(out)
    }
}

/// Per-coordinate pieces of the pooled initial fit: the pooled Gram diagonal
/// and `Σ_l π_l (n_l − 1)^{-1} Ξ̂^{(l)ᵀ}(Y^{(l)} − Ȳ^{(l)})`.
fn initial_terms(source_scores: &[ScoreMatrix], source_responses: &[&[f64]]) -> Result<(Vec<f64>, Vec<f64>)> {
    let Some(first) = source_scores.first() else {
        return Err(Error::Domain("initial fit needs at least one source".into()));
    };
    if source_scores.len() != source_responses.len() {
        return Err(Error::Dimension("score matrices and responses differ in count".into()));
    }
    let m = first.ncols();
    for (s, y) in source_scores.iter().zip(source_responses) {
        if !Arc::ptr_eq(s.basis(), first.basis()) && s.basis() != first.basis() {
            return Err(Error::Dimension("source scores computed on different bases".into()));
        }
        if s.ncols() != m {
            return Err(Error::Dimension("source scores with different truncation".into()));
        }
        if s.nrows() != y.len() {
            return Err(Error::Dimension(format!("{} score rows but {} responses", s.nrows(), y.len())));
        }
    }
    let gram = pooled_score_gram(source_scores)?;
    let diag: Vec<f64> = (0..m).map(|k| gram[(k, k)]).collect();
    let scale = diag.iter().cloned().fold(0.0, f64::max);
    for j in 0..m {
        for k in 0..m {
            if j != k && gram[(j, k)].abs() > DIAGONAL_TOL * scale {
                return Err(Error::Invariant(format!(
                    "pooled score Gram not diagonal: entry ({j},{k}) = {:e}",
                    gram[(j, k)]
                )));
            }
        }
    }
    let total: usize = source_scores.iter().map(ScoreMatrix::nrows).sum();
    let mut numer = vec![0.0; m];
    for (s, y) in source_scores.iter().zip(source_responses) {
        let n_l = y.len();
        let mean = y.iter().sum::<f64>() / n_l as f64;
        let centered = DVector::from_iterator(n_l, y.iter().map(|v| v - mean));
        let cross = s.scores().transpose() * centered;
        let w = (n_l as f64 / total as f64) / (n_l - 1) as f64;
        for k in 0..m {
            numer[k] += w * cross[k];
        }
    }
    Ok((diag, numer))
}

/// Step one: pooled least squares on the source scores.
///
/// The pooled Gram is diagonal by construction of the eigenbasis, so the
/// solution is coordinate-wise; diagonality is verified rather than assumed.
pub fn fit_initial(source_scores: &[ScoreMatrix], source_responses: &[&[f64]]) -> Result<Vec<f64>> {
    let (diag, numer) = initial_terms(source_scores, source_responses)?;
    if let Some(k) = diag.iter().position(|&d| d < MIN_EIGENVALUE) {
        return Err(Error::IllConditioned(format!(
            "pooled Gram entry {k} is {:e}; truncation too large for the source data",
            diag[k]
        )));
    }
    Ok(numer.iter().zip(&diag).map(|(u, d)| u / d).collect())
}

/// Source-side state of the transfer estimator: the pooled eigenbasis and the
/// initial estimate, computed once and reused across target fits.
#[derive(Clone, Debug)]
pub struct SourceFit {
    basis: Arc<EigenSystem>,
    initial: Vec<f64>,
}

impl SourceFit {
    /// Pools the sources and fits step one for truncation levels up to `max_m`.
    ///
    /// Levels whose pooled eigenvalue falls below [`MIN_EIGENVALUE`] are
    /// dropped; asking for them later yields an ill-conditioned error.
    pub fn new(sources: &[FunctionalDataset], max_m: usize) -> Result<Self> {
        let Some(first) = sources.first() else {
            return Err(Error::Domain("transfer fit needs at least one source".into()));
        };
        let max_m = max_m.min(first.grid().len());
        let basis = Arc::new(pooled_fpca(sources, max_m)?);
        let scores = sources.iter().map(|s| compute_scores(s, &basis, max_m)).collect::<Result<Vec<_>>>()?;
        let responses: Vec<&[f64]> = sources.iter().map(FunctionalDataset::responses).collect();
        let (diag, numer) = initial_terms(&scores, &responses)?;
        let usable = diag.iter().position(|&d| d < MIN_EIGENVALUE).unwrap_or(diag.len());
        let initial = numer.iter().zip(&diag).take(usable).map(|(u, d)| u / d).collect();
        Ok(SourceFit { basis, initial })
    }

    pub fn basis(&self) -> &Arc<EigenSystem> {
        &self.basis
    }

    /// Largest truncation level the sources support.
    pub fn max_m(&self) -> usize {
        self.initial.len()
    }

    /// `ŵ` truncated to `m` coordinates.
    pub fn initial_estimate(&self, m: usize) -> Result<&[f64]> {
        if m > self.initial.len() {
            return Err(Error::IllConditioned(format!(
                "truncation {m} exceeds the {} well-conditioned pooled components",
                self.initial.len()
            )));
        }
        Ok(&self.initial[..m])
    }

    /// Step two on precomputed target scores (at least `m` columns) and centered responses.
    pub fn correct(
        &self,
        target_scores: &DMatrix<f64>,
        centered_responses: &[f64],
        m: usize,
        tau: f64,
        settings: LassoSettings,
    ) -> Result<(Vec<f64>, LassoSolution)> {
        let w = self.initial_estimate(m)?;
        if target_scores.ncols() < m {
            return Err(Error::Dimension("too few target score columns".into()));
        }
        let design = target_scores.columns(0, m).into_owned();
        let fitted = &design * DVector::from_column_slice(w);
        let residual: Vec<f64> = centered_responses.iter().zip(fitted.iter()).map(|(y, f)| y - f).collect();
        let lasso = lasso_cd(&design, &residual, tau, settings)?;
        let coefficients = w.iter().zip(&lasso.delta).map(|(a, b)| a + b).collect();
        Ok((coefficients, lasso))
    }

    /// Full bias-corrected fit on a target dataset.
    pub fn fit(&self, target: &FunctionalDataset, m: usize, tau: f64) -> Result<SlopeEstimate> {
        self.fit_with(target, m, tau, LassoSettings::default())
    }

    pub fn fit_with(
        &self,
        target: &FunctionalDataset,
        m: usize,
        tau: f64,
        settings: LassoSettings,
    ) -> Result<SlopeEstimate> {
        self.initial_estimate(m)?;
        let scores = compute_scores(target, &self.basis, m)?;
        let y_mean = target.response_mean();
        let centered: Vec<f64> = target.responses().iter().map(|y| y - y_mean).collect();
        let (coefficients, _) = self.correct(scores.scores(), &centered, m, tau, settings)?;
        SlopeEstimate::from_expansion(
            coefficients,
            self.basis.clone(),
            y_mean,
            scores.center().clone(),
            Tuning { m, tau },
        )
    }
}

/// The two-step transfer estimator with truncation `m` and penalty `tau`.
pub fn fit_tlflr(
    target: &FunctionalDataset,
    sources: &[FunctionalDataset],
    m: usize,
    tau: f64,
) -> Result<SlopeEstimate> {
    if let Some(s) = sources.iter().find(|s| s.grid() != target.grid()) {
        return Err(Error::Dimension(format!("source {:?} on a different grid from the target", s.label())));
    }
    SourceFit::new(sources, m)?.fit(target, m, tau)
}

/// Target-only FPCA regression state for truncation levels up to some maximum.
#[derive(Clone, Debug)]
pub struct TargetFpca {
    basis: Arc<EigenSystem>,
    coefficients: Vec<f64>,
    response_mean: f64,
    curve_mean: GridFunction,
}

impl TargetFpca {
    pub fn new(target: &FunctionalDataset, max_m: usize) -> Result<Self> {
        if target.len() < 2 {
            return Err(Error::Domain(format!("baseline fit needs n >= 2, got {}", target.len())));
        }
        let max_m = max_m.min(target.grid().len());
        let basis = Arc::new(eigendecompose(&covariance_estimate(target)?, max_m)?);
        let scores = compute_scores(target, &basis, max_m)?;
        let response_mean = target.response_mean();
        let centered = DVector::from_iterator(target.len(), target.responses().iter().map(|y| y - response_mean));
        // ⟨ĝ, φ̂_k⟩ with ĝ(t) = (n−1)^{-1} Σ (X_i − X̄)(Y_i − Ȳ)
        let cross = scores.scores().transpose() * centered / (target.len() - 1) as f64;
        let coefficients = basis
            .eigenvalues()
            .iter()
            .zip(cross.iter())
            .take_while(|(lam, _)| **lam >= MIN_EIGENVALUE)
            .map(|(lam, g)| g / lam)
            .collect();
        Ok(TargetFpca { basis, coefficients, response_mean, curve_mean: scores.center().clone() })
    }

    pub fn basis(&self) -> &Arc<EigenSystem> {
        &self.basis
    }

    pub fn max_m(&self) -> usize {
        self.coefficients.len()
    }

    pub fn coefficients(&self, m: usize) -> Result<&[f64]> {
        if m > self.coefficients.len() {
            return Err(Error::IllConditioned(format!(
                "eigenvalue {m} of the target covariance is below {MIN_EIGENVALUE:e}"
            )));
        }
        Ok(&self.coefficients[..m])
    }

    pub fn fit(&self, m: usize) -> Result<SlopeEstimate> {
        SlopeEstimate::from_expansion(
            self.coefficients(m)?.to_vec(),
            self.basis.clone(),
            self.response_mean,
            self.curve_mean.clone(),
            Tuning { m, tau: 0.0 },
        )
    }
}

/// Classical FPCA estimator using only the target sample.
pub fn fit_flr(target: &FunctionalDataset, m: usize) -> Result<SlopeEstimate> {
    TargetFpca::new(target, m)?.fit(m)
}

/// Mean of a dataset's curves and responses, as used for prediction intercepts.
pub fn intercept_of(data: &FunctionalDataset) -> Result<(f64, GridFunction)> {
    Ok((data.response_mean(), mean_function(data)?))
}
