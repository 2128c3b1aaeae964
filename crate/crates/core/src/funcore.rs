//! Grid-discretized functional data: quadrature, mean and covariance
//! estimation, functional principal component analysis and score projection.
//!
//! Every curve lives on a uniform grid over `[0, 1]`. Integrals are
//! approximated with the composite trapezoid rule, and the kernel eigenproblem
//! is solved in the symmetrized form `W^{1/2} K W^{1/2}` (with `W` the diagonal
//! of trapezoid weights) so that the returned eigenfunctions are orthonormal
//! under the same quadrature used everywhere else.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Tolerance on `max |K[i][j] - K[j][i]|` accepted by [`CovMatrix`].
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Default number of grid points, matching the evaluation grid of the benchmarks.
pub const DEFAULT_GRID_LEN: usize = 100;

/// Uniform grid of `len` points on `[0, 1]`, endpoints included.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Grid {
    len: usize,
}

impl Grid {
    pub fn new(len: usize) -> Result<Self> {
        if len < 2 {
            return Err(Error::Domain(format!("grid needs at least 2 points, got {len}")));
        }
        Ok(Grid { len })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    /// Always false; a grid has at least two points.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        1.0 / (self.len - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.len {
            1.0
        } else {
            i as f64 / (self.len - 1) as f64
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len).map(|i| self.point(i)).collect()
    }

    /// Composite trapezoid weights; they sum to one.
    pub fn weights(&self) -> Vec<f64> {
        let h = self.step();
        let mut w = vec![h; self.len];
        w[0] = 0.5 * h;
        w[self.len - 1] = 0.5 * h;
        w
    }

    fn ensure_same(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(Error::Dimension(format!(
                "grids differ: {} vs {} points",
                self.len, other.len
            )));
        }
        Ok(())
    }
}

/// A real function on `[0, 1]` sampled at the points of a [`Grid`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite value at grid index {i}")));
        }
        Ok(GridFunction { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        GridFunction { grid, values: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        GridFunction { grid, values: vec![c; grid.len()] }
    }

    /// Samples `f` at every grid point.
    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        GridFunction { grid, values: grid.points().into_iter().map(f).collect() }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn sub(&self, other: &GridFunction) -> Result<GridFunction> {
        self.grid.ensure_same(&other.grid)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(GridFunction { grid: self.grid, values })
    }

    pub fn add(&self, other: &GridFunction) -> Result<GridFunction> {
        self.grid.ensure_same(&other.grid)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(GridFunction { grid: self.grid, values })
    }

    pub fn scale(&self, c: f64) -> GridFunction {
        GridFunction { grid: self.grid, values: self.values.iter().map(|v| c * v).collect() }
    }

    /// `a * self + b * other`, pointwise.
    pub fn combine(&self, a: f64, other: &GridFunction, b: f64) -> Result<GridFunction> {
        self.grid.ensure_same(&other.grid)?;
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        Ok(GridFunction { grid: self.grid, values })
    }

    /// Piecewise-linear interpolation at an arbitrary `t` in `[0, 1]`.
    pub fn eval(&self, t: f64) -> f64 {
        let g = self.grid.len();
        let pos = (t.clamp(0.0, 1.0) * (g - 1) as f64).min((g - 1) as f64);
        let i = (pos.floor() as usize).min(g - 2);
        let frac = pos - i as f64;
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }

    /// Linear interpolation onto another grid; a no-op copy on the same grid.
    pub fn resample(&self, grid: Grid) -> GridFunction {
        if grid == self.grid {
            return self.clone();
        }
        GridFunction { grid, values: grid.points().into_iter().map(|t| self.eval(t)).collect() }
    }

    pub fn max_abs_diff(&self, other: &GridFunction) -> Result<f64> {
        self.grid.ensure_same(&other.grid)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }
}

/// Trapezoid approximation of `∫₀¹ f(t) g(t) dt`.
pub fn inner_product(f: &GridFunction, g: &GridFunction) -> Result<f64> {
    f.grid.ensure_same(&g.grid)?;
    Ok(weighted_dot(&f.values, &g.values))
}

fn weighted_dot(a: &[f64], b: &[f64]) -> f64 {
    let last = a.len() - 1;
    let interior: f64 = (1..last).map(|i| a[i] * b[i]).sum();
    (interior + 0.5 * (a[0] * b[0] + a[last] * b[last])) / last as f64
}

/// Which population a dataset was drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Population {
    Target,
    /// Zero-based source index.
    Source(usize),
}

/// `n` curves on a shared grid with their scalar responses.
#[derive(Clone, Debug, PartialEq)]
pub struct FunctionalDataset {
    grid: Grid,
    curves: Vec<GridFunction>,
    responses: Vec<f64>,
    label: Population,
}

impl FunctionalDataset {
    pub fn new(curves: Vec<GridFunction>, responses: Vec<f64>, label: Population) -> Result<Self> {
        let Some(first) = curves.first() else {
            return Err(Error::Domain("dataset needs at least one curve".into()));
        };
        let grid = first.grid;
        if let Some(i) = curves.iter().position(|c| c.grid != grid) {
            return Err(Error::Dimension(format!("curve {i} is on a different grid")));
        }
        if responses.len() != curves.len() {
            return Err(Error::Dimension(format!(
                "{} curves but {} responses",
                curves.len(),
                responses.len()
            )));
        }
        if let Some(i) = responses.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite response at row {i}")));
        }
        Ok(FunctionalDataset { grid, curves, responses, label })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    pub fn curves(&self) -> &[GridFunction] {
        &self.curves
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn label(&self) -> Population {
        self.label
    }

    pub fn with_label(mut self, label: Population) -> Self {
        self.label = label;
        self
    }

    pub fn response_mean(&self) -> f64 {
        self.responses.iter().sum::<f64>() / self.len() as f64
    }

    /// Rows at `indices`, in the order given.
    pub fn subset(&self, indices: &[usize]) -> Result<FunctionalDataset> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Dimension(format!("row {i} out of range for {} rows", self.len())));
        }
        FunctionalDataset::new(
            indices.iter().map(|&i| self.curves[i].clone()).collect(),
            indices.iter().map(|&i| self.responses[i]).collect(),
            self.label,
        )
    }

    /// `n × G` matrix of curve values.
    pub fn curve_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.grid.len(), |i, j| self.curves[i].values[j])
    }

    fn centered_matrix(&self, center: &GridFunction) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.grid.len(), |i, j| {
            self.curves[i].values[j] - center.values[j]
        })
    }
}

/// Pointwise sample mean `X̄(t)`.
pub fn mean_function(data: &FunctionalDataset) -> Result<GridFunction> {
    if data.is_empty() {
        return Err(Error::Domain("mean of an empty dataset".into()));
    }
    let mut values = vec![0.0; data.grid.len()];
    for curve in &data.curves {
        for (acc, v) in values.iter_mut().zip(&curve.values) {
            *acc += v;
        }
    }
    let n = data.len() as f64;
    values.iter_mut().for_each(|v| *v /= n);
    Ok(GridFunction { grid: data.grid, values })
}

/// Discretized covariance kernel `K(s, t)` on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct CovMatrix {
    grid: Grid,
    entries: DMatrix<f64>,
}

impl CovMatrix {
    pub fn new(grid: Grid, entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != grid.len() || entries.ncols() != grid.len() {
            return Err(Error::Dimension(format!(
                "covariance must be {0}×{0}, got {1}×{2}",
                grid.len(),
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite covariance entry".into()));
        }
        let asym = max_asymmetry(&entries);
        if asym > SYMMETRY_TOL {
            return Err(Error::Validation(format!("covariance not symmetric (max gap {asym:e})")));
        }
        Ok(CovMatrix { grid, entries })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut gap: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            gap = gap.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    gap
}

/// Sample covariance with divisor `n - 1`.
pub fn covariance_estimate(data: &FunctionalDataset) -> Result<CovMatrix> {
    if data.len() < 2 {
        return Err(Error::Domain(format!("covariance needs n >= 2, got {}", data.len())));
    }
    let mean = mean_function(data)?;
    let centered = data.centered_matrix(&mean);
    let mut entries = centered.transpose() * &centered;
    entries /= (data.len() - 1) as f64;
    symmetrize(&mut entries);
    Ok(CovMatrix { grid: data.grid, entries })
}

fn symmetrize(m: &mut DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Weights `π_l = n_l / Σ n_l` used to pool source covariances.
pub fn pooling_weights(sources: &[FunctionalDataset]) -> Vec<f64> {
    let total: usize = sources.iter().map(FunctionalDataset::len).sum();
    sources.iter().map(|s| s.len() as f64 / total as f64).collect()
}

/// `Σ_l π_l K̂^{(l)}` over the given sources.
pub fn pooled_covariance(sources: &[FunctionalDataset]) -> Result<CovMatrix> {
    if sources.is_empty() {
        return Err(Error::Domain("pooled covariance needs at least one source".into()));
    }
    let covs = sources.iter().map(covariance_estimate).collect::<Result<Vec<_>>>()?;
    weighted_covariance_sum(&covs, &pooling_weights(sources))
}

/// `Σ_l weights[l] · covs[l]` on a shared grid.
pub fn weighted_covariance_sum(covs: &[CovMatrix], weights: &[f64]) -> Result<CovMatrix> {
    let Some(first) = covs.first() else {
        return Err(Error::Domain("weighted sum of no covariances".into()));
    };
    if covs.len() != weights.len() {
        return Err(Error::Dimension(format!("{} covariances, {} weights", covs.len(), weights.len())));
    }
    let grid = first.grid;
    let mut entries = DMatrix::zeros(grid.len(), grid.len());
    for (cov, &pi) in covs.iter().zip(weights) {
        grid.ensure_same(&cov.grid)?;
        entries += &cov.entries * pi;
    }
    symmetrize(&mut entries);
    Ok(CovMatrix { grid, entries })
}

/// Leading eigenpairs of a covariance operator.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenSystem {
    grid: Grid,
    eigenvalues: Vec<f64>,
    eigenfunctions: Vec<GridFunction>,
    source_weights: Vec<f64>,
}

impl EigenSystem {
    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenfunctions(&self) -> &[GridFunction] {
        &self.eigenfunctions
    }

    /// Pooling weights of the sources behind the covariance; `[1.0]` for a single population.
    pub fn source_weights(&self) -> &[f64] {
        &self.source_weights
    }

    pub fn with_source_weights(mut self, weights: Vec<f64>) -> Self {
        self.source_weights = weights;
        self
    }

    /// `Σ_k c_k φ_k` over the first `coefficients.len()` eigenfunctions.
    pub fn expand(&self, coefficients: &[f64]) -> Result<GridFunction> {
        if coefficients.len() > self.len() {
            return Err(Error::Dimension(format!(
                "{} coefficients for a basis of size {}",
                coefficients.len(),
                self.len()
            )));
        }
        let mut values = vec![0.0; self.grid.len()];
        for (c, phi) in coefficients.iter().zip(&self.eigenfunctions) {
            for (acc, v) in values.iter_mut().zip(&phi.values) {
                *acc += c * v;
            }
        }
        Ok(GridFunction { grid: self.grid, values })
    }

    /// A copy with the `k`-th eigenfunction negated. Mostly useful for checking sign invariance.
    pub fn with_flipped_sign(&self, k: usize) -> EigenSystem {
        let mut out = self.clone();
        out.eigenfunctions[k] = out.eigenfunctions[k].scale(-1.0);
        out
    }

    /// `G × m` matrix whose columns are `w_t φ_k(t)`, so that
    /// `centered_curves * basis_matrix` gives quadrature scores.
    fn weighted_matrix(&self, m: usize) -> DMatrix<f64> {
        let w = self.grid.weights();
        DMatrix::from_fn(self.grid.len(), m, |t, k| w[t] * self.eigenfunctions[k].values[t])
    }
}

/// Top-`m` eigenpairs of the quadrature-weighted kernel operator.
pub fn eigendecompose(cov: &CovMatrix, m: usize) -> Result<EigenSystem> {
    let g = cov.grid.len();
    if m > g {
        return Err(Error::Domain(format!("requested {m} eigenpairs on a grid of {g} points")));
    }
    let asym = max_asymmetry(&cov.entries);
    if asym > SYMMETRY_TOL {
        return Err(Error::Validation(format!("covariance not symmetric (max gap {asym:e})")));
    }
    let sqrt_w: Vec<f64> = cov.grid.weights().into_iter().map(f64::sqrt).collect();
    let mut scaled = DMatrix::from_fn(g, g, |i, j| sqrt_w[i] * cov.entries[(i, j)] * sqrt_w[j]);
    symmetrize(&mut scaled);
    let eig = SymmetricEigen::new(scaled);

    let mut order: Vec<usize> = (0..g).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut eigenvalues = Vec::with_capacity(m);
    let mut eigenfunctions = Vec::with_capacity(m);
    for &idx in order.iter().take(m) {
        eigenvalues.push(eig.eigenvalues[idx].max(0.0));
        let column = eig.eigenvectors.column(idx);
        let mut values: Vec<f64> = (0..g).map(|t| column[t] / sqrt_w[t]).collect();
        // Quadrature norm is exactly the Euclidean norm of the symmetric eigenvector;
        // renormalize anyway to absorb rounding in the back-transform.
        let norm = weighted_dot(&values, &values).sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        fix_sign(&mut values);
        eigenfunctions.push(GridFunction { grid: cov.grid, values });
    }
    Ok(EigenSystem { grid: cov.grid, eigenvalues, eigenfunctions, source_weights: vec![1.0] })
}

/// Flip so that the first entry of largest magnitude is positive.
fn fix_sign(values: &mut [f64]) {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if v.abs() > values[best].abs() {
            best = i;
        }
    }
    if values[best] < 0.0 {
        values.iter_mut().for_each(|v| *v = -*v);
    }
}

/// FPCA of the pooled source covariance, carrying the pooling weights.
pub fn pooled_fpca(sources: &[FunctionalDataset], m: usize) -> Result<EigenSystem> {
    let cov = pooled_covariance(sources)?;
    Ok(eigendecompose(&cov, m)?.with_source_weights(pooling_weights(sources)))
}

/// Projection scores of centered curves onto a basis.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    scores: DMatrix<f64>,
    center: GridFunction,
    basis: Arc<EigenSystem>,
}

impl ScoreMatrix {
    pub fn scores(&self) -> &DMatrix<f64> {
        &self.scores
    }

    pub fn center(&self) -> &GridFunction {
        &self.center
    }

    pub fn basis(&self) -> &Arc<EigenSystem> {
        &self.basis
    }

    pub fn nrows(&self) -> usize {
        self.scores.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.scores.ncols()
    }

    /// The first `m` score columns.
    pub fn truncated(&self, m: usize) -> ScoreMatrix {
        ScoreMatrix {
            scores: self.scores.columns(0, m.min(self.ncols())).into_owned(),
            center: self.center.clone(),
            basis: self.basis.clone(),
        }
    }
}

/// Scores of each curve, centered by the dataset's own mean, on the first `m` eigenfunctions.
pub fn compute_scores(
    data: &FunctionalDataset,
    basis: &Arc<EigenSystem>,
    m: usize,
) -> Result<ScoreMatrix> {
    let center = mean_function(data)?;
    scores_about(data, &center, basis, m)
}

/// Scores of each curve after subtracting a given center (e.g. a training mean).
pub fn scores_about(
    data: &FunctionalDataset,
    center: &GridFunction,
    basis: &Arc<EigenSystem>,
    m: usize,
) -> Result<ScoreMatrix> {
    data.grid.ensure_same(&basis.grid)?;
    data.grid.ensure_same(&center.grid)?;
    if m > basis.len() {
        return Err(Error::Dimension(format!("requested {m} scores from a basis of size {}", basis.len())));
    }
    let scores = data.centered_matrix(center) * basis.weighted_matrix(m);
    Ok(ScoreMatrix { scores, center: center.clone(), basis: basis.clone() })
}

/// `Σ_l π_l (n_l − 1)^{-1} Ξ̂^{(l)ᵀ} Ξ̂^{(l)}` with `π_l` from the row counts.
pub fn pooled_score_gram(scores: &[ScoreMatrix]) -> Result<DMatrix<f64>> {
    let Some(first) = scores.first() else {
        return Err(Error::Domain("pooled Gram of an empty list".into()));
    };
    let m = first.ncols();
    let total: usize = scores.iter().map(ScoreMatrix::nrows).sum();
    let mut gram = DMatrix::zeros(m, m);
    for s in scores {
        if s.ncols() != m {
            return Err(Error::Dimension("score matrices with different widths".into()));
        }
        if s.nrows() < 2 {
            return Err(Error::Domain("each source needs at least two rows".into()));
        }
        let pi = s.nrows() as f64 / total as f64;
        gram += (s.scores.transpose() * &s.scores) * (pi / (s.nrows() - 1) as f64);
    }
    Ok(gram)
}

/// Quadrature Gram matrix `⟨φ_j, φ_k⟩` of a basis; identity for an orthonormal one.
pub fn basis_gram(basis: &EigenSystem) -> DMatrix<f64> {
    let m = basis.len();
    DMatrix::from_fn(m, m, |j, k| {
        weighted_dot(&basis.eigenfunctions[j].values, &basis.eigenfunctions[k].values)
    })
}

/// Scores of a single curve about `center`, as a vector.
pub fn curve_scores(curve: &GridFunction, center: &GridFunction, basis: &EigenSystem, m: usize) -> Result<DVector<f64>> {
    let centered = curve.sub(center)?;
    centered.grid.ensure_same(&basis.grid)?;
    Ok(DVector::from_iterator(
        m,
        basis.eigenfunctions.iter().take(m).map(|phi| weighted_dot(&centered.values, &phi.values)),
    ))
}
