//! Synthetic functional regression data and the integrated squared error
//! used to score slope estimates.
//!
//! Curves are truncated Karhunen–Loève expansions
//! `X(t) = Σ_{k≤K} √λ_k Z_k e_k(t)` with `λ_k = k^{-α}` and `e_k` either the
//! cosine basis `√2 cos(kπt)` or the Haar wavelets. The target slope is
//! `b_k = 4 k^{-β} (−1)^{k+1}` in the cosine basis; source slopes are
//! perturbations of it whose size is governed by the contrast `h`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};

use crate::error::{Error, Result};
use crate::funcore::{inner_product, FunctionalDataset, Grid, GridFunction, Population};
use crate::regress::SlopeEstimate;
use crate::seeding::rng_from;

/// Points of the grid on which integrated squared errors are evaluated.
pub const MISE_GRID_LEN: usize = 100;

/// Dyadic-aligned grid length used when Haar curves are involved.
pub const HAAR_GRID_LEN: usize = 257;

/// Data-generating mechanism for the sources.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    /// `K` aligned sources whose slopes differ from the target on `s` coefficients.
    I,
    /// `L` aligned sources; `K` informative, the rest far off.
    II,
    /// As II, but the non-informative sources use Haar curves.
    III,
    /// As II, but every source uses Haar curves.
    IV,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelKind::I => "I",
            ModelKind::II => "II",
            ModelKind::III => "III",
            ModelKind::IV => "IV",
        };
        f.write_str(s)
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(ModelKind::I),
            "II" | "2" => Ok(ModelKind::II),
            "III" | "3" => Ok(ModelKind::III),
            "IV" | "4" => Ok(ModelKind::IV),
            other => Err(Error::Validation(format!("unknown model '{other}'"))),
        }
    }
}

/// Distribution of the standardized target scores `Z_ik`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScoreDist {
    /// Uniform on `[−√3, √3]`.
    Uniform,
    Gaussian,
    /// `√(3/5) · t₅`.
    ScaledT5,
    /// Degenerate at zero; only useful for tests.
    Zero,
}

impl ScoreDist {
    pub fn sample(self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            ScoreDist::Uniform => rng.gen_range(-3f64.sqrt()..=3f64.sqrt()),
            ScoreDist::Gaussian => StandardNormal.sample(rng),
            ScoreDist::ScaledT5 => {
                let t: f64 = StudentT::new(5.0).expect("valid degrees of freedom").sample(rng);
                (3.0f64 / 5.0).sqrt() * t
            }
            ScoreDist::Zero => 0.0,
        }
    }
}

impl fmt::Display for ScoreDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ScoreDist::Uniform => "uniform",
            ScoreDist::Gaussian => "gaussian",
            ScoreDist::ScaledT5 => "t5",
            ScoreDist::Zero => "zero",
        };
        f.write_str(s)
    }
}

impl FromStr for ScoreDist {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uniform" => Ok(ScoreDist::Uniform),
            "gaussian" | "normal" => Ok(ScoreDist::Gaussian),
            "t5" | "scaled-t5" => Ok(ScoreDist::ScaledT5),
            "zero" => Ok(ScoreDist::Zero),
            other => Err(Error::Validation(format!("unknown score distribution '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BasisKind {
    Cosine,
    Haar,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    /// Eigenvalue decay `λ_k = k^{-α}`.
    pub alpha: f64,
    /// Slope decay `b_k = 4 k^{-β} (−1)^{k+1}`.
    pub beta: f64,
    pub n: usize,
    pub n_source: usize,
    /// Number of sources `L`.
    pub sources: usize,
    /// Number of informative sources `K = |A_h|`.
    pub informative: usize,
    pub h: f64,
    pub s: usize,
    pub sigma_eps: f64,
    pub model: ModelKind,
    pub score_dist: ScoreDist,
    pub truncation: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            alpha: 2.0,
            beta: 2.5,
            n: 150,
            n_source: 100,
            sources: 20,
            informative: 20,
            h: 2.0,
            s: 1,
            sigma_eps: 0.5,
            model: ModelKind::I,
            score_dist: ScoreDist::Uniform,
            truncation: 50,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 1.0) {
            return Err(Error::Validation(format!("alpha must exceed 1, got {}", self.alpha)));
        }
        if !self.beta.is_finite() {
            return Err(Error::Validation("beta must be finite".into()));
        }
        if self.truncation == 0 || self.s == 0 || self.s > self.truncation {
            return Err(Error::Validation(format!(
                "need 1 <= s <= truncation, got s = {} and truncation = {}",
                self.s, self.truncation
            )));
        }
        if self.informative > self.sources {
            return Err(Error::Validation(format!(
                "informative count {} exceeds source count {}",
                self.informative, self.sources
            )));
        }
        if !(self.h >= 0.0) || !self.h.is_finite() {
            return Err(Error::Validation(format!("contrast h must be non-negative, got {}", self.h)));
        }
        if !(self.sigma_eps >= 0.0) || !self.sigma_eps.is_finite() {
            return Err(Error::Validation("noise level must be non-negative".into()));
        }
        if self.n == 0 || self.n_source == 0 {
            return Err(Error::Validation("sample sizes must be positive".into()));
        }
        Ok(())
    }

    /// Grid length used by default for this model.
    pub fn default_grid_len(&self) -> usize {
        match self.model {
            ModelKind::I | ModelKind::II => crate::funcore::DEFAULT_GRID_LEN,
            ModelKind::III | ModelKind::IV => HAAR_GRID_LEN,
        }
    }

    pub fn eigenvalue(&self, k: usize) -> f64 {
        (k as f64).powf(-self.alpha)
    }

    pub fn slope_coefficient(&self, k: usize) -> f64 {
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        4.0 * (k as f64).powf(-self.beta) * sign
    }
}

pub fn cosine_value(k: usize, t: f64) -> f64 {
    2f64.sqrt() * (k as f64 * PI * t).cos()
}

/// `√2 cos(kπt)` on the grid.
pub fn cosine_basis(k: usize, grid: Grid) -> GridFunction {
    GridFunction::from_fn(grid, |t| cosine_value(k, t))
}

/// `(j, ℓ)` with `k = 2^j + ℓ`, `0 ≤ ℓ < 2^j`.
fn haar_index(k: usize) -> (u32, usize) {
    let j = usize::BITS - 1 - k.leading_zeros();
    (j, k - (1usize << j))
}

/// Haar wavelet `ψ_k(t)`, positive on the left half of its support
/// (half-open) and negative on the closed right half.
pub fn haar_value(k: usize, t: f64) -> f64 {
    debug_assert!(k >= 1);
    let (j, l) = haar_index(k);
    let scale = (1usize << j) as f64;
    let amp = scale.sqrt();
    let (a, mid, b) = (l as f64 / scale, (l as f64 + 0.5) / scale, (l as f64 + 1.0) / scale);
    if t >= a && t < mid {
        amp
    } else if t >= mid && t <= b {
        -amp
    } else {
        0.0
    }
}

pub fn haar_basis(k: usize, grid: Grid) -> Result<GridFunction> {
    if k == 0 {
        return Err(Error::Domain("Haar index starts at 1".into()));
    }
    Ok(GridFunction::from_fn(grid, |t| haar_value(k, t)))
}

/// Exact `∫₀¹ √2 cos(jπt) ψ_k(t) dt`.
pub fn cosine_haar_inner(j: usize, k: usize) -> f64 {
    let (level, l) = haar_index(k);
    let scale = (1usize << level) as f64;
    let amp = scale.sqrt();
    let (a, mid, b) = (l as f64 / scale, (l as f64 + 0.5) / scale, (l as f64 + 1.0) / scale);
    let w = j as f64 * PI;
    amp * 2f64.sqrt() / w * (2.0 * (w * mid).sin() - (w * a).sin() - (w * b).sin())
}

fn basis_value(kind: BasisKind, k: usize, t: f64) -> f64 {
    match kind {
        BasisKind::Cosine => cosine_value(k, t),
        BasisKind::Haar => haar_value(k, t),
    }
}

/// The true target slope.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTruth {
    pub slope: GridFunction,
    pub slope_coeffs: Vec<f64>,
    pub basis_used: BasisKind,
}

impl SyntheticTruth {
    /// The slope evaluated exactly on any grid.
    pub fn evaluate_on(&self, grid: Grid) -> GridFunction {
        GridFunction::from_fn(grid, |t| {
            self.slope_coeffs.iter().enumerate().map(|(i, b)| b * basis_value(self.basis_used, i + 1, t)).sum()
        })
    }
}

/// One generated source together with its true slope coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSource {
    pub dataset: FunctionalDataset,
    /// Coefficients of `w^{(l)}` in the cosine basis.
    pub slope_coeffs: Vec<f64>,
    /// Basis the curves were generated in.
    pub basis: BasisKind,
    pub informative: bool,
}

/// Draws `n` curves `Σ √λ_k Z_k e_k` and responses `Σ √λ_k Z_k c_k + ε`,
/// where `c_k = ⟨slope, e_k⟩`.
fn draw_sample(
    cfg: &SyntheticConfig,
    grid: Grid,
    n: usize,
    basis: BasisKind,
    response_coeffs: &[f64],
    dist: ScoreDist,
    rng: &mut ChaCha8Rng,
    label: Population,
) -> Result<FunctionalDataset> {
    let trunc = cfg.truncation;
    let points = grid.points();
    let table: Vec<Vec<f64>> =
        (1..=trunc).map(|k| points.iter().map(|&t| basis_value(basis, k, t)).collect()).collect();
    let sqrt_lambda: Vec<f64> = (1..=trunc).map(|k| cfg.eigenvalue(k).sqrt()).collect();
    let mut curves = Vec::with_capacity(n);
    let mut responses = Vec::with_capacity(n);
    for _ in 0..n {
        let xi: Vec<f64> = sqrt_lambda.iter().map(|s| s * dist.sample(rng)).collect();
        let noise: f64 = StandardNormal.sample(rng);
        let mut values = vec![0.0; grid.len()];
        for (x, row) in xi.iter().zip(&table) {
            for (v, e) in values.iter_mut().zip(row) {
                *v += x * e;
            }
        }
        curves.push(GridFunction::new(grid, values)?);
        let signal: f64 = xi.iter().zip(response_coeffs).map(|(x, c)| x * c).sum();
        responses.push(signal + cfg.sigma_eps * noise);
    }
    FunctionalDataset::new(curves, responses, label)
}

/// Target sample with uniform (or configured) scores in the cosine basis.
pub fn generate_target(cfg: &SyntheticConfig, grid: Grid) -> Result<(FunctionalDataset, SyntheticTruth)> {
    cfg.validate()?;
    let coeffs: Vec<f64> = (1..=cfg.truncation).map(|k| cfg.slope_coefficient(k)).collect();
    let mut rng = rng_from(cfg.seed, &[0]);
    let data = draw_sample(cfg, grid, cfg.n, BasisKind::Cosine, &coeffs, cfg.score_dist, &mut rng, Population::Target)?;
    let truth = SyntheticTruth {
        slope: GridFunction::from_fn(grid, |t| coeffs.iter().enumerate().map(|(i, b)| b * cosine_value(i + 1, t)).sum()),
        slope_coeffs: coeffs,
        basis_used: BasisKind::Cosine,
    };
    Ok((data, truth))
}

fn rademacher(rng: &mut ChaCha8Rng) -> f64 {
    if rng.gen::<bool>() {
        1.0
    } else {
        -1.0
    }
}

/// Source samples for the configured model. Under model I only the `K`
/// informative sources exist; otherwise all `L` are returned with the first
/// `K` informative.
pub fn generate_sources(cfg: &SyntheticConfig, grid: Grid, truth: &SyntheticTruth) -> Result<Vec<SyntheticSource>> {
    cfg.validate()?;
    let trunc = cfg.truncation;
    let count = match cfg.model {
        ModelKind::I => cfg.informative,
        _ => cfg.sources,
    };
    let mut out = Vec::with_capacity(count);
    for l in 0..count {
        let mut rng = rng_from(cfg.seed, &[1, l as u64]);
        let informative = l < cfg.informative;
        let signs: Vec<f64> = (0..trunc).map(|_| rademacher(&mut rng)).collect();
        let slope: Vec<f64> = truth
            .slope_coeffs
            .iter()
            .enumerate()
            .map(|(i, &b)| match (cfg.model, informative) {
                (ModelKind::I, _) if i < cfg.s => b - signs[i] * cfg.h / cfg.s as f64,
                (ModelKind::I, _) => b,
                (_, true) => b - signs[i] * cfg.h / trunc as f64,
                (_, false) => b - 40.0 * signs[i],
            })
            .collect();
        let basis = match (cfg.model, informative) {
            (ModelKind::I | ModelKind::II, _) | (ModelKind::III, true) => BasisKind::Cosine,
            (ModelKind::III, false) | (ModelKind::IV, _) => BasisKind::Haar,
        };
        let response_coeffs: Vec<f64> = match basis {
            BasisKind::Cosine => slope.clone(),
            BasisKind::Haar => (1..=trunc)
                .map(|k| slope.iter().enumerate().map(|(j, w)| w * cosine_haar_inner(j + 1, k)).sum())
                .collect(),
        };
        let dataset = draw_sample(
            cfg,
            grid,
            cfg.n_source,
            basis,
            &response_coeffs,
            ScoreDist::Gaussian,
            &mut rng,
            Population::Source(l),
        )?;
        out.push(SyntheticSource { dataset, slope_coeffs: slope, basis, informative });
    }
    Ok(out)
}

/// A complete draw: target, truth and sources.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub target: FunctionalDataset,
    pub truth: SyntheticTruth,
    pub sources: Vec<SyntheticSource>,
}

impl Scenario {
    pub fn generate(cfg: &SyntheticConfig, grid: Grid) -> Result<Scenario> {
        let (target, truth) = generate_target(cfg, grid)?;
        let sources = generate_sources(cfg, grid, &truth)?;
        Ok(Scenario { target, truth, sources })
    }

    pub fn source_datasets(&self) -> Vec<FunctionalDataset> {
        self.sources.iter().map(|s| s.dataset.clone()).collect()
    }

    pub fn informative_datasets(&self) -> Vec<FunctionalDataset> {
        self.sources.iter().filter(|s| s.informative).map(|s| s.dataset.clone()).collect()
    }
}

/// `∫₀¹ (curve − b)²` by the trapezoid rule on the 100-point evaluation grid.
pub fn mise_curve(curve: &GridFunction, truth: &SyntheticTruth) -> f64 {
    let grid = Grid::new(MISE_GRID_LEN).expect("evaluation grid");
    let diff = curve.resample(grid).sub(&truth.evaluate_on(grid)).expect("same grid");
    inner_product(&diff, &diff).expect("same grid")
}

pub fn mise(estimate: &SlopeEstimate, truth: &SyntheticTruth) -> f64 {
    mise_curve(estimate.slope_curve(), truth)
}
