//! Acceptance criteria 1–10.
//!
//! Runs every criterion in sequence, prints one PASS/FAIL line each, and exits
//! non-zero if any criterion fails. Expected values for the numerical
//! criteria come from independent oracles defined in this file.

use std::process::{Command, ExitCode};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tlflr_cli::bench::{median_metric, run_benchmark, AggregationCheck, BenchOutput, DOMINANCE_TOL};
use tlflr_cli::config::{Method, RunConfig};
use tlflr_core::funcore::{eigendecompose, CovMatrix, Grid};
use tlflr_core::regress::{lasso_cd, LassoSettings};
use tlflr_core::synth::cosine_basis;

const LASSO_ORACLE_TOL: f64 = 1e-4;
const LASSO_ORACLE_BUDGET: Duration = Duration::from_secs(5);
const LEAST_SQUARES_TOL: f64 = 1e-8;
const LEAST_SQUARES_BUDGET: Duration = Duration::from_secs(1);
const KKT_MIN_INSTANCES: usize = 200;
const KKT_SLACK_FACTOR: f64 = 10.0;
const EIGENVALUE_REL_TOL: f64 = 0.01;
const EIGENFUNCTION_SUP_TOL: f64 = 1e-2;
const FPCA_BUDGET: Duration = Duration::from_secs(1);
const REPS: usize = 100;
const LARGE_CONTRAST_RATIO: f64 = 1.05;
const ADAPTIVE_RATIO: f64 = 1.25;
const MASTER_SEED: u64 = 20_240_601;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------------------------------------------------------------------------
// Lasso oracles

/// `(1/2n)‖r − Xδ‖² + τ‖δ‖₁` evaluated from the raw data.
fn lasso_objective(x: &DMatrix<f64>, r: &[f64], tau: f64, d: &[f64]) -> f64 {
    let n = x.nrows();
    let mut rss = 0.0;
    for i in 0..n {
        let fit: f64 = (0..x.ncols()).map(|k| x[(i, k)] * d[k]).sum();
        rss += (r[i] - fit).powi(2);
    }
    rss / (2.0 * n as f64) + tau * d.iter().map(|v| v.abs()).sum::<f64>()
}

/// All points of the stencil `{−w..w}^m · step` around `center`.
fn stencil(center: &[f64], step: f64, w: i64) -> Vec<Vec<f64>> {
    let mut out = vec![center.to_vec()];
    for k in 0..center.len() {
        out = out
            .into_iter()
            .flat_map(|p| {
                (-w..=w).map(move |j| {
                    let mut q = p.clone();
                    q[k] += j as f64 * step;
                    q
                })
            })
            .collect();
    }
    out
}

/// Exhaustive grid over `[−bound, bound]^m` followed by repeated local grid
/// refinement with the step halved each round.
fn brute_force_lasso(x: &DMatrix<f64>, r: &[f64], tau: f64, bound: f64) -> Vec<f64> {
    let m = x.ncols();
    let coarse = 40;
    let step = 2.0 * bound / coarse as f64;
    let mut best = vec![0.0; m];
    let mut best_val = lasso_objective(x, r, tau, &best);
    for p in stencil(&vec![0.0; m], step, coarse / 2) {
        let v = lasso_objective(x, r, tau, &p);
        if v < best_val {
            best_val = v;
            best = p;
        }
    }
    let mut h = step / 2.0;
    while h > 1e-10 {
        let mut improved = true;
        while improved {
            improved = false;
            for p in stencil(&best, h, 3) {
                let v = lasso_objective(x, r, tau, &p);
                if v < best_val - 1e-16 {
                    best_val = v;
                    best = p;
                    improved = true;
                }
            }
        }
        h /= 2.0;
    }
    best
}

fn random_design(rng: &mut ChaCha8Rng, n: usize, m: usize) -> (DMatrix<f64>, Vec<f64>) {
    let x = DMatrix::from_fn(n, m, |_, _| rng.gen_range(-2.0..2.0));
    let r = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    (x, r)
}

fn least_squares(x: &DMatrix<f64>, r: &[f64]) -> Vec<f64> {
    let svd = x.clone().svd(true, true);
    svd.solve(&DVector::from_column_slice(r), 1e-14).unwrap().iter().copied().collect()
}

fn well_conditioned(x: &DMatrix<f64>, limit: f64) -> bool {
    let sv = x.clone().singular_values();
    let (hi, lo) = (sv.max(), sv.min());
    lo > 0.0 && hi / lo < limit
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < 20 {
        let m = 1 + done % 3;
        let n = rng.gen_range(m + 3..=10);
        let (x, r) = random_design(&mut rng, n, m);
        if !well_conditioned(&x, 20.0) {
            continue;
        }
        let tau = [0.0, 0.05, 0.2][done % 3];
        let sol = lasso_cd(&x, &r, tau, LassoSettings::default()).unwrap();
        let bound = 2.0 * least_squares(&x, &r).iter().fold(0.0f64, |a, v| a.max(v.abs())) + 1.0;
        let oracle = brute_force_lasso(&x, &r, tau, bound);
        for (a, b) in sol.delta.iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
        }
        done += 1;
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= LASSO_ORACLE_TOL && elapsed < LASSO_ORACLE_BUDGET,
        format!("max coordinate gap {worst:.2e} (tol {LASSO_ORACLE_TOL:e}) over 20 instances in {elapsed:.2?}"),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < 20 {
        let m = rng.gen_range(1..=6);
        let n = rng.gen_range(m + 5..40);
        let (x, r) = random_design(&mut rng, n, m);
        if !well_conditioned(&x, 10.0) {
            continue;
        }
        let sol = lasso_cd(&x, &r, 0.0, LassoSettings::default()).unwrap();
        for (a, b) in sol.delta.iter().zip(least_squares(&x, &r)) {
            worst = worst.max((a - b).abs());
        }
        done += 1;
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= LEAST_SQUARES_TOL && elapsed < LEAST_SQUARES_BUDGET,
        format!("max gap to dense least squares {worst:.2e} (tol {LEAST_SQUARES_TOL:e}) in {elapsed:.2?}"),
    )
}

fn kkt_violation(x: &DMatrix<f64>, r: &[f64], tau: f64, d: &[f64]) -> f64 {
    let n = x.nrows() as f64;
    let resid: Vec<f64> =
        (0..x.nrows()).map(|i| r[i] - (0..x.ncols()).map(|k| x[(i, k)] * d[k]).sum::<f64>()).collect();
    (0..x.ncols())
        .map(|k| {
            let g = (0..x.nrows()).map(|i| x[(i, k)] * resid[i]).sum::<f64>() / n;
            if d[k] == 0.0 {
                (g.abs() - tau).max(0.0)
            } else {
                (g - tau * d[k].signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

fn criterion_3() -> Outcome {
    let settings = LassoSettings::default();
    let slack = KKT_SLACK_FACTOR * settings.tol;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut checked, mut failed, mut worst) = (0, 0, 0.0f64);
    for i in 0..400 {
        let m = rng.gen_range(1..=8);
        let n = rng.gen_range(3..60);
        let (mut x, r) = random_design(&mut rng, n, m);
        if i % 7 == 0 && m > 1 {
            // strongly correlated columns
            let c0 = x.column(0).into_owned();
            x.set_column(1, &(c0 * 0.99 + x.column(1) * 0.01));
        }
        let tau = if i % 5 == 0 { 0.0 } else { rng.gen_range(0.0..1.5) };
        let Ok(sol) = lasso_cd(&x, &r, tau, settings) else { continue };
        if !sol.converged {
            continue;
        }
        checked += 1;
        let v = kkt_violation(&x, &r, tau, &sol.delta);
        worst = worst.max(v);
        if v > slack {
            failed += 1;
        }
    }
    outcome(
        failed == 0 && checked >= KKT_MIN_INSTANCES,
        format!("{checked} converged solutions checked, {failed} violations, worst {worst:.2e} (slack {slack:e})"),
    )
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let grid = Grid::new(201).unwrap();
    let basis: Vec<_> = (1..=5).map(|k| cosine_basis(k, grid)).collect();
    let lambdas: Vec<f64> = (1..=5).map(|k| (k as f64).powi(-2)).collect();
    let kernel = DMatrix::from_fn(201, 201, |s, t| {
        lambdas.iter().zip(&basis).map(|(l, phi)| l * phi.values()[s] * phi.values()[t]).sum()
    });
    let eig = eigendecompose(&CovMatrix::new(grid, kernel).unwrap(), 5).unwrap();
    let val_err = eig.eigenvalues().iter().zip(&lambdas).map(|(a, b)| ((a - b) / b).abs()).fold(0.0, f64::max);
    let fun_err = eig
        .eigenfunctions()
        .iter()
        .zip(&basis)
        .map(|(est, truth)| {
            let plus = est.values().iter().zip(truth.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let minus = est.values().iter().zip(truth.values()).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max);
            plus.min(minus)
        })
        .fold(0.0, f64::max);
    let elapsed = start.elapsed();
    outcome(
        val_err <= EIGENVALUE_REL_TOL && fun_err <= EIGENFUNCTION_SUP_TOL && elapsed < FPCA_BUDGET,
        format!("eigenvalue rel err {val_err:.2e}, eigenfunction sup err {fun_err:.2e}, {elapsed:.2?}"),
    )
}

// ---------------------------------------------------------------------------
// Simulation criteria

fn bench(cfg: RunConfig) -> BenchOutput {
    run_benchmark(&RunConfig { reps: REPS, master_seed: MASTER_SEED, ..cfg }).expect("benchmark runs")
}

fn medians(out: &BenchOutput, methods: &[Method]) -> Vec<f64> {
    methods.iter().map(|&m| median_metric(&out.rows, m, "mise").unwrap_or(f64::NAN)).collect()
}

fn errors(out: &BenchOutput) -> String {
    if out.failures.is_empty() {
        String::new()
    } else {
        format!(", {} failed fits", out.failures.len())
    }
}

fn model_one(score_dist: &str) -> Outcome {
    let start = Instant::now();
    let out = bench(RunConfig { model: "I".into(), h: 2.0, s: 1, informative: 20, score_dist: score_dist.into(), ..Default::default() });
    let med = medians(&out, &[Method::Flr, Method::OracleTl]);
    outcome(
        med[1] < med[0],
        format!("median MISE TL-FLR {:.4} vs FLR {:.4}{} ({:.1?})", med[1], med[0], errors(&out), start.elapsed()),
    )
}

fn criterion_5() -> Outcome {
    model_one("uniform")
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let out = bench(RunConfig { model: "I".into(), h: 2000.0, s: 50, informative: 20, ..Default::default() });
    let med = medians(&out, &[Method::Flr, Method::OracleTl]);
    outcome(
        med[1] <= LARGE_CONTRAST_RATIO * med[0],
        format!(
            "median MISE TL-FLR {:.4} vs {LARGE_CONTRAST_RATIO} x FLR {:.4}{} ({:.1?})",
            med[1],
            LARGE_CONTRAST_RATIO * med[0],
            errors(&out),
            start.elapsed()
        ),
    )
}

fn model_four() -> &'static (BenchOutput, Duration) {
    static RUN: OnceLock<(BenchOutput, Duration)> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let methods = vec!["flr".to_string(), "naive".to_string(), "agg".to_string()];
        let out = bench(RunConfig { model: "IV".into(), informative: 12, methods: Some(methods), ..Default::default() });
        (out, start.elapsed())
    })
}

fn criterion_7() -> Outcome {
    let (out, elapsed) = model_four();
    let med = medians(out, &[Method::Flr, Method::NaiveTl, Method::AggTl]);
    let agg_ok = med[2] <= ADAPTIVE_RATIO * med[0];
    let naive_ok = med[1] > med[0];
    outcome(
        agg_ok && naive_ok,
        format!(
            "median MISE Agg {:.4} vs {ADAPTIVE_RATIO} x FLR {:.4} [{}]; Naive {:.4} > FLR {:.4} [{}]{} ({:.1?})",
            med[2],
            ADAPTIVE_RATIO * med[0],
            if agg_ok { "ok" } else { "not met" },
            med[1],
            med[0],
            if naive_ok { "ok" } else { "not met" },
            errors(out),
            elapsed
        ),
    )
}

fn criterion_8() -> Outcome {
    let (iv, _) = model_four();
    let extra = run_benchmark(&RunConfig {
        model: "II".into(),
        informative: 5,
        reps: 20,
        master_seed: MASTER_SEED + 8,
        methods: Some(vec!["agg".into()]),
        ..Default::default()
    })
    .expect("benchmark runs");
    let checks: Vec<&AggregationCheck> = iv.aggregation_checks.iter().chain(&extra.aggregation_checks).collect();
    let worst = checks.iter().map(|c| c.aggregate_risk - c.min_candidate_risk).fold(f64::NEG_INFINITY, f64::max);
    let violations = checks.iter().filter(|c| !c.holds()).count();
    outcome(
        violations == 0 && !checks.is_empty(),
        format!("{} adaptive fits, {violations} violations, max excess {worst:.2e} (tol {DOMINANCE_TOL:e})", checks.len()),
    )
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().expect("temp dir");
    let config = dir.path().join("run.json");
    std::fs::write(
        &config,
        r#"{"model": "III", "n": 60, "n_source": 40, "L": 4, "K": 2, "reps": 4, "grid_len": 65, "methods": ["flr", "tl-flr", "naive", "agg"]}"#,
    )
    .expect("write config");
    let run = |name: &str, jobs: &str| {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_tlflr"))
            .args(["bench", "--config", config.to_str().unwrap(), "--seed", "99", "--jobs", jobs, "--out", out.to_str().unwrap()])
            .output()
            .expect("binary runs");
        (status.status.success(), std::fs::read(out).unwrap_or_default())
    };
    let (ok_a, a) = run("a.csv", "1");
    let (ok_b, b) = run("b.csv", "3");
    outcome(
        ok_a && ok_b && !a.is_empty() && a == b,
        format!("two bench runs ({} and {} bytes) {}", a.len(), b.len(), if a == b { "identical" } else { "differ" }),
    )
}

fn criterion_10() -> Outcome {
    model_one("t5")
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("lasso matches brute-force oracle", criterion_1),
        ("unpenalized limit equals least squares", criterion_2),
        ("KKT certificate on converged solutions", criterion_3),
        ("FPCA recovers a rank-5 cosine kernel", criterion_4),
        ("no negative transfer, Model I", criterion_5),
        ("large-contrast robustness, Model I", criterion_6),
        ("adaptive robustness, Model IV", criterion_7),
        ("aggregation dominance invariant", criterion_8),
        ("bench output is byte-identical", criterion_9),
        ("heavy-tailed scores, Model I", criterion_10),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let result = run();
        if !result.pass {
            failures += 1;
        }
        println!("{} criterion {:>2} ({name}): {}", if result.pass { "PASS" } else { "FAIL" }, i + 1, result.detail);
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
