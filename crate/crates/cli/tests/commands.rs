use std::path::Path;
use std::process::{Command, Output};

use tlflr_cli::config::{Method, RunConfig};
use tlflr_cli::io::read_results;
use tlflr_cli::realdata::{run_realdata_on, run_targets, Sector};
use tlflr_cli::bench::median_metric;
use tlflr_core::funcore::Grid;
use tlflr_core::synth::{ModelKind, Scenario, SyntheticConfig};

fn tlflr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tlflr")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn simulate_fit_adaptive_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = tlflr(&["simulate", "--model", "II", "--n", "40", "--n-source", "30", "--L", "3", "--K", "2", "--seed", "5", "--out", p(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("informative sources: [0, 1]"));
    for f in ["target.csv", "source_00.csv", "source_02.csv", "truth.csv"] {
        assert!(data.join(f).exists(), "{f}");
    }

    let slope = dir.path().join("slope.csv");
    let target = data.join("target.csv");
    let src: Vec<String> = (0..3).map(|l| data.join(format!("source_{l:02}.csv")).display().to_string()).collect();
    let with_sources = |cmd: &str, out: &Path| {
        let mut args = vec![cmd, "--target", p(&target), "--m-grid", "1,2,3", "--out", p(out), "--sources"];
        args.extend(src.iter().map(String::as_str));
        tlflr(&args)
    };
    let out = with_sources("fit", &slope);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&slope).unwrap();
    assert!(text.starts_with("t,slope\n"));
    assert_eq!(text.lines().count(), 101);

    let agg = dir.path().join("agg.csv");
    let out = with_sources("adaptive", &agg);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("lambda"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // configuration error
    let out = tlflr(&["bench", "--model", "VII", "--out", p(&dir.path().join("r.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"unknown_key": 1}"#).unwrap();
    assert_eq!(tlflr(&["bench", "--config", p(&cfg)]).status.code(), Some(2));
    assert_eq!(tlflr(&["bench", "--bogus-flag"]).status.code(), Some(2));
    // data error
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "id,response,0,0.5,1\na,1,2\n").unwrap();
    let out = tlflr(&["fit", "--target", p(&bad), "--out", p(&dir.path().join("s.csv"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 2"));
    let out = tlflr(&["fit", "--target", p(&dir.path().join("missing.csv")), "--out", p(&dir.path().join("s.csv"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn config_file_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"model": "II", "n": 30, "n_source": 20, "L": 2, "K": 1, "reps": 5, "grid_len": 25, "m_grid": [1, 2], "methods": ["flr", "naive"]}"#).unwrap();
    let out_path = dir.path().join("res.csv");
    let out = tlflr(&["bench", "--config", p(&cfg), "--reps", "2", "--out", p(&out_path), "--jobs", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_results(std::fs::File::open(&out_path).unwrap()).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[1].method, "Naive TL-FLR");
    assert!(rows.iter().all(|r| r.m.unwrap() <= 2));
}

#[test]
fn realdata_from_stock_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for sector in 0..2 {
        let mut text = String::from("ticker,day,price,month\n");
        for t in 0..12 {
            let drift = 0.002 * (t as f64 - 6.0) + 0.001 * sector as f64;
            for month in 1..=2 {
                for day in 0..21 {
                    let price = 50.0 + t as f64 + (1.0 + drift).powi(day + 21 * (month - 1)) + 0.3 * ((day * (t + 1)) as f64).sin();
                    text.push_str(&format!("T{sector}_{t},{day},{price},{month}\n"));
                }
            }
        }
        let path = dir.path().join(format!("sector{sector}.csv"));
        std::fs::write(&path, text).unwrap();
        files.push(path);
    }
    let out_path = dir.path().join("rd.csv");
    let out = tlflr(&["realdata", "--sectors", p(&files[0]), p(&files[1]), "--reps", "2", "--grid-len", "21", "--m-grid", "1,2", "--out", p(&out_path)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_results(std::fs::File::open(&out_path).unwrap()).unwrap();
    assert!(rows.iter().any(|r| r.scenario == "sector1" && r.metric == "rel_pred_error"));
}

#[test]
fn realdata_stand_in_sectors_favor_aggregation() {
    // Model II stand-ins: one target sector, informative sectors and far-off ones.
    let cfg = SyntheticConfig { model: ModelKind::II, sources: 6, informative: 4, seed: 77, ..Default::default() };
    let sc = Scenario::generate(&cfg, Grid::new(100).unwrap()).unwrap();
    let mut sectors = vec![Sector { name: "target".into(), data: sc.target }];
    sectors.extend(sc.sources.into_iter().enumerate().map(|(i, s)| Sector { name: format!("s{i}"), data: s.dataset }));
    let run = RunConfig { reps: 50, ..Default::default() };
    let out = run_realdata_on(&sectors[..1], &run).unwrap();
    assert!(out.rows.iter().all(|r| r.method == "FLR"));
    let out = run_targets(&sectors, &[0], &run).unwrap();
    assert!(out.rows.iter().all(|r| r.scenario == "target"));
    let ratio = median_metric(&out.rows, Method::AggTl, "rel_pred_error").unwrap();
    println!("median Agg relative prediction error: {ratio}");
    assert!(ratio < 1.0, "{ratio}");
}
