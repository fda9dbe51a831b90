use std::path::Path;
use std::process::{Command, Output};

use chrono::NaiveDate;
use ifl_core::io::{
    read_breaks_csv, read_coefficients_csv, read_holdings_csv, write_panel_csv, FitRecord,
};
use ifl_core::portfolio::business_days;
use ifl_core::RegressionPanel;

fn ifl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ifl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// One-regressor panel with a mean shift halfway, plus an irrelevant column.
fn write_panel(dir: &Path) -> std::path::PathBuf {
    let n = 24;
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|t| vec![1.0 + 0.1 * (t % 3) as f64, ((t * 7) % 5) as f64 - 2.0])
        .collect();
    let y = rows
        .iter()
        .enumerate()
        .map(|(t, r)| r[0] * if t < 12 { 1.0 } else { 3.0 })
        .collect();
    let panel = RegressionPanel::from_rows(y, &rows).unwrap();
    let path = dir.join("panel.csv");
    write_panel_csv(std::fs::File::create(&path).unwrap(), &panel).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn fit_writes_consistent_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let panel = write_panel(dir.path());
    let out = dir.path().join("fit");
    let run = ifl(&["fit", s(&panel), "--out", s(&out)]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let record = FitRecord::read_json(std::fs::File::open(out.join("fit.json")).unwrap()).unwrap();
    assert_eq!(record.estimator, "ifl");
    assert_eq!((record.n_obs, record.n_features), (24, 2));
    let beta =
        read_coefficients_csv(std::fs::File::open(out.join("beta_hat.csv")).unwrap()).unwrap();
    assert_eq!(beta, record.coefficients().unwrap());
    // indices in artifacts are one-based
    assert!(record
        .breaks
        .iter()
        .all(|b| b.component >= 1 && b.time >= 2));
    assert!(record.support.iter().all(|s| s.start >= 1 && s.end <= 24));
}

#[test]
fn fit_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let panel = write_panel(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(code(&ifl(&["fit", s(&panel), "--out", s(&a)])), 0);
    assert_eq!(
        code(&ifl(&["fit", s(&panel), "--out", s(&b), "--threads", "2"])),
        0
    );
    let strip = |p: &Path| {
        let mut v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(p.join("fit.json")).unwrap()).unwrap();
        v["diagnostics"]["timings"] = serde_json::Value::Null;
        v
    };
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(
        std::fs::read(a.join("beta_hat.csv")).unwrap(),
        std::fs::read(b.join("beta_hat.csv")).unwrap()
    );
}

#[test]
fn genlasso_fit_records_its_settings() {
    let dir = tempfile::tempdir().unwrap();
    let panel = write_panel(dir.path());
    let out = dir.path().join("gl");
    let run = ifl(&[
        "fit",
        s(&panel),
        "--estimator",
        "genlasso",
        "--gamma-mix",
        "0.2",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let record = FitRecord::read_json(std::fs::File::open(out.join("fit.json")).unwrap()).unwrap();
    assert_eq!(record.estimator, "genlasso");
    assert_eq!(record.diagnostics["gamma_mix"], 0.2);
    assert!(record.lambda_select.is_none());
}

#[test]
fn malformed_panel_names_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "t,y,x1\n1,1.0,2.0\n2,oops,1.0\n3,1.0,1.0\n").unwrap();
    let run = ifl(&["fit", s(&path), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&run), 2);
    let msg = stderr(&run);
    assert!(msg.contains("line 3") && msg.contains("column y"), "{msg}");

    let run = ifl(&[
        "fit",
        s(&dir.path().join("missing.csv")),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(code(&run), 2);
    let run = ifl(&[
        "fit",
        s(&path),
        "--estimator",
        "oracle",
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(code(&run), 2);
}

#[test]
fn zero_fund_value_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("prices.csv");
    std::fs::write(
        &path,
        "date,fund,asset_1\n2024-01-02,100,10\n2024-01-03,0,11\n2024-01-04,105,12\n",
    )
    .unwrap();
    let run = ifl(&[
        "portfolio",
        "--prices",
        s(&path),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(code(&run), 2);
    assert!(stderr(&run).contains("fund value"), "{}", stderr(&run));
}

#[test]
fn simulate_standard_grid_has_eighteen_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let run = ifl(&[
        "simulate",
        "--reps",
        "1",
        "--estimators",
        "ifl,oracle",
        "--seed",
        "3",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let tables = std::fs::read_to_string(out.join("tables.csv")).unwrap();
    assert_eq!(tables.lines().count(), 19);
    assert!(out.join("report.json").exists() && out.join("bias_hist.csv").exists());
}

#[test]
fn simulate_tables_do_not_depend_on_threads() {
    let dir = tempfile::tempdir().unwrap();
    let mut tables = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(threads);
        let run = ifl(&[
            "simulate",
            "--grid",
            "custom",
            "--n-per-regime",
            "10",
            "--p",
            "6,8",
            "--q",
            "2",
            "--reps",
            "3",
            "--estimators",
            "ifl,oracle",
            "--threads",
            threads,
            "--seed",
            "9",
            "--out",
            s(&out),
        ]);
        assert_eq!(code(&run), 0, "{}", stderr(&run));
        tables.push(std::fs::read(out.join("tables.csv")).unwrap());
    }
    assert_eq!(tables[0], tables[1]);
}

#[test]
fn config_files_and_flags_layer() {
    let dir = tempfile::tempdir().unwrap();
    let ini = dir.path().join("sim.ini");
    std::fs::write(&ini, "[simulate]\ngrid = custom\nn_per_regime = 10\np = 6\nq = 2\nn_reps = 2\nestimators = oracle\n").unwrap();
    let json = dir.path().join("sim.json");
    std::fs::write(&json, r#"{"grid": "custom", "n_per_regime": 10, "p": [6], "q": 2, "n_reps": 2, "estimators": ["oracle"]}"#).unwrap();
    let mut reports = Vec::new();
    for cfg in [&ini, &json] {
        let out = dir.path().join(cfg.extension().unwrap());
        let run = ifl(&["simulate", "--config", s(cfg), "--out", s(&out)]);
        assert_eq!(code(&run), 0, "{}", stderr(&run));
        reports.push(std::fs::read(out.join("tables.csv")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(String::from_utf8_lossy(&reports[0]).lines().count(), 2);

    // a dedicated flag beats --set, which beats the file
    let out = dir.path().join("layered");
    let run = ifl(&[
        "simulate",
        "--config",
        s(&ini),
        "--set",
        "p=7",
        "--p",
        "6,8",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    assert_eq!(
        std::fs::read_to_string(out.join("tables.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );

    let bad = dir.path().join("bad.ini");
    std::fs::write(&bad, "no_such_key = 1\n").unwrap();
    assert_eq!(code(&ifl(&["simulate", "--config", s(&bad)])), 2);
    assert_eq!(
        code(&ifl(&[
            "simulate",
            "--set",
            "n_reps=many",
            "--out",
            s(&dir.path().join("x"))
        ])),
        2
    );
}

#[test]
fn synthetic_portfolio_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pf");
    let run = ifl(&[
        "portfolio",
        "--synth",
        "--reference-shape",
        "--per-regime",
        "40",
        "--seed",
        "1",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    for name in ["prices.csv", "holdings.csv", "breaks.csv", "fit.json"] {
        assert!(out.join(name).exists(), "{name} missing");
    }
    let (dates, n_hat) =
        read_holdings_csv(std::fs::File::open(out.join("holdings.csv")).unwrap()).unwrap();
    assert_eq!((dates.len(), n_hat.n_features()), (80, 20));
    let events = read_breaks_csv(std::fs::File::open(out.join("breaks.csv")).unwrap()).unwrap();
    assert!(events.iter().all(|e| dates.contains(&e.date)));

    // re-estimating from the written prices reproduces the holdings
    let again = dir.path().join("again");
    let run = ifl(&[
        "portfolio",
        "--prices",
        s(&out.join("prices.csv")),
        "--out",
        s(&again),
    ]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    assert_eq!(
        std::fs::read(out.join("holdings.csv")).unwrap(),
        std::fs::read(again.join("holdings.csv")).unwrap()
    );
}

#[test]
#[ignore = "holdings estimation reports many spurious rebalancings and misses the true date by one period"]
fn noiseless_synth_reports_the_configured_break_date() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pf");
    let run = ifl(&[
        "portfolio",
        "--synth",
        "--assets",
        "3",
        "--periods",
        "60",
        "--weights",
        "0.5,0.5,0;0,0.3,0.7",
        "--breaks",
        "31",
        "--seed",
        "4",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let start = NaiveDate::from_ymd_opt(2010, 1, 4).unwrap();
    // one-based period 31 closes on the 32nd date
    let expected = business_days(start, 61)[31];
    let events = read_breaks_csv(std::fs::File::open(out.join("breaks.csv")).unwrap()).unwrap();
    assert!(
        events.iter().any(|e| e.date == expected),
        "{expected} not in {events:?}"
    );
}

#[test]
fn portfolio_without_a_source_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&ifl(&["portfolio", "--out", s(&dir.path().join("o"))])),
        2
    );
    assert_eq!(
        code(&ifl(&[
            "portfolio",
            "--synth",
            "--periods",
            "10",
            "--out",
            s(&dir.path().join("o"))
        ])),
        2
    );
}

#[test]
fn bench_writes_timings() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let run = ifl(&[
        "bench",
        "--n-per-regime",
        "10",
        "--p",
        "5",
        "--q",
        "2",
        "--reps",
        "2",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let csv = std::fs::read_to_string(out.join("bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("bench.json")).unwrap()).unwrap();
    assert_eq!(summary["replications"], 2);
    assert!(summary["ratio"].as_f64().unwrap() > 0.0);
}
