use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const SMALL: [&str; 8] = ["--n", "200", "--d", "4", "-k", "20", "-q", "10"];

fn blocklev(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blocklev"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) {
    let out = blocklev(args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{args:?}\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn stacked_identity_has_uniform_scores() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.csv");
    // [I_4; I_4]: every row has leverage 1/2
    let mut text = String::new();
    for _ in 0..2 {
        for i in 0..4 {
            let row: Vec<&str> = (0..4).map(|j| if i == j { "1" } else { "0" }).collect();
            text.push_str(&row.join(","));
            text.push('\n');
        }
    }
    fs::write(&a, text).unwrap();
    let out = dir.path().join("out");
    run_ok(&["scores", "--a-csv", s(&a), "-k", "4", "-q", "3", "-o", s(&out)]);
    let j = read_json(&out.join("scores.json"));
    for p in floats(&j["scores"]) {
        assert!((p - 0.25).abs() < 1e-14);
    }
    assert!(j["uniform_distortion"].as_f64().unwrap() < 1e-14);
    // K (1 - (1 - 1/K)^q)
    let expected = 4.0 * (1.0 - 0.75f64.powi(3));
    assert!((j["expected_distinct"].as_f64().unwrap() - expected).abs() < 1e-12);
}

#[test]
fn rational_scores_design_with_zero_distortion() {
    let dir = TempDir::new().unwrap();
    let pi: [f64; 5] = [0.15, 0.15, 0.2, 0.25, 0.25];
    // one column, two rows per block carrying half of each score
    let a = dir.path().join("a.csv");
    let mut text = String::new();
    for p in pi {
        let v = (0.5 * p).sqrt();
        text.push_str(&format!("{v:e}\n{:e}\n", -v));
    }
    fs::write(&a, text).unwrap();
    let out = dir.path().join("out");
    run_ok(&["scores", "--a-csv", s(&a), "-k", "5", "-q", "3", "-o", s(&out)]);
    let scores_path = out.join("scores.json");
    let first = fs::read(&scores_path).unwrap();
    for (got, want) in floats(&read_json(&scores_path)["scores"]).iter().zip(pi) {
        assert!((got - want).abs() < 1e-14);
    }
    run_ok(&["scores", "--a-csv", s(&a), "-k", "5", "-q", "3", "-o", s(&out)]);
    assert_eq!(first, fs::read(&scores_path).unwrap());

    run_ok(&[
        "design",
        "--scores",
        s(&scores_path),
        "-k",
        "5",
        "-q",
        "3",
        "-m",
        "20",
        "-o",
        s(&out),
    ]);
    let plan = read_json(&out.join("plan.json"));
    let r: Vec<u64> = plan["plans"][0]["r"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    assert_eq!(r, [3, 3, 4, 5, 5]);
    assert!(floats(&plan["table"]["distortion"])[0] < 1e-15);
    assert!((floats(&plan["table"]["beta"])[0] - 1.0).abs() < 1e-12);
}

#[test]
fn deadline_columns_follow_the_trace() {
    let dir = TempDir::new().unwrap();
    let trace = dir.path().join("trace.txt");
    let times: Vec<f64> = (1..=10).map(f64::from).collect();
    fs::write(&trace, times.iter().map(|t| format!("{t}\n")).collect::<String>()).unwrap();
    let out = dir.path().join("out");
    let runtime = format!("trace:{}", trace.display());
    let mut args = vec!["design"];
    args.extend(SMALL);
    args.extend([
        "-m",
        "100",
        "--runtime",
        &runtime,
        "--deadlines",
        "60,100,150",
        "-o",
        s(&out),
    ]);
    run_ok(&args);
    let table = &read_json(&out.join("plan.json"))["table"];
    let q: Vec<u64> = table["q"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    // a server holds 10 of 200 rows, so it finishes by T when the mother
    // job finishes by T / 20
    let expected: Vec<u64> = [60.0, 100.0, 150.0]
        .iter()
        .map(|t| {
            let f = times.iter().filter(|&&x| x <= t / 20.0).count() as f64 / 10.0;
            (f * 100.0).floor() as u64
        })
        .collect();
    assert_eq!(q, expected);
    for (phi, qt) in floats(&table["phi"]).iter().zip(&q) {
        assert!((phi - (1.0 - *qt as f64 / 100.0)).abs() < 1e-12);
    }
    assert!(floats(&table["beta"]).iter().all(|b| *b <= 1.0));
    let delta = floats(&table["delta"]);
    let bound = floats(&table["delta_bound"]);
    assert!(delta.iter().zip(&bound).all(|(d, b)| d <= b));
}

#[test]
fn solve_is_reproducible_from_its_config_snapshot() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let mut args = vec!["solve"];
    args.extend(SMALL);
    args.extend(["-m", "100", "--iterations", "25", "--seed", "7", "-o", s(&a)]);
    run_ok(&args);
    let snapshot = a.join("config.json");
    // the config file wins over the flags given next to it, except --out
    run_ok(&["solve", "--config", s(&snapshot), "--seed", "99", "-o", s(&b)]);
    let b_cfg = read_json(&b.join("config.json"));
    assert_eq!(b_cfg["seed"], 7);
    assert_eq!(
        fs::read(a.join("run.csv")).unwrap(),
        fs::read(b.join("run.csv")).unwrap()
    );
    let (ra, rb) = (read_json(&a.join("run.json")), read_json(&b.join("run.json")));
    assert_eq!(ra["config_sha256"], rb["config_sha256"]);
    assert_eq!(ra["config_sha256"].as_str().unwrap().len(), 64);
    let csv = fs::read_to_string(a.join("run.csv")).unwrap();
    assert_eq!(csv.lines().count(), 26);
    assert!(ra["final_log10_residual"].as_f64().unwrap() < ra["initial_log10_residual"].as_f64().unwrap());

    let mut args = vec!["solve"];
    args.extend(SMALL);
    args.extend(["-m", "100", "--iterations", "25", "--seed", "8", "-o", s(&b)]);
    run_ok(&args);
    assert_ne!(ra["config_sha256"], read_json(&b.join("run.json"))["config_sha256"]);
}

#[test]
fn compare_is_deterministic_and_its_none_row_is_plain_descent() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let mut args = vec!["compare"];
    args.extend(SMALL);
    args.extend([
        "--iterations",
        "20",
        "--trials",
        "1",
        "--policy",
        "conservative:0.4",
        "--sketches",
        "none,block_lvg,gaussian,block_srht",
        "-o",
        s(&out),
    ]);
    run_ok(&args);
    let table = fs::read_to_string(out.join("table.csv")).unwrap();
    let series = fs::read(out.join("series.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("policy,sketch,trials,mean_final_log10_residual"));
    run_ok(&args);
    assert_eq!(table, fs::read_to_string(out.join("table.csv")).unwrap());
    assert_eq!(series, fs::read(out.join("series.csv")).unwrap());

    let sd = dir.path().join("sd");
    let mut args = vec!["solve"];
    args.extend(SMALL);
    args.extend([
        "--iterations",
        "20",
        "--policy",
        "conservative:0.4",
        "--sketch",
        "none",
        "-o",
        s(&sd),
    ]);
    run_ok(&args);
    let exact = read_json(&sd.join("run.json"))["final_log10_residual"]
        .as_f64()
        .unwrap();
    let none: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(none[1], "none");
    assert!((none[3].parse::<f64>().unwrap() - exact).abs() < 1e-7);
}

#[test]
fn verify_exit_status_reflects_the_checks() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let mut args = vec!["verify"];
    args.extend(SMALL);
    args.extend(["-m", "100", "--iterations", "30", "--suite", "flattened", "-o", s(&out)]);
    run_ok(&args);
    let report = read_json(&out.join("verify.json"));
    assert_eq!(report["pass"], true);
    assert_eq!(report["reports"][0]["check"], "flattened_scores");

    for suite in ["weighted", "sts", "unbiased"] {
        let mut args = vec!["verify"];
        args.extend(SMALL);
        args.extend(["--suite", suite, "-o", s(&out)]);
        run_ok(&args);
    }

    // a consistent system keeps the residual inside range(A), where the
    // gradient error bound holds
    let mut args = vec!["verify"];
    args.extend(SMALL);
    args.extend([
        "-m",
        "100",
        "--iterations",
        "30",
        "--noise-sigma",
        "0",
        "--suite",
        "decoding",
        "-o",
        s(&out),
    ]);
    run_ok(&args);

    // with noise the residual leaves range(A) and this run breaks the bound
    let mut args = vec!["verify"];
    args.extend(SMALL);
    args.extend(["-m", "100", "--iterations", "30", "--suite", "decoding", "-o", s(&out)]);
    let res = blocklev(&args);
    assert_eq!(res.status.code(), Some(1));
    let report = read_json(&out.join("verify.json"));
    assert_eq!(report["pass"], false);
    assert!(report["reports"][0]["measured"]["violations"].as_u64().unwrap() >= 1);
}

#[test]
fn bad_input_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = s(&out);
    let cases: Vec<Vec<&str>> = vec![
        vec!["solve", "--bogus"],
        vec!["solve", "--policy", "newton", "-o", o],
        // q tau = 2 * 20 does not exceed d = 40
        vec!["solve", "-q", "2", "-o", o],
        vec!["solve", "--n", "200", "--d", "4", "-k", "20", "-m", "10", "-o", o],
        vec!["design", "--n", "200", "--d", "4", "-k", "20", "-q", "10", "-o", o],
        vec![
            "design",
            "--n",
            "200",
            "--d",
            "4",
            "-k",
            "20",
            "-q",
            "10",
            "-m",
            "100",
            "--deadlines",
            "1",
            "-o",
            o,
        ],
        vec!["scores", "--a-csv", "/nonexistent/a.csv", "-o", o],
        vec!["solve", "--config", "/nonexistent/config.json"],
        vec!["solve", "--runtime", "weibull:1", "-m", "200", "-o", o],
    ];
    for args in cases {
        let res = blocklev(&args);
        assert_eq!(res.status.code(), Some(2), "{args:?}");
        assert!(!res.stderr.is_empty());
    }
}
