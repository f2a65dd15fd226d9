use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use esgval_cli::synthetic::{generate, DEFAULT_SEED};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn esgval(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_esgval"))
        .current_dir(root())
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn rows(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count() - 1
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn committed_fixture_matches_generator() {
    let f = generate(DEFAULT_SEED);
    let data = root().join("data");
    assert_eq!(std::fs::read_to_string(data.join("prices.csv")).unwrap(), f.prices);
    assert_eq!(std::fs::read_to_string(data.join("esg.csv")).unwrap(), f.esg);
    assert_eq!(std::fs::read_to_string(data.join("yields.csv")).unwrap(), f.yields);
    assert_eq!(std::fs::read_to_string(data.join("index_weights.csv")).unwrap(), f.index_weights);
}

#[test]
fn missing_price_file_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = esgval(dir.path(), &["--prices", "no/such/prices.csv", "frontier"]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "io");
    assert_eq!(err["exit_code"], 2);
    assert!(err["path"].as_str().unwrap().ends_with("no/such/prices.csv"));
}

#[test]
fn invalid_configuration_is_rejected_before_loading() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[optimizer]\nlambdas = [1.5]\n").unwrap();
    let out = esgval(dir.path(), &["--config", cfg.to_str().unwrap(), "frontier"]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "config");

    std::fs::write(&cfg, "seeed = 3\n").unwrap();
    let out = esgval(dir.path(), &["--config", cfg.to_str().unwrap(), "ingest"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn default_frontier_writes_four_files_of_one_hundred_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = esgval(dir.path(), &["frontier"]);
    ok(&out);
    let f = dir.path().join("frontier");
    for l in ["0", "0.25", "0.5", "0.75"] {
        assert_eq!(rows(&f.join(format!("frontier_lambda_{l}.csv"))), 100, "lambda {l}");
    }
    assert!(f.join("config.toml").exists());
    assert!(f.join("fit.json").exists());
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["--scenarios", "2000", "frontier", "--alpha-grid", "0:0.1:0.9"];
    ok(&esgval(a.path(), &args));
    ok(&esgval(b.path(), &args));
    for name in [
        "frontier_lambda_0.csv",
        "frontier_lambda_0.25.csv",
        "frontier_lambda_0.5.csv",
        "frontier_lambda_0.75.csv",
        "fit.json",
        "summary.json",
        "config.toml",
    ] {
        assert_eq!(read(&a.path().join("frontier").join(name)), read(&b.path().join("frontier").join(name)), "{name}");
    }
    // A different seed moves the scenarios.
    let c = tempfile::tempdir().unwrap();
    ok(&esgval(c.path(), &["--seed", "7", "--scenarios", "2000", "frontier", "--alpha-grid", "0:0.1:0.9"]));
    assert_ne!(
        read(&a.path().join("frontier/frontier_lambda_0.csv")),
        read(&c.path().join("frontier/frontier_lambda_0.csv"))
    );
}

#[test]
fn ingest_smoke() {
    let dir = tempfile::tempdir().unwrap();
    ok(&esgval(dir.path(), &["ingest"]));
    let d = dir.path().join("ingest");
    let returns = rows(&d.join("returns.csv"));
    assert_eq!(rows(&d.join("esg_daily.csv")), 5 * returns);
    assert_eq!(rows(&d.join("yields.csv")), returns);
    let s: serde_json::Value = serde_json::from_slice(&read(&d.join("summary.json"))).unwrap();
    assert_eq!(s["tickers"].as_array().unwrap().len(), 5);
}

#[test]
fn tangent_smoke() {
    let dir = tempfile::tempdir().unwrap();
    ok(&esgval(dir.path(), &["--scenarios", "2000", "tangent", "--alpha-grid", "0:0.1:0.9"]));
    assert_eq!(rows(&dir.path().join("tangent/tangent.csv")), 4);
}

#[test]
fn backtest_and_report_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let out = esgval(
        dir.path(),
        &[
            "--scenarios",
            "500",
            "--lambda",
            "0,0.5",
            "backtest",
            "--start",
            "2020-10-01",
            "--end",
            "2020-11-30",
        ],
    );
    ok(&out);
    let b = dir.path().join("backtest");
    for f in ["series.csv", "weights.csv", "performance.csv", "moments.csv", "rrr.csv", "summary.json", "config.toml"] {
        assert!(b.join(f).exists(), "{f}");
    }
    // Two strategies and two benchmarks per lambda.
    assert_eq!(rows(&b.join("performance.csv")), 6);

    ok(&esgval(dir.path(), &["report"]));
    let r = dir.path().join("report");
    for f in ["performance.csv", "moments.csv", "rrr.csv"] {
        assert_eq!(read(&b.join(f)), read(&r.join(f)), "{f}");
    }
}

#[test]
fn price_options_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let out = esgval(
        dir.path(),
        &[
            "--lambda",
            "0,0.5",
            "price-options",
            "--underlying",
            "index",
            "--t-grid",
            "15,30",
            "--m-grid",
            "0.9,1,1.1",
            "--paths",
            "2000",
        ],
    );
    ok(&out);
    let d = dir.path().join("price-options");
    assert_eq!(rows(&d.join("options_lambda_0.csv")), 6);
    assert_eq!(rows(&d.join("options_lambda_0.5.csv")), 6);
    assert_eq!(rows(&d.join("underlying.csv")), 2);
}

#[test]
fn srr_smoke() {
    let dir = tempfile::tempdir().unwrap();
    ok(&esgval(dir.path(), &["srr", "--lambda-grid", "0,0.5"]));
    let d = dir.path().join("srr");
    assert_eq!(rows(&d.join("srr_summary.csv")), 2);
    assert!(rows(&d.join("srr_series.csv")) > 1000);
}

#[test]
fn config_file_paths_resolve_against_its_directory() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("inputs");
    std::fs::create_dir(&data).unwrap();
    for f in ["prices.csv", "esg.csv", "yields.csv", "index_weights.csv"] {
        std::fs::copy(root().join("data").join(f), data.join(f)).unwrap();
    }
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "[data]\nprices = \"inputs/prices.csv\"\nesg = \"inputs/esg.csv\"\nyields = \"inputs/yields.csv\"\nindex_weights = \"inputs/index_weights.csv\"\n",
    )
    .unwrap();
    ok(&esgval(dir.path(), &["--config", cfg.to_str().unwrap(), "ingest"]));
}
