use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn termstats(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_termstats"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = termstats(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) -> PathBuf {
    let quotes = dir.join("quotes.csv");
    let mut args = vec!["synth", "--seed", "3", "-o", path(&quotes)];
    args.extend_from_slice(extra);
    ok(&args);
    quotes
}

fn config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("termstats.toml");
    std::fs::write(&p, body).unwrap();
    p
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn records(report: &Path, kind: &str) -> Vec<Value> {
    std::fs::read_to_string(report)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .filter(|v| v["record"] == kind)
        .collect()
}

const SMALL: &str = "seed = 9\n[input]\npaths = [\"quotes.csv\"]\n[tails]\nbootstrap_b = 30\ngof_b = 10\n";

#[test]
fn full_run_recovers_generator_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, &["--dist", "pareto", "--mu", "3", "--beta", "0.175", "--maturities", "6", "--records", "2500"]);
    let cfg = config(dir, "seed = 5\n[input]\npaths = [\"quotes.csv\"]\n[tails]\nbootstrap_b = 100\ngof_b = 0\n");
    let out = dir.join("out");
    ok(&["run", "--config", path(&cfg), "--out", path(&out)]);

    let report = out.join("report.jsonl");
    let meta = &records(&report, "meta")[0];
    assert_eq!(meta["schema"], "termstats-report/1");
    assert_eq!(meta["config"]["seed"], 5);

    let scaling = records(&report, "scaling");
    let mean_abs = scaling.iter().find(|r| r["statistic"] == "mean_abs").unwrap();
    let (alpha, se) = (mean_abs["alpha"].as_f64().unwrap(), mean_abs["alpha_err"].as_f64().unwrap());
    assert!((alpha - 0.175).abs() <= 3.0 * se, "alpha {alpha} se {se}");

    let tails = records(&report, "tail");
    let abs: Vec<&Value> = tails.iter().filter(|t| t["fit"]["kind"] == "absolute").collect();
    assert_eq!(abs.len(), 6);
    for t in abs {
        let mu = t["fit"]["mu"].as_f64().unwrap();
        let err = t["fit"]["mu_err"].as_f64().unwrap();
        assert!((mu - 3.0).abs() <= 3.0 * err, "M={} mu {mu} err {err}", t["fit"]["maturity"]);
        assert_eq!(t["fit"]["levy_stable"], false);
    }

    for fig in [
        "fig2_mean_abs.csv",
        "fig3_variance.csv",
        "fig4_skewness.csv",
        "fig5_kurtosis.csv",
        "fig6_7_tails.csv",
        "fig8_aggregate.csv",
    ] {
        let text = std::fs::read_to_string(out.join(fig)).unwrap();
        assert!(text.lines().count() > 1, "{fig} has no rows");
    }
    let fig8 = std::fs::read_to_string(out.join("fig8_aggregate.csv")).unwrap();
    assert!(fig8.starts_with("maturity,n_markets,mu_bar_abs,mu_bar_pos,mu_bar_neg,asymmetry,plateau_abs\n"));
}

#[test]
fn stages_compose_to_the_full_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, &["--markets", "X,Y", "--records", "400", "--maturities", "5", "--dist", "student-t"]);
    let cfg = config(dir, SMALL);
    let (full, staged) = (dir.join("full"), dir.join("staged"));
    ok(&["run", "--config", path(&cfg), "--out", path(&full)]);
    for stage in ["ingest", "returns", "moments", "scaling", "tails", "aggregate"] {
        ok(&[stage, "--config", path(&cfg), "--out", path(&staged)]);
    }
    assert_eq!(files(&full), files(&staged));

    // rerunning one stage on the same inputs rewrites identical bytes
    ok(&["tails", "--config", path(&cfg), "--out", path(&staged), "--jobs", "3"]);
    assert_eq!(files(&full), files(&staged));
}

#[test]
fn repeated_runs_are_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, &["--records", "300", "--maturities", "4"]);
    let cfg = config(dir, SMALL);
    let (a, b) = (dir.join("a"), dir.join("b"));
    ok(&["run", "--config", path(&cfg), "--out", path(&a)]);
    ok(&["run", "--config", path(&cfg), "--out", path(&b)]);
    assert_eq!(files(&a)["report.jsonl"], files(&b)["report.jsonl"]);

    let c = dir.join("c");
    ok(&["run", "--config", path(&cfg), "--out", path(&c), "--seed", "10"]);
    assert_ne!(files(&a)["tails.jsonl"], files(&c)["tails.jsonl"]);
}

#[test]
fn empty_input_fails_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("quotes.csv"), "").unwrap();
    let cfg = config(dir, SMALL);
    let out = dir.join("out");
    let res = termstats(&["run", "--config", path(&cfg), "--out", path(&out)]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("header row required"));
    assert!(!out.exists());

    std::fs::write(dir.join("quotes.csv"), "market,obs_date,delivery,settle\n").unwrap();
    let res = termstats(&["run", "--config", path(&cfg), "--out", path(&out)]);
    assert_eq!(res.status.code(), Some(4));
    assert!(!out.exists());
}

#[test]
fn aggregate_without_tails_names_the_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, &["--records", "300", "--maturities", "3"]);
    let cfg = config(dir, SMALL);
    let out = dir.join("out");
    for stage in ["ingest", "returns", "moments", "scaling"] {
        ok(&[stage, "--config", path(&cfg), "--out", path(&out)]);
    }
    let res = termstats(&["aggregate", "--config", path(&cfg), "--out", path(&out)]);
    assert_eq!(res.status.code(), Some(3));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("stage `tails` has not been run"), "{err}");
    assert!(!out.join("report.jsonl").exists());
}

#[test]
fn unknown_stage_lists_valid_ones() {
    let res = termstats(&["plot"]);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("ingest, returns, moments, scaling, tails, aggregate, run, synth"), "{err}");
}

#[test]
fn config_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = config(dir, "[input]\npaths = [\"quotes.csv\"]\n");
    let res = termstats(&["run", "--config", path(&cfg), "--out", path(&dir.join("o"))]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("seed is required"));

    let cfg = config(dir, "seed = 1\nunknown_key = 3\n");
    let res = termstats(&["run", "--config", path(&cfg)]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn disjoint_periods_exit_with_4() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let a = dir.join("a.csv");
    let b = dir.join("b.csv");
    std::fs::write(&a, "market,obs_date,delivery,settle\nA,2001-01-02,2001-02,10\nA,2001-01-03,2001-02,11\n").unwrap();
    std::fs::write(&b, "market,obs_date,delivery,settle\nB,2005-01-03,2005-02,10\nB,2005-01-04,2005-02,11\n").unwrap();
    let out = dir.join("out");
    let res = termstats(&["ingest", "--seed", "1", "--input", path(&a), "--input", path(&b), "--out", path(&out)]);
    assert_eq!(res.status.code(), Some(4));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("[B] starts 2005-01-03 after [A] ends 2001-01-03"), "{err}");
}

#[test]
fn duplicate_across_files_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let body = "market,obs_date,delivery,settle\nA,2001-01-02,2001-02,10\n";
    let (a, b) = (dir.join("a.csv"), dir.join("b.csv"));
    std::fs::write(&a, body).unwrap();
    std::fs::write(&b, body).unwrap();
    let res = termstats(&["ingest", "--seed", "1", "--input", path(&a), "--input", path(&b), "--out", path(dir)]);
    assert_eq!(res.status.code(), Some(3));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("b.csv: line 2: duplicate record"), "{err}");
}
