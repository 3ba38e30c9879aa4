use std::path::Path;
use std::process::{Command, Output};

use svc_sdm::cli::waic_table;
use svc_sdm::sim::model_spec;
use svc_sdm::spec::FunctionalForm;

fn svc_sdm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svc-sdm"))
        .args(args)
        .env("SVC_SDM_THREADS", "1")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const QUICK: [&str; 10] = ["--iterations", "120", "--burn", "60", "--thin", "3", "--chains", "2", "--neighbors", "5"];

fn fit(data: &Path, form: FunctionalForm, out: &Path, dir: &Path) -> Output {
    let spec = dir.join(format!("{}.json", form.name()));
    std::fs::write(&spec, serde_json::to_string(&model_spec(form)).unwrap()).unwrap();
    let mut args = vec!["fit", "--data", s(data), "--spec", s(&spec), "--out", s(out), "--no-strict"];
    args.extend(QUICK);
    svc_sdm(&args)
}

#[test]
fn unknown_scenario_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = svc_sdm(&["simulate", "--scenario", "bogus", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for name in ["linear", "quadratic", "stratum", "interaction", "missing-interaction", "full"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn missing_data_file_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("spec.json");
    std::fs::write(&spec, serde_json::to_string(&model_spec(FunctionalForm::Linear)).unwrap()).unwrap();
    let out = svc_sdm(&["fit", "--data", "/nonexistent.csv", "--spec", s(&spec), "--out", s(tmp.path())]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn simulate_fit_compare_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let sim = root.join("sim");
    let out = svc_sdm(&["simulate", "--scenario", "full", "--seed", "3", "--replicates", "2", "--out", s(&sim)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["scenario.json", "data_000.csv", "truth_001.csv", "manifest.json"] {
        assert!(sim.join(f).exists(), "{f}");
    }

    let (a, b, c) = (root.join("a"), root.join("b"), root.join("c"));
    assert!(fit(&sim.join("data_000.csv"), FunctionalForm::Linear, &a, root).status.success());
    assert!(fit(&sim.join("data_000.csv"), FunctionalForm::Quadratic, &b, root).status.success());
    assert!(fit(&sim.join("data_001.csv"), FunctionalForm::Linear, &c, root).status.success());
    for f in ["chain_0.csv", "chain_1.json", "summary.csv", "summary.json", "manifest.json"] {
        assert!(a.join(f).exists(), "{f}");
    }

    let table = root.join("cmp.csv");
    let out = svc_sdm(&["compare", "--fits", s(&a), s(&b), "--out", s(&table)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&table).unwrap();
    assert_eq!(text.lines().count(), 3);

    // Fits to different data cannot be ranked against each other.
    let out = svc_sdm(&["compare", "--fits", s(&a), s(&c), "--out", s(&root.join("bad.csv"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn waic_table_sorts_and_flags_large_gaps() {
    let rows = waic_table(&[("b".into(), 105.0), ("a".into(), 100.0), ("c".into(), 101.5)]);
    let names: Vec<&str> = rows.iter().map(|r| r.fit.as_str()).collect();
    assert_eq!(names, ["a", "c", "b"]);
    assert_eq!(rows[0].delta_waic, 0.0);
    assert_eq!(rows[1].delta_waic, 1.5);
    assert!(!rows[1].substantial);
    assert!(rows[2].substantial);
}
