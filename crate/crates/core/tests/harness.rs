use std::path::Path;

use divkit::cascade::{build_cascade, partition_by_confidence};
use divkit::harness::config::{DatasetSource, Experiment, ExperimentConfig};
use divkit::harness::experiments::{execute, exit_code, run, RunOptions};
use divkit::harness::{gen_data, save_csv, shipped_config, GeneratorSpec};
use divkit::{Error, ScoreRange, TrainConfig};
use serde_json::Value;

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn parse(text: &str) -> Value {
    serde_json::from_str(text).unwrap()
}

#[test]
fn retraining_report_schema() {
    let mut cfg = shipped_config("retraining").unwrap();
    cfg.trials = 3;
    let out = execute(&cfg, &RunOptions::default()).unwrap();
    let v = parse(&out.report_json().unwrap());
    for key in ["tool_version", "resolved_config", "results", "per_trial"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["resolved_config"]["master_seed"], cfg.master_seed);
    let trials = v["per_trial"].as_array().unwrap();
    assert_eq!(trials.len(), 3);
    for (i, t) in trials.iter().enumerate() {
        assert_eq!(t["trial"], i);
        let rep = &t["report"];
        for key in [
            "n", "acc_before", "acc_after", "fp_before", "fp_after", "fn_before", "fn_after", "regressed", "repaired",
            "regressed_ids", "repaired_ids", "rate_convention",
        ] {
            assert!(rep.get(key).is_some(), "trial {i} lacks {key}");
        }
        assert_eq!(rep["n"], 1000);
    }
    let names: Vec<&str> = out.side_files.iter().map(|f| f.name()).collect();
    assert_eq!(names, ["retraining-ordered-scores-before.csv", "retraining-ordered-scores-after.csv"]);
}

#[test]
fn depth_three_counts_sum_to_holdout() {
    let mut cfg = shipped_config("cascade").unwrap();
    cfg.trials = 4;
    let Experiment::Cascade(c) = &mut cfg.experiment else { panic!() };
    c.depth = 3;
    c.range = ScoreRange::new(0.1, 0.9).unwrap();
    let out = execute(&cfg, &RunOptions::default()).unwrap();
    for t in &out.report.per_trial {
        let holdout = t["holdout_size"].as_u64().unwrap();
        let per_model = t["metrics"]["per_model"].as_array().unwrap();
        let total: u64 = per_model.iter().map(|m| m["count"].as_u64().unwrap()).sum();
        assert_eq!(total, holdout);
        assert_eq!(t["metrics"]["n"].as_u64().unwrap(), holdout);
        let sizes: Vec<u64> = t["stage_sizes"].as_array().unwrap().iter().map(|s| s.as_u64().unwrap()).collect();
        assert!(sizes.windows(2).all(|w| w[1] <= w[0]), "{sizes:?}");
    }
}

#[test]
fn depth_two_difficult_set_membership() {
    let ds = gen_data(&GeneratorSpec::hard_region(4000, 12)).unwrap();
    let range = ScoreRange::new(0.1, 0.9).unwrap();
    let built = build_cascade(&ds, 2, range, &TrainConfig::default(), 13).unwrap();
    let stage1 = &built.info.stage_training_ids[1];
    assert!(!stage1.is_empty());
    let model0 = &built.ensemble.models()[0];
    let t0 = ds.filter(|d, _| built.info.stage_training_ids[0].contains(&d.id));
    let part = partition_by_confidence(model0, &t0, range).unwrap();
    let mut want = stage1.clone();
    want.sort_unstable();
    let mut got = part.difficult.ids();
    got.sort_unstable();
    assert_eq!(got, want);
    for d in part.difficult.demands() {
        let s = model0.score(d).unwrap();
        assert!((0.1..=0.9).contains(&s), "{s}");
    }
}

#[test]
fn resolved_config_reproduces_report() {
    for name in ["retraining", "cascade", "fig2-profile", "channels", "router"] {
        let mut cfg = shipped_config(name).unwrap();
        cfg.trials = cfg.trials.min(2);
        let first = execute(&cfg, &RunOptions::default()).unwrap().report_json().unwrap();
        let embedded: ExperimentConfig = serde_json::from_value(parse(&first)["resolved_config"].clone()).unwrap();
        let again = execute(&embedded, &RunOptions { jobs: Some(1) }).unwrap().report_json().unwrap();
        assert_eq!(first, again, "{name}");
    }
}

#[test]
fn csv_dataset_via_relative_path() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen_data(&GeneratorSpec::two_blob(600, 3)).unwrap();
    save_csv(&ds, &dir.path().join("data.csv")).unwrap();
    let cfg = write_config(
        dir.path(),
        "cfg.json",
        r#"{"master_seed": 9, "trials": 2, "experiment": {"kind": "retraining", "dataset": {"csv": "data.csv"}}}"#,
    );
    let out = dir.path().join("out");
    let written = run(&cfg, &out, &RunOptions::default()).unwrap();
    assert_eq!(written.len(), 3);
    let report = parse(&std::fs::read_to_string(out.join("retraining-report.json")).unwrap());
    let path = report["resolved_config"]["experiment"]["dataset"]["csv"].as_str().unwrap();
    assert!(Path::new(path).is_absolute());
    assert_eq!(report["per_trial"][0]["report"]["n"], 120);
}

#[test]
fn validation_errors_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let bad_csv = write_config(dir.path(), "bad.csv", "id,f0,label\n0,1,0\n1,2,7\n");
    let cases = [
        r#"{"master_seed": 1, "trials": 1, "experiment": {"kind": "retraining", "dataset": {"csv": "bad.csv"}}}"#,
        r#"{"master_seed": 1, "trials": 1, "experiment": {"kind": "cascade", "depth": 0,
            "range": {"a": 0.1, "b": 0.9}, "dataset": {"csv": "bad.csv"}}}"#,
        r#"{"master_seed": 1, "trials": 1, "experiment": {"kind": "diversity",
            "profile": {"constant": {"demands": 10, "theta": 1.5}}, "n_versions": 3, "n_pairs": 2}}"#,
        r#"{"master_seed": 1, "trials": 1, "experiment": {"kind": "retraining", "split": [0.5, 0.6, 0.1],
            "dataset": {"generate": {"n": 100, "dim": 1,
            "attack": {"center": [0], "spread": 1}, "clean": {"center": [1], "spread": 1}}}}}"#,
        r#"{"master_seed": 1, "trials": 1, "experiment": {"kind": "router", "routes": [
            {"n": 10, "dim": 1, "attack": {"center": [0], "spread": 1}, "clean": {"center": [1], "spread": 1}},
            {"n": 10, "dim": 2, "attack": {"center": [0, 0], "spread": 1}, "clean": {"center": [1, 1], "spread": 1}}]}}"#,
        "{ not json",
    ];
    assert!(bad_csv.exists());
    for (i, body) in cases.iter().enumerate() {
        let cfg = write_config(dir.path(), &format!("c{i}.json"), body);
        let out = dir.path().join(format!("out{i}"));
        let result = run(&cfg, &out, &RunOptions::default());
        assert_eq!(exit_code(&result), 1, "case {i}: {result:?}");
        assert!(!out.exists(), "case {i} wrote output");
    }
}

#[test]
fn unreadable_inputs_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = run(&dir.path().join("absent.json"), &dir.path().join("o1"), &RunOptions::default());
    assert_eq!(exit_code(&missing), 1, "{missing:?}");
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"master_seed": 1, "trials": 1, "experiment": {"kind": "retraining", "dataset": {"csv": "absent.csv"}}}"#,
    );
    let result = run(&cfg, &dir.path().join("o2"), &RunOptions::default());
    assert_eq!(exit_code(&result), 1, "{result:?}");
    assert!(result.unwrap_err().to_string().contains("absent.csv"));
}

#[test]
fn output_failures_map_to_two() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("taken");
    std::fs::write(&blocker, "").unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"master_seed": 1, "trials": 1, "experiment": {"kind": "channels", "n_demands": 100,
            "pair": {"a": {"name": "a", "failure": {"constant": 0.1}},
                     "b": {"name": "b", "failure": {"constant": 0.1}}, "policy": "either-flags"}}}"#,
    );
    let result = run(&cfg, &blocker, &RunOptions::default());
    assert!(matches!(result, Err(Error::Io { .. })), "{result:?}");
    assert_eq!(exit_code(&result), 2);
}

#[test]
fn tiny_csv_cascade_still_runs() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.csv"), "id,f0,label\n0,1,0\n1,2,0\n").unwrap();
    let mut cfg = shipped_config("cascade").unwrap();
    let Experiment::Cascade(c) = &mut cfg.experiment else { panic!() };
    c.dataset = DatasetSource::Csv(dir.path().join("tiny.csv"));
    cfg.trials = 1;
    let out = execute(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(out.report.per_trial[0]["holdout_size"], 1);
}
