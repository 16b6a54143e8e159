use std::path::Path;
use std::process::{Command, Output};

use gainlora::continual::{compute_ap, compute_ft, AccuracyMatrix};

const SMOKE: &str = "seeds = [0]\n[train]\nepochs = 3\n[tasks]\ntasks = 2\ntrain = 48\ntest = 24\n";

fn gainlora(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gainlora"))
        .args(args)
        .env_remove("GAINLORA_OUT")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("exp.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn params_prints_a_single_count() {
    let o = gainlora(&["params", "--preset", "t5-large", "--strategy", "gain+olora"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "1385472");

    let o = gainlora(&["params", "--preset", "llama-2-7b", "--strategy", "inflora", "--json"]);
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["trainable_params"], 1_048_576);

    let o = gainlora(&["params"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 21);
}

#[test]
fn unknown_preset_is_a_config_error() {
    let o = gainlora(&["params", "--preset", "gpt-9", "--strategy", "olora"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("gpt-9"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(gainlora(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(gainlora(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_keys_and_files_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMOKE);
    let out = dir.path().join("out");
    let o = gainlora(&["run", &cfg, "--set", "train.epoch=4", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("epoch"), "{}", stderr(&o));
    assert!(!out.exists());

    let bad = write_config(dir.path(), "[model]\nvocab = 256\nwidth = 3\n");
    let o = gainlora(&["run", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("width"));

    let o = gainlora(&["run", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn diverging_training_is_a_numeric_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMOKE);
    let out = dir.path().join("out");
    let o = gainlora(&["run", &cfg, "--set", "train.lr=1e300", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn run_writes_a_consistent_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMOKE);
    let out = dir.path().join("out");
    let o = gainlora(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in [
        "accuracy.csv",
        "trajectory.csv",
        "gating.csv",
        "params.csv",
        "summary.json",
        "seed-0/checkpoint.json",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut reader = csv::Reader::from_path(out.join("accuracy.csv")).unwrap();
    let headers = reader.headers().unwrap().clone();
    assert_eq!(
        headers.iter().collect::<Vec<_>>(),
        ["seed", "after_task", "task", "accuracy"]
    );
    for rec in reader.records() {
        let rec = rec.unwrap();
        let j: usize = rec[1].parse().unwrap();
        let i: usize = rec[2].parse().unwrap();
        assert!(i <= j);
        if rows.len() <= j {
            rows.push(Vec::new());
        }
        assert_eq!(rows[j].len(), i);
        rows[j].push(rec[3].parse().unwrap());
    }
    assert_eq!(rows.iter().map(Vec::len).collect::<Vec<_>>(), [1, 2]);
    let m = AccuracyMatrix::from_rows(rows).unwrap();

    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["ap"]["mean"].as_f64().unwrap(), compute_ap(&m).unwrap());
    assert_eq!(summary["ft"]["mean"].as_f64().unwrap(), compute_ft(&m).unwrap());
    assert_eq!(summary["config"]["train"]["epochs"], 3);
    assert!(summary.get("wall_clock_secs").is_none());

    let o = gainlora(&["report", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn identical_runs_write_identical_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMOKE);
    let mut texts = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = gainlora(&[
            "run",
            &cfg,
            "--seed",
            "4",
            "--seed",
            "5",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        texts.push(std::fs::read(out.join("summary.json")).unwrap());
    }
    assert_eq!(texts[0], texts[1]);
    let v: serde_json::Value = serde_json::from_slice(&texts[0]).unwrap();
    assert_eq!(v["seeds"], serde_json::json!([4, 5]));
}

#[test]
fn ablate_writes_one_row_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMOKE);
    let out = dir.path().join("abl");
    let o = gainlora(&[
        "ablate",
        &cfg,
        "--variants",
        "gain,fixed_one",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut reader = csv::Reader::from_path(out.join("comparison.csv")).unwrap();
    let variants: Vec<String> = reader.records().map(|r| r.unwrap()[0].to_string()).collect();
    assert_eq!(variants, ["gain", "fixed_one"]);
    assert!(out.join("gain/summary.json").is_file());
    assert!(out.join("fixed_one/summary.json").is_file());

    let o = gainlora(&[
        "ablate",
        &cfg,
        "--variants",
        "gain,bogus",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}
