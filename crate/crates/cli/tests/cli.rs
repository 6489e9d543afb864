use std::path::Path;
use std::process::{Command, Output};

fn icon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_icon")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "stdout:\n{}\nstderr:\n{}", stdout(o), String::from_utf8_lossy(&o.stderr));
}

fn datagen(dir: &Path, extra: &[&str]) -> Output {
    let out = dir.to_str().unwrap();
    let mut args = vec!["datagen", "--profile", "smoke", "--out", out];
    args.extend_from_slice(extra);
    icon(&args)
}

#[test]
fn datagen_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        assert_ok(&datagen(d.path(), &["--families", "1,7", "--seed", "3"]));
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("manifest.json")).unwrap();
    assert_eq!(read(&a), read(&b));
    let manifest: serde_json::Value = serde_json::from_slice(&read(&a)).unwrap();
    assert_eq!(manifest["files"].as_array().unwrap().len(), 2);
    assert_eq!(manifest["seed"], 3);
}

#[test]
fn unknown_family_is_a_config_error() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(datagen(d.path(), &["--families", "99"]).status.code(), Some(2));
}

#[test]
fn unknown_override_key_is_a_config_error() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(datagen(d.path(), &["--set", "no_such_key=1"]).status.code(), Some(2));
}

#[test]
fn config_file_with_unknown_key_is_rejected() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("bad.json");
    std::fs::write(&cfg, r#"{"families": [1], "operators": 2, "pairs_per_operator": 2, "seed": 0, "typo": 1}"#)
        .unwrap();
    assert_eq!(datagen(d.path(), &["--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn training_without_a_manifest_is_a_config_error() {
    let d = tempfile::tempdir().unwrap();
    let empty = d.path().join("nothing");
    let o = icon(&[
        "train",
        "--profile",
        "smoke",
        "--data",
        empty.to_str().unwrap(),
        "--out",
        d.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn inspect_prints_text_and_json() {
    let d = tempfile::tempdir().unwrap();
    assert_ok(&datagen(d.path(), &[]));
    let data = d.path().to_str().unwrap();
    let text = icon(&["inspect", "--data", data, "--family", "1", "--demos", "0,2", "--question", "3"]);
    assert_ok(&text);
    let s = stdout(&text);
    assert!(s.contains("operator 0"));
    assert!(s.contains("term") && s.contains("idx6"));

    let json = icon(&["inspect", "--data", data, "--family", "1", "--format", "json", "--count", "10"]);
    assert_ok(&json);
    let v: serde_json::Value = serde_json::from_str(&stdout(&json)).unwrap();
    let cols = v["columns"].as_u64().unwrap() as usize;
    assert_eq!(v["rows"]["value"].as_array().unwrap().len(), cols);
    assert_eq!(v["queries"], 50);

    let bad = icon(&["inspect", "--data", data, "--family", "1", "--operator", "100"]);
    assert_eq!(bad.status.code(), Some(2));
    let overlap = icon(&["inspect", "--data", data, "--family", "1", "--demos", "1", "--question", "1"]);
    assert_eq!(overlap.status.code(), Some(2));
}

#[test]
fn train_then_evaluate() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data");
    let run = d.path().join("run");
    let evals = d.path().join("eval");
    assert_ok(&datagen(&data, &["--N", "30"]));
    let (data, run, evals) = (data.to_str().unwrap(), run.to_str().unwrap(), evals.to_str().unwrap());
    let train = icon(&["train", "--profile", "smoke", "--data", data, "--out", run, "--steps", "4"]);
    assert_ok(&train);
    assert!(stdout(&train).contains("checkpoint"));
    let ck = Path::new(run).join("checkpoint.ck");
    assert!(ck.exists() && Path::new(run).join("train_config.json").exists());
    let ck = ck.to_str().unwrap();

    let common = ["--profile", "smoke", "--checkpoint", ck, "--out", evals];
    let mut args = vec!["eval", "ind"];
    args.extend_from_slice(&common);
    args.extend_from_slice(&["--data", data, "--families", "1", "--J", "1-3", "--operators", "20"]);
    let ind = icon(&args);
    assert_ok(&ind);
    let s = stdout(&ind);
    assert_eq!(s.lines().filter(|l| l.starts_with("ind,")).count(), 3);
    assert!(s.contains("family  1: non-increasing"));

    let mut args = vec!["eval", "newode"];
    args.extend_from_slice(&common);
    args.extend_from_slice(&["--b", "-0.3:0.3:0.1", "--mode", "wrong_operator", "--operators", "4"]);
    args.push("--plot-data");
    let newode = icon(&args);
    assert_ok(&newode);
    let s = stdout(&newode);
    assert_eq!(s.lines().filter(|l| l.starts_with("newode,")).count(), 7);
    assert_eq!(s.lines().filter(|l| l.starts_with("wrote ")).count(), 3);

    let mut args = vec!["eval", "resolution"];
    args.extend_from_slice(&common);
    args.extend_from_slice(&["--data", data, "--family", "1"]);
    assert_eq!(icon(&args).status.code(), Some(2));

    let resume = icon(&["train", "--profile", "smoke", "--data", data, "--out", run, "--steps", "6", "--resume", ck]);
    assert_ok(&resume);
    assert!(stdout(&resume).contains("resuming from"));
}
