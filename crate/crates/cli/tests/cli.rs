use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn proxkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_proxkit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn fixture(dir: &Path) -> PathBuf {
    let out = proxkit(&[
        "gen-fixture",
        "--out",
        dir.to_str().unwrap(),
        "--seed",
        "11",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    dir.join("config.toml")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn validate_on_fixture_drops_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture(&tmp.path().join("fx"));
    let out_dir = tmp.path().join("out");
    let o = proxkit(&[
        "validate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value =
        serde_json::from_slice(&fs::read(out_dir.join("validation.json")).unwrap()).unwrap();
    assert_eq!(v["dropped_total"], 0);
    assert_eq!(v["seed"], 11);
    assert!(out_dir.join("manifest.json").is_file());
}

#[test]
fn class_override_emits_only_that_matrix() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture(&tmp.path().join("fx"));
    let out_dir = tmp.path().join("out");
    let o = proxkit(&[
        "entity-sim",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--class",
        "method",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let matrices: Vec<String> = fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("entity_sim_") && n.ends_with(".csv"))
        .collect();
    assert_eq!(matrices, vec!["entity_sim_method.csv".to_string()]);
}

#[test]
fn each_step_runs_alone() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture(&tmp.path().join("fx"));
    for step in [
        "normalize",
        "semantic-sim",
        "network",
        "cite-flow",
        "regress",
        "stability",
        "psm",
    ] {
        let out_dir = tmp.path().join(step);
        let o = proxkit(&[
            step,
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{step}: {}", stderr(&o));
        let m: serde_json::Value =
            serde_json::from_slice(&fs::read(out_dir.join("manifest.json")).unwrap()).unwrap();
        let steps = m["steps"].as_array().unwrap();
        assert_eq!(steps.len(), 1);
        assert_eq!(steps[0]["step"], step);
        for f in steps[0]["outputs"].as_array().unwrap() {
            assert!(out_dir.join(f["path"].as_str().unwrap()).is_file());
        }
    }
}

#[test]
fn config_errors_exit_2_with_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture(&tmp.path().join("fx"));
    let o = proxkit(&[
        "validate",
        "--config",
        cfg.to_str().unwrap(),
        "--quantile",
        "1.5",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let line = stderr(&o);
    assert!(
        line.starts_with("error kind=config field=semantic.quantile"),
        "{line}"
    );
    assert_eq!(line.trim_end().lines().count(), 1);

    let text = fs::read_to_string(&cfg).unwrap() + "\n[network]\nunknown_key = 1\n";
    fs::write(&cfg, text).unwrap();
    let o = proxkit(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("field=network"), "{}", stderr(&o));

    let o = proxkit(&[
        "validate",
        "--config",
        tmp.path().join("missing.toml").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn data_errors_exit_3_with_file_and_line() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("fx");
    let cfg = fixture(&dir);
    let papers = dir.join("papers.jsonl");
    let text = fs::read_to_string(&papers).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[1] = "{not json";
    fs::write(&papers, lines.join("\n")).unwrap();
    let o = proxkit(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let line = stderr(&o);
    assert!(line.starts_with("error kind=data"), "{line}");
    assert!(line.contains("papers.jsonl line=2"), "{line}");
}

#[test]
fn gen_fixture_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    fixture(&tmp.path().join("a"));
    fixture(&tmp.path().join("b"));
    for f in [
        "papers.jsonl",
        "entities.jsonl",
        "embeddings.csv",
        "citations.csv",
        "truth.json",
        "config.toml",
    ] {
        assert_eq!(
            fs::read(tmp.path().join("a").join(f)).unwrap(),
            fs::read(tmp.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}
