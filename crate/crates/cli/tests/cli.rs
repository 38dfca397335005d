use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nscl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nscl")).args(args).current_dir(cwd).output().expect("runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str =
    r#"{"train": {"max_epochs_per_stage": 1, "scoring": {"dim": 8, "gamma": 0.4, "tau": 0.08, "tau_query": 0.25}}}"#;

fn four_object_scene(dir: &Path) -> std::path::PathBuf {
    let objects: Vec<String> = [("red", 0.1, 0.2), ("blue", 0.4, 0.8), ("red", 0.7, 0.5), ("green", 0.9, 0.1)]
        .iter()
        .map(|(c, x, y)| {
            format!(r#"{{"color":"{c}","shape":"cube","size":"small","material":"rubber","x":{x},"y":{y}}}"#)
        })
        .collect();
    let path = dir.join("scene.jsonl");
    fs::write(&path, format!("{{\"schema\":1,\"id\":0,\"seed\":3,\"objects\":[{}]}}\n", objects.join(","))).unwrap();
    path
}

#[test]
fn query_trace_prints_a_mask_per_object() {
    let dir = tempfile::tempdir().unwrap();
    let scene = four_object_scene(dir.path());
    let o = nscl(
        &["query", "--scene", scene.to_str().unwrap(), "--question", "How many red things are there?", "--trace"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let filter = out.lines().find(|l| l.contains(" filter ")).expect("filter node in trace");
    assert!(filter.contains("mask[4] 1.0000 0.0000 1.0000 0.0000"), "{filter}");
    assert!(out.contains("answer: 2"), "{out}");
}

#[test]
fn gen_is_byte_identical_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b", "c"] {
        let seed = if out == "c" { "8" } else { "7" };
        let o = nscl(&["gen", "--seed", seed, "--size", "40", "--captions", "10", "--out", out], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["scenes.jsonl", "qa.jsonl", "captions.jsonl"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        assert_eq!(a, fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
        assert_ne!(a, fs::read(dir.path().join("c").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn missing_data_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = nscl(&["train", "--out", "t"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--data"), "{}", stderr(&o));
    assert!(!dir.path().join("t").exists());
}

#[test]
fn unknown_subcommand_flag_and_suite_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["frobnicate"][..], &["gen", "--out", "x", "--bogus"], &["suite", "nope", "--out", "x"]] {
        let o = nscl(args, dir.path());
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(stderr(&o).contains("Usage") || stderr(&o).contains("unknown suite"), "{}", stderr(&o));
    }
    fs::write(dir.path().join("bad.json"), "{ not json").unwrap();
    let o = nscl(&["--config", "bad.json", "gen", "--out", "x"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn runtime_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = nscl(&["eval", "--checkpoint", "missing.json", "--data", "nowhere", "--out", "e"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("missing.json"));
}

#[test]
fn train_eval_export_round_trip_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("tiny.json"), TINY).unwrap();
    assert!(nscl(&["gen", "--out", "data", "--size", "45", "--captions", "12"], p).status.success());
    for run in ["t1", "t2"] {
        let o = nscl(&["--config", "tiny.json", "train", "--data", "data", "--out", run], p);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(fs::read(p.join("t1/checkpoint.json")).unwrap(), fs::read(p.join("t2/checkpoint.json")).unwrap());
    assert_eq!(fs::read(p.join("t1/curve.csv")).unwrap(), fs::read(p.join("t2/curve.csv")).unwrap());
    for run in ["e1", "e2"] {
        let o = nscl(&["--jobs", "1", "eval", "--checkpoint", "t1/checkpoint.json", "--data", "data", "--out", run], p);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let metrics = fs::read_to_string(p.join("e1/metrics.csv")).unwrap();
    assert_eq!(metrics, fs::read_to_string(p.join("e2/metrics.csv")).unwrap());
    assert!(metrics.starts_with("model,split,fraction,question_type,n,correct,accuracy\n"));
    assert!(metrics.contains("concept,captions,1.0,overall,12,"));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p.join("e1/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "eval");
    assert!(manifest["datasets"]["qa.jsonl"].as_str().unwrap().starts_with("sha256:"));
    assert!(manifest["outputs"]["metrics.csv"].is_string());
    let o = nscl(&["export", "--metrics", "e1/metrics.csv", "--out", "x"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("x/metrics.json")).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), metrics.lines().count() - 1);
}

#[test]
fn outputs_stay_inside_out() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert!(nscl(&["gen", "--out", "only", "--size", "9", "--captions", "3"], p).status.success());
    let mut entries: Vec<String> =
        fs::read_dir(p).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    entries.sort();
    assert_eq!(entries, vec!["only"]);
    let mut files: Vec<String> =
        fs::read_dir(p.join("only")).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    files.sort();
    assert_eq!(files, vec!["captions.jsonl", "manifest.json", "qa.jsonl", "scenes.jsonl"]);
}

#[test]
fn plan_prints_the_minimal_plan() {
    let dir = tempfile::tempdir().unwrap();
    let state = r#"{"objects": [
        {"color":"red","shape":"cube","size":"small","material":"rubber","x":0.5,"y":0.5},
        {"color":"blue","shape":"sphere","size":"large","material":"metal","x":0.3,"y":0.7}]}"#;
    fs::write(dir.path().join("state.json"), state).unwrap();
    let o = nscl(&["plan", "--state", "state.json", "--goal", "left(a,b) & red(a)", "--out", "p"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "1. pick(a)\n2. put-left-of(a,b)\n");
    assert!(dir.path().join("p/manifest.json").exists());
    let o = nscl(&["plan", "--state", "state.json", "--goal", "blue(a)"], dir.path());
    assert_eq!(stdout(&o), "no plan within 4 steps\n");
    let o = nscl(&["plan", "--state", "state.json", "--goal", "shiny(a)"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fewshot_adds_a_concept_to_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("tiny.json"), TINY).unwrap();
    assert!(nscl(&["gen", "--out", "data", "--size", "30", "--captions", "0"], p).status.success());
    assert!(nscl(&["--config", "tiny.json", "train", "--data", "data", "--out", "t"], p).status.success());
    let o = nscl(
        &[
            "--config",
            "tiny.json",
            "fewshot",
            "--checkpoint",
            "t/checkpoint.json",
            "--word",
            "teal",
            "--steps",
            "5",
            "--data",
            "data",
            "--out",
            "f",
        ],
        p,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = fs::read_to_string(p.join("f/metrics.csv")).unwrap();
    assert!(metrics.contains("concept,probe,1.0,concept:teal,"));
    assert!(metrics.contains("eval-before") && metrics.contains("eval-after"));
    let o = nscl(&["fewshot", "--checkpoint", "f/checkpoint.json", "--word", "teal", "--out", "g"], p);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("already bound"), "{}", stderr(&o));
}
