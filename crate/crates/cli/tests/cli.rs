use std::path::Path;
use std::process::{Command, Output};

fn approxnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_approxnet")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_and_usage_errors() {
    let o = approxnet(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["gen-data", "tune", "profile", "calibrate", "run-adaptive", "report"] {
        assert!(text.contains(sub), "help lacks {sub}");
    }
    assert_eq!(approxnet(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(approxnet(&["tune"]).status.code(), Some(2));
    assert_eq!(approxnet(&["--clock", "sundial", "report", "x"]).status.code(), Some(2));
}

#[test]
fn missing_inputs_name_the_path() {
    let o = approxnet(&["gen-data", "--spec", "/nonexistent/spec.toml", "--out", "/tmp/never"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/nonexistent/spec.toml"), "{}", stderr(&o));

    let o = approxnet(&["report", "/nonexistent/r.json", "--out-dir", "/tmp/never"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/nonexistent/r.json"), "{}", stderr(&o));
}

#[test]
fn bad_spec_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("bad.toml");
    std::fs::write(&spec, "classes = 3\nbogus = 1\n").unwrap();
    let o = approxnet(&["gen-data", "--spec", spec.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.toml"), "{}", stderr(&o));
}

fn ok(args: &[&str]) {
    let o = approxnet(args);
    assert!(o.status.success(), "{args:?}: {}", stderr(&o));
}

#[test]
fn tiny_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_string_lossy().into_owned();
    let spec = concat!(env!("CARGO_MANIFEST_DIR"), "/data/tiny.toml");
    ok(&["gen-data", "--spec", spec, "--out", &p("")]);
    for f in ["trace.jsonl", "validation.jsonl", "test.jsonl", "model/graph.json"] {
        assert!(Path::new(&p(f)).exists(), "{f} missing");
    }
    let model = p("model");
    ok(&["tune", "--model", &model, "--data", &p("validation.jsonl"), "--out", &p("c.jsonl"), "--iterations", "20"]);
    ok(&[
        "profile", "--model", &model, "--data", &p("test.jsonl"), "--configs", &p("c.jsonl"), "--out", &p("p.jsonl"),
        "--batch-size", "20",
    ]);
    ok(&[
        "calibrate", "--model", &model, "--data", &p("validation.jsonl"), "--profile-data", &p("test.jsonl"),
        "--configs", &p("p.jsonl"), "--out", &p("k.jsonl"), "--batch-size", "20",
    ]);
    ok(&[
        "run-adaptive", "--model", &model, "--configs", &p("k.jsonl"), "--trace", &p("trace.jsonl"), "--strategy",
        "state-driven", "--mode", "exponential", "--out", &p("r.json"),
    ]);
    ok(&[
        "run-adaptive", "--model", &model, "--configs", &p("k.jsonl"), "--trace", &p("trace.jsonl"), "--strategy",
        "pinned", "--rung", "0", "--out", &p("pinned.json"),
    ]);
    let o = approxnet(&["report", &p("r.json"), &p("pinned.json"), "--out-dir", &p("rep")]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("state_driven/3/2/exponential") && table.contains("pinned/0"), "{table}");
    let pinned = approxnet_core::stream::read_report(p("pinned.json")).unwrap();
    assert_eq!(pinned.relative_cost, 1.0);
    assert_eq!(pinned.agreement_with_baseline, 1.0);
    for f in ["rep/r.csv", "rep/r.svg", "rep/pinned.csv", "rep/summary.txt"] {
        assert!(Path::new(&p(f)).exists(), "{f} missing");
    }
}
