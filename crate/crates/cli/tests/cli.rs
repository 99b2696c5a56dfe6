use std::path::Path;
use std::process::{Command, Output};

fn freqgap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_freqgap")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = freqgap(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(freqgap(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(freqgap(&["count", "--window", "5"]).status.code(), Some(1));
    assert_eq!(freqgap(&["eval", "--bundles", "b", "--out", "o"]).status.code(), Some(1));
    assert_eq!(freqgap(&["--version"]).status.code(), Some(0));
}

#[test]
fn validate_reports_diagnostics_and_warnings() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"corpus":{"path":"c.jsonl","format":"jsonl"},"mock":"perfect","output_root":"o","window":1}"#).unwrap();
    let out = freqgap(&["validate", "--config", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("window"));

    let odd = dir.path().join("odd.json");
    std::fs::write(&odd, r#"{"corpus":{"path":"c.jsonl","format":"jsonl"},"mock":"perfect","output_root":"o","ks":[3]}"#).unwrap();
    let stdout = ok(&["validate", "--config", s(&odd)]);
    assert!(stdout.contains("warning: ks: 3"), "{stdout}");
}

#[test]
fn failing_stage_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"corpus":{"path":"missing.jsonl","format":"jsonl"},"mock":"perfect","output_root":"out"}"#).unwrap();
    let out = freqgap(&["run", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let out = freqgap(&["gen", "--counts", s(&dir.path().join("nope")), "--out", s(&dir.path().join("d"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn subcommands_chain_like_run() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    ok(&["demo", "--out", s(&p("demo.jsonl")), "--size", "1MB", "--seed", "4"]);
    ok(&["count", "--corpus", s(&p("demo.jsonl")), "--out", s(&p("pass1")), "--shards", "2"]);
    ok(&["gen", "--counts", s(&p("pass1")), "--tasks", "add,hour_min", "--out", s(&p("datasets"))]);
    assert!(p("datasets").join("add.jsonl").exists());
    ok(&["targets", "--datasets", s(&p("datasets")), "--out", s(&p("targets.txt"))]);
    ok(&["count", "--corpus", s(&p("demo.jsonl")), "--targets", s(&p("targets.txt")), "--out", s(&p("pass2"))]);
    ok(&["prompts", "--datasets", s(&p("datasets")), "--ks", "0,2", "--seeds", "2", "--out", s(&p("prompts"))]);
    assert!(p("prompts").join("add_k2_s1.jsonl").exists());
    ok(&["eval", "--bundles", s(&p("prompts")), "--mock", "perfect", "--counts", s(&p("pass2")), "--out", s(&p("eval"))]);
    ok(&[
        "analyze", "--records", s(&p("eval")), "--datasets", s(&p("datasets")), "--counts", s(&p("pass2")),
        "--ks", "0,2", "--out", s(&p("analysis")),
    ]);
    let csv = std::fs::read_to_string(p("analysis").join("report.csv")).unwrap();
    assert!(csv.starts_with("task_id,k,acc,gap_x1,"));
    assert!(csv.lines().any(|l| l.starts_with("add,2,100.0,0.0,")), "{csv}");

    let cfg = p("run.json");
    std::fs::write(
        &cfg,
        r#"{"corpus":{"path":"demo.jsonl","format":"jsonl"},"mock":"perfect","output_root":"run",
            "tasks":["add","hour_min"],"ks":[0,2],"seeds":2}"#,
    )
    .unwrap();
    ok(&["run", "--config", s(&cfg)]);
    // The pipeline and the hand-run chain agree on the report.
    let piped = std::fs::read_to_string(p("run/analysis/report.csv")).unwrap();
    assert_eq!(piped, csv);
    ok(&["compare", "--runs", s(&p("run")), s(&p("analysis")), "--out", s(&p("cmp"))]);
    assert!(std::fs::read_dir(p("cmp")).unwrap().count() >= 2);
}
