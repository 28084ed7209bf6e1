use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn fcog(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fcog")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn example_rules() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/assets/example_rules.frl")
        .display()
        .to_string()
}

fn p(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).display().to_string()
}

fn synth_into(dir: &TempDir) {
    let out = fcog(&[
        "synth", "--output", &p(dir, "world"),
        "--set", "num_sequences=6", "--set", "sequence_length=50",
        "--set", "num_train_sequences=20", "--set", "seed=3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_run_eval_round_trip_is_deterministic() {
    let dir = TempDir::new().unwrap();
    synth_into(&dir);
    let stream = p(&dir, "world/stream.jsonl");
    let ann = p(&dir, "world/annotations.jsonl");
    for run in ["r1", "r2"] {
        let out = fcog(&[
            "run", "--input", &stream, "--output", &p(&dir, run),
            "--set", &format!("annotations=\"{ann}\""),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for file in ["cognition.jsonl", "outcomes.jsonl", "output.jsonl", "meta.json"] {
        let a = fs::read(dir.path().join("r1").join(file)).unwrap();
        let b = fs::read(dir.path().join("r2").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between runs");
    }
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("r1/meta.json")).unwrap()).unwrap();
    assert_eq!(meta["sequences"], 6);
    assert_eq!(meta["frames"], 300);
    assert_eq!(meta["cooccurrence_source"], "annotations");

    let out = fcog(&[
        "eval", "--before", &stream, "--after", &p(&dir, "r1/output.jsonl"),
        "--outcomes", &p(&dir, "r1/outcomes.jsonl"), "--taus", "0.1,0.3",
        "--json", &p(&dir, "report.json"),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["frames"], 300);
    assert_eq!(report["sweep"].as_array().map(Vec::len), Some(4));
}

#[test]
fn evaluating_a_stream_against_itself_changes_nothing() {
    let dir = TempDir::new().unwrap();
    synth_into(&dir);
    let stream = p(&dir, "world/stream.jsonl");
    let json = p(&dir, "same.json");
    let out = fcog(&["eval", "--before", &stream, "--after", &stream, "--json", &json]);
    assert!(out.status.success());
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(r["frame_accuracy_before"], r["frame_accuracy_after"]);
    assert_eq!(r["mean_ap_before"], r["mean_ap_after"]);
    assert_eq!((r["repaired"].as_u64(), r["broken"].as_u64()), (Some(0), Some(0)));
}

#[test]
fn mismatched_streams_are_data_errors() {
    let dir = TempDir::new().unwrap();
    synth_into(&dir);
    let stream = fs::read_to_string(dir.path().join("world/stream.jsonl")).unwrap();
    let short: String = stream.lines().skip(1).map(|l| format!("{l}\n")).collect();
    fs::write(dir.path().join("short.jsonl"), short).unwrap();
    let out = fcog(&["eval", "--before", &p(&dir, "world/stream.jsonl"), "--after", &p(&dir, "short.jsonl")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    let out = fcog(&["run", "--input", &p(&dir, "empty.jsonl"), "--output", &p(&dir, "o")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no sequences"));

    assert_eq!(fcog(&["run"]).status.code(), Some(1));
    assert_eq!(fcog(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(fcog(&["--help"]).status.code(), Some(0));
    assert_eq!(fcog(&["eval", "--before", "a", "--after", "b", "--taus", "0.1"]).status.code(), Some(2));
    let bad = fcog(&["run", "--input", &p(&dir, "empty.jsonl"), "--output", &p(&dir, "o"), "--set", "delta=7"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn bundled_rules_report_one_conflict_and_gaps() {
    let out = fcog(&["rules", "validate", &example_rules(), "--strict"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stdout(&out).contains("0 syntax, 0 unknown-label, 1 duplicate-antecedent-triple, 118 coverage-gap"));
    let lenient = fcog(&["rules", "validate", &example_rules()]);
    assert!(stdout(&lenient).contains("1 duplicate-antecedent-triple, 0 coverage-gap"));
}

#[test]
fn generated_rule_base_is_complete_and_valid() {
    let dir = TempDir::new().unwrap();
    let out = fcog(&["rules", "generate"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert_eq!(text.lines().filter(|l| l.starts_with("IF ")).count(), 125);
    fs::write(dir.path().join("gen.frl"), &text).unwrap();
    let check = fcog(&["rules", "validate", &p(&dir, "gen.frl"), "--strict"]);
    assert!(check.status.success(), "{}", stdout(&check));
    let shown = fcog(&["rules", "show", &p(&dir, "gen.frl")]);
    assert_eq!(stdout(&shown), text);
}
