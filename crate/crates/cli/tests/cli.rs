use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lorprod"));
    c.env_remove("LORPROD_OUT");
    c
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const SMALL: &str = r#"{
  "base": {"path": {"nodes": 5, "edge_length": 0.1}},
  "family": {"interval": [0, 1], "rho": {"form": "constant", "value": 1}},
  "grid": {"steps": 10},
  "tasks": [
    {"kind": "tau", "pairs": [{"from": {"layer": 0, "node": 2}, "to": {"layer": 10, "node": 2}, "expected": 1.0}]},
    {"kind": "maximizer", "from": {"layer": 0, "node": 0}, "to": {"layer": 10, "node": 4}}
  ]
}"#;

#[test]
fn empty_scenario_exits_zero_with_empty_report() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&["run", scenario("empty.json").to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["tasks"], serde_json::json!([]));
}

#[test]
fn schema_violations_exit_two_with_pointer() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", &SMALL.replace("\"pairs\"", "\"pears\""));
    let o = run(&["run", bad.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/tasks/0"));
    let missing = write(dir.path(), "missing.json", &SMALL.replace("\"node\": 4", "\"node\": 9"));
    let o = run(&["run", missing.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/tasks/1/to/node"));
    let o = run(&["run", dir.path().join("absent.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["tcd", write(dir.path(), "s.json", SMALL).to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace(
        "\"tasks\": [",
        "\"tasks\": [{\"kind\": \"regularity\", \"name\": \"steep\", \"pairs\": 5, \"curve\": {\"samples\": [[0.0, 0], [0.1, 4]]}},",
    );
    let s = write(dir.path(), "s.json", &text);
    let o = run(&["run", s.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("task steep failed"));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("o/report.json")).unwrap()).unwrap();
    assert_eq!(report["errors"], serde_json::json!(["steep"]));
}

#[test]
fn unwritable_directory_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let s = write(dir.path(), "s.json", SMALL);
    let blocker = write(dir.path(), "file", "");
    let o = run(&["run", s.to_str().unwrap(), "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn gating_failure_exits_one_and_names_the_task() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify-lip", scenario("holder_bubble.json").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("verify-lip"));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    let r = &report["tasks"][0]["result"];
    assert_eq!(r["verdict"], "fail");
    assert!((r["fitted_exponent"].as_f64().unwrap() - 0.5).abs() < 0.1);
    // the same failing verdict without gating
    let s = fs::read_to_string(scenario("holder_bubble.json")).unwrap().replace("\"gating\": true", "\"gating\": false");
    let s = write(dir.path(), "s.json", &s);
    let o = run(&["verify-lip", s.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn pushup_refuses_uncertified_family_unless_forced() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario("holder_bubble.json");
    let o = run(&["pushup", s.to_str().unwrap(), "--out", dir.path().join("a").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("a/report.json")).unwrap()).unwrap();
    assert_eq!(report["tasks"][0]["result"]["refused"], true);
    let o = run(&["pushup", s.to_str().unwrap(), "--force", "--out", dir.path().join("b").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("b/report.json")).unwrap()).unwrap();
    let r = &report["tasks"][0]["result"];
    assert_eq!(r["forced"], true);
    assert_eq!(r["chains"], 20);
}

#[test]
fn subcommand_runs_only_its_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let s = write(dir.path(), "s.json", SMALL);
    let o = run(&["maximizer", s.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(dir.path().join("o/maximizer.csv").exists());
    assert!(!dir.path().join("o/tau_table.csv").exists());
}

#[test]
fn tau_table_header_and_values() {
    let dir = tempfile::tempdir().unwrap();
    let s = write(dir.path(), "s.json", SMALL);
    let o = run(&["tau", s.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("tau_table.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("layer,node,tau,pred"));
    assert!(csv.lines().any(|l| l == "10,2,1,2"));
}

#[test]
fn output_directory_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let with_dir = SMALL.replacen('{', &format!("{{\"output_dir\": {:?},", dir.path().join("from_scenario")), 1);
    let s = write(dir.path(), "s.json", &with_dir);
    let plain = write(dir.path(), "p.json", SMALL);
    let env_dir = dir.path().join("from_env");
    let o = bin().args(["run", plain.to_str().unwrap()]).env("LORPROD_OUT", &env_dir).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(env_dir.join("report.json").exists());
    let o = bin().args(["run", s.to_str().unwrap()]).env("LORPROD_OUT", &env_dir).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(dir.path().join("from_scenario/report.json").exists());
    let flag = dir.path().join("from_flag");
    let o = bin().args(["run", s.to_str().unwrap(), "--out", flag.to_str().unwrap()]).env("LORPROD_OUT", &env_dir).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(flag.join("report.json").exists());
}

fn bundle(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario("exp_weighted.json");
    for sub in ["a", "b"] {
        run(&["run", s.to_str().unwrap(), "--seed", "11", "--out", dir.path().join(sub).to_str().unwrap()]);
    }
    assert_eq!(bundle(&dir.path().join("a")), bundle(&dir.path().join("b")));
    run(&["run", s.to_str().unwrap(), "--seed", "12", "--out", dir.path().join("c").to_str().unwrap()]);
    assert_ne!(bundle(&dir.path().join("a")), bundle(&dir.path().join("c")));
}

#[test]
fn removing_a_task_leaves_other_outputs_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let full = fs::read_to_string(scenario("exp_weighted.json")).unwrap();
    let mut doc: serde_json::Value = serde_json::from_str(&full).unwrap();
    let all = write(dir.path(), "all.json", &full);
    doc["tasks"].as_array_mut().unwrap().remove(1);
    let fewer = write(dir.path(), "fewer.json", &doc.to_string());
    run(&["run", all.to_str().unwrap(), "--out", dir.path().join("all").to_str().unwrap()]);
    run(&["run", fewer.to_str().unwrap(), "--out", dir.path().join("fewer").to_str().unwrap()]);
    let a: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("all/report.json")).unwrap()).unwrap();
    let f: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("fewer/report.json")).unwrap()).unwrap();
    let (a, f) = (a["tasks"].as_array().unwrap(), f["tasks"].as_array().unwrap());
    assert_eq!(f.len(), a.len() - 1);
    assert_eq!(&f[0], &a[0]);
    assert_eq!(&f[1..], &a[2..]);
    for (name, bytes) in bundle(&dir.path().join("fewer")) {
        if name != "report.json" {
            assert_eq!(fs::read(dir.path().join("all").join(&name)).unwrap(), bytes, "{name}");
        }
    }
}
