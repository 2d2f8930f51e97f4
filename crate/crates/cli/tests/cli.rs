use std::io::{BufRead, BufReader};
use std::path::PathBuf;
use std::process::{Command, Output, Stdio};
use std::time::Duration;

use sensebus::gateway::{AdapterConfig, Gateway};
use sensebus::{Bus, Registry, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sensebus"))
}

fn core_fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(rel)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

#[test]
fn bench_writes_paired_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let o = run(&["bench", "--services", "2", "--messages", "3", "--reps", "2", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut r = csv::Reader::from_path(&out).unwrap();
    let h = r.headers().unwrap().clone();
    let col = |name: &str| h.iter().position(|c| c == name).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(&rows[0][col("transport")], "MIDDLEWARE");
    assert_eq!(&rows[1][col("transport")], "BASELINE");
    assert!(rows[0][col("perf_rate_pct")].parse::<f64>().is_ok());
    assert!(rows[0][col("run_2")].parse::<f64>().unwrap() > 0.0);
}

#[test]
fn single_transport_goes_to_stdout() {
    let o = run(&["bench", "--transport", "baseline", "--reps", "1", "--sequential"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().nth(1).unwrap().contains("BASELINE,sequential"), "{text}");
}

#[test]
fn bad_specs_exit_2() {
    assert_eq!(run(&["bench", "--services", "0"]).status.code(), Some(2));
    assert_eq!(run(&["bench", "--transport", "carrier-pigeon"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let rules = dir.path().join("bad.rules");
    std::fs::write(&rules, "RULE: R IF\n").unwrap();
    let o = run(&[
        "scenario",
        "--rules",
        rules.to_str().unwrap(),
        "--fixtures",
        core_fixture("stubs").to_str().unwrap(),
        "--script",
        core_fixture("scripts/conversation.script").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_3() {
    let o = run(&["bench", "--reps", "1", "--out", "/nonexistent-dir/r.csv"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn scenario_prints_the_golden_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.txt");
    let o = run(&[
        "scenario",
        "--rules",
        core_fixture("rules/conversation.rules").to_str().unwrap(),
        "--fixtures",
        core_fixture("stubs").to_str().unwrap(),
        "--script",
        core_fixture("scripts/conversation.script").to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read_to_string(trace).unwrap(),
        std::fs::read_to_string(core_fixture("traces/conversation.txt")).unwrap()
    );
}

#[test]
fn gateway_echo_serves_a_bridged_contract() {
    let mut child = bin()
        .args(["gateway-echo", "--listen", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").unwrap().to_string();

    let bus = Bus::new();
    let reg = Registry::new(&bus);
    let gw = Gateway::new(&reg);
    gw.bridge(&AdapterConfig::new(addr, "Far")).unwrap();
    let r = bus.request("Far", "echo", vec![Value::text("ping")], Duration::from_secs(5));
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(r.unwrap().payload(), &Value::text("ping"));
}
