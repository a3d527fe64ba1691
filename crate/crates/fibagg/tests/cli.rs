//! End-to-end tests of the `fibagg` binary: real files, real process,
//! asserted exit codes (0 ok, 2 parse, 3 equivalence, 4 oracle, 5 I/O).

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fibagg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(path: &Path, content: &str) {
    fs::write(path, content).unwrap();
}

const SAMPLE_RIB: &str = "\
141.92.0.0/16 1
141.92.64.0/18 1
141.92.0.0/19 1
141.92.192.0/19 2
141.92.224.0/19 2
";

#[test]
fn aggregate_writes_the_golden_table_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let rib = dir.path().join("sample.fib");
    let out = dir.path().join("aggregated.fib");
    let stats = dir.path().join("stats.json");
    write(&rib, SAMPLE_RIB);

    let output = run(&[
        "aggregate",
        "--rib",
        rib.to_str().unwrap(),
        "--family",
        "v4",
        "--out",
        out.to_str().unwrap(),
        "--stats",
        stats.to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );

    let table = fs::read_to_string(&out).unwrap();
    assert_eq!(table, "141.92.0.0/16 1\n141.92.192.0/18 2\n");

    let stats: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&stats).unwrap()).unwrap();
    assert_eq!(stats["ratio"], 0.4);
    assert_eq!(stats["n_u"], 0);
    assert!(stats["mem_bytes"].as_u64().unwrap() > 0);
}

#[test]
fn aggregate_missing_input_is_an_io_failure() {
    let dir = tempfile::tempdir().unwrap();
    let output = run(&[
        "aggregate",
        "--rib",
        dir.path().join("absent.fib").to_str().unwrap(),
        "--family",
        "v4",
        "--out",
        dir.path().join("out.fib").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(5));
}

#[test]
fn aggregate_rejects_malformed_input() {
    let dir = tempfile::tempdir().unwrap();
    let rib = dir.path().join("bad.fib");
    write(&rib, "10.0.0.0/8 1\nnot a route\n");
    let output = run(&[
        "aggregate",
        "--rib",
        rib.to_str().unwrap(),
        "--family",
        "v4",
        "--out",
        dir.path().join("out.fib").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("line 2"), "stderr: {stderr}");
}

#[test]
fn replay_reports_the_update_and_its_burst() {
    let dir = tempfile::tempdir().unwrap();
    let rib = dir.path().join("sample.fib");
    let trace = dir.path().join("trace.upd");
    let report = dir.path().join("report.json");
    write(&rib, SAMPLE_RIB);
    write(&trace, "A 141.92.0.0/16 2\n");

    let output = run(&[
        "replay",
        "--rib",
        rib.to_str().unwrap(),
        "--updates",
        trace.to_str().unwrap(),
        "--family",
        "v4",
        "--report",
        report.to_str().unwrap(),
        "--oracle-every",
        "1",
        "--series-every",
        "1",
    ]);
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );

    let report_json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(report_json["n_u"], 1);
    assert_eq!(report_json["n_c"], 4);
    assert_eq!(report_json["b_max"], 4);

    let series = fs::read_to_string(report.with_extension("series.csv")).unwrap();
    let mut lines = series.lines();
    assert_eq!(
        lines.next().unwrap(),
        "update_index,original_size,aggregated_size,cumulative_us,cumulative_changes"
    );
    let sample = lines.next().unwrap();
    // One sample for the single update; the table still holds 5 routes
    // aggregated to 3 entries after the hop change on the /16.
    assert!(sample.starts_with("1,5,3,"), "sample: {sample}");

    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("updates"), "stdout: {stdout}");
}

#[test]
fn replay_rejects_a_malformed_trace_line() {
    let dir = tempfile::tempdir().unwrap();
    let rib = dir.path().join("sample.fib");
    let trace = dir.path().join("trace.upd");
    write(&rib, SAMPLE_RIB);
    write(&trace, "A 141.92.0.0/16 2\nZ nope\n");

    let output = run(&[
        "replay",
        "--rib",
        rib.to_str().unwrap(),
        "--updates",
        trace.to_str().unwrap(),
        "--family",
        "v4",
        "--report",
        dir.path().join("report.json").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("line 2"), "stderr: {stderr}");
}

#[test]
fn verify_accepts_the_aggregated_table() {
    let dir = tempfile::tempdir().unwrap();
    let rib = dir.path().join("sample.fib");
    let aggregated = dir.path().join("aggregated.fib");
    write(&rib, SAMPLE_RIB);
    write(&aggregated, "141.92.0.0/16 1\n141.92.192.0/18 2\n");

    let output = run(&[
        "verify",
        "--rib",
        rib.to_str().unwrap(),
        "--aggregated",
        aggregated.to_str().unwrap(),
        "--family",
        "v4",
    ]);
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("forwarding-equivalent"), "stdout: {stdout}");
}

#[test]
fn verify_accepts_the_compressed_variant() {
    let dir = tempfile::tempdir().unwrap();
    let rib = dir.path().join("sample.fib");
    let compressed = dir.path().join("compressed.fib");
    write(&rib, SAMPLE_RIB);
    write(
        &compressed,
        "141.92.0.0/16 1\n141.92.192.0/19 2\n141.92.224.0/19 2\n",
    );

    let output = run(&[
        "verify",
        "--rib",
        rib.to_str().unwrap(),
        "--aggregated",
        compressed.to_str().unwrap(),
        "--family",
        "v4",
    ]);
    assert!(output.status.success());
}

#[test]
fn verify_rejects_a_rerouted_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let rib = dir.path().join("sample.fib");
    let broken = dir.path().join("broken.fib");
    write(&rib, SAMPLE_RIB);
    // The /18 entry routes to hop 1 instead of 2.
    write(&broken, "141.92.0.0/16 1\n141.92.192.0/18 1\n");

    let output = run(&[
        "verify",
        "--rib",
        rib.to_str().unwrap(),
        "--aggregated",
        broken.to_str().unwrap(),
        "--family",
        "v4",
    ]);
    assert_eq!(output.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("141.92.192"), "stderr: {stderr}");
}

#[test]
fn fuzz_passes_and_is_deterministic() {
    let args = [
        "fuzz",
        "--width",
        "8",
        "--updates",
        "1500",
        "--hops",
        "4",
        "--seed",
        "7",
    ];
    let first = run(&args);
    let second = run(&args);
    assert!(
        first.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&first.stderr)
    );
    assert!(second.status.success());
    assert_eq!(first.stdout, second.stdout);
    let stdout = String::from_utf8_lossy(&first.stdout);
    assert!(stdout.starts_with("fuzz width=8"), "stdout: {stdout}");
    assert!(stdout.contains("ok:"), "stdout: {stdout}");
}

#[test]
fn fuzz_rejects_out_of_range_widths() {
    let too_wide = run(&[
        "fuzz",
        "--width",
        "17",
        "--updates",
        "1",
        "--hops",
        "1",
        "--seed",
        "1",
    ]);
    assert_eq!(too_wide.status.code(), Some(2));
    let too_narrow = run(&[
        "fuzz",
        "--width",
        "3",
        "--updates",
        "1",
        "--hops",
        "1",
        "--seed",
        "1",
    ]);
    assert_eq!(too_narrow.status.code(), Some(2));
}
