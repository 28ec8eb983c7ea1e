use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[sweep]
start = 5.0
stop = 7.0
events_per_step = 4096
window = 4096

[qkd]
events = 8192
"#;

fn tdcsim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tdcsim"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    fs::write(&path, SMALL).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn tempsweep_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = tdcsim(out, &["--config", &cfg, "tempsweep"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ta = fs::read_to_string(a.join("tempsweep.csv")).unwrap();
    let tb = fs::read_to_string(b.join("tempsweep.csv")).unwrap();
    assert_eq!(ta, tb);
    assert_eq!(ta.lines().count(), 1 + 3 * 4);
    assert!(ta.lines().next().unwrap().ends_with("spec_hash,seed"));
}

#[test]
fn same_out_dir_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let run = || {
        let o = tdcsim(dir.path(), &["--config", &cfg, "--seed", "9", "tempsweep"]);
        assert!(o.status.success());
        fs::read(dir.path().join("tempsweep.csv")).unwrap()
    };
    let first = run();
    assert_eq!(first, run());
    assert!(String::from_utf8(first)
        .unwrap()
        .lines()
        .nth(1)
        .unwrap()
        .ends_with(",9"));
}

#[test]
fn json_output_carries_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = tdcsim(dir.path(), &["--config", &cfg, "--format", "json", "calib-compare"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("calib_compare.json")).unwrap()).unwrap();
    assert_eq!(v["provenance"]["seed"], 2024);
    assert_eq!(v["provenance"]["spec_hash"].as_str().unwrap().len(), 16);
    assert!(v["chi_square"].as_f64().unwrap() < 0.1);
}

#[test]
fn qkd_writes_scan_and_pulse() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = tdcsim(dir.path(), &["--config", &cfg, "qkd", "--routing-error", "0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let scan = fs::read_to_string(dir.path().join("qkd_scan.csv")).unwrap();
    for line in scan.lines().skip(1) {
        assert_eq!(line.split(',').nth(1), Some("0"), "{line}");
    }
    assert!(dir.path().join("qkd_pulse.csv").exists());
}

#[test]
fn simulate_then_analyze_capture() {
    let dir = tempfile::tempdir().unwrap();
    let o = tdcsim(
        dir.path(),
        &["simulate", "--source", "ring_oscillator", "--events", "50000"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let capture = dir.path().join("simulate.ttag");
    assert_eq!(fs::metadata(&capture).unwrap().len(), 16 + 8 * 50_000);
    let o = tdcsim(dir.path(), &["analyze", "--input", capture.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("capture_linearity.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 132);
    let dnl_sum: f64 = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(4).unwrap().parse::<f64>().unwrap())
        .sum();
    assert!(dnl_sum.abs() < 1e-9);
}

#[test]
fn stream_bench_small_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = tdcsim(dir.path(), &["stream-bench", "--records", "20000"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("stream_bench.csv")).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "20000");
    assert_eq!(row[1], "20000");
    assert_eq!(row[2], "0");
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[sweep]\nstep = -1.0\n").unwrap();
    for args in [
        vec!["--config", bad.to_str().unwrap(), "tempsweep"],
        vec!["--config", "/does/not/exist.toml", "tempsweep"],
        vec!["tempsweep", "--strategies", "fixed_ro_5C,bogus"],
        vec!["no-such-command"],
    ] {
        let o = tdcsim(dir.path(), &args);
        assert_eq!(
            o.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
}

#[test]
fn runtime_failures_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.ttag");
    fs::write(&junk, b"not a capture file").unwrap();
    let o = tdcsim(dir.path(), &["analyze", "--input", junk.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}
