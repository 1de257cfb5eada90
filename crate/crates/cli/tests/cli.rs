use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn corstitch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_corstitch"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, extra: &[&str]) -> String {
    let out = dir.to_str().unwrap();
    let mut args = vec!["synth", "--out", out];
    args.extend_from_slice(extra);
    let o = corstitch(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    dir.join("survey.toml").to_str().unwrap().to_string()
}

fn events(o: &Output) -> Vec<Value> {
    stderr(o)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap_or_else(|_| panic!("not JSON: {l}")))
        .collect()
}

#[test]
fn synth_then_verify_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let config = synth(&tmp.path().join("s"), &["--frames", "30"]);
    let o = corstitch(&["verify", "--config", &config, "--min-exact-rate", "1.0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["recovery"]["exact_rate"], 1.0);
    assert_eq!(report["recovery"]["pairs"], 29);
    for check in report["oracle"].as_array().unwrap() {
        assert!(check["max_relative_difference"].as_f64().unwrap() < 1e-6);
    }
}

#[test]
fn run_at_defaults_gives_one_mosaic_and_archive() {
    let tmp = tempfile::tempdir().unwrap();
    let config = synth(&tmp.path().join("s"), &[]);
    let out = tmp.path().join("out");
    let o = corstitch(&["run", "--config", &config, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("frames in: 150"), "{text}");
    assert!(text.contains("mosaics: 1\n"), "{text}");
    assert!(text.contains("archives: 1\n"), "{text}");
    for stage in ["ingest", "stitch", "georef", "kmz"] {
        assert!(text.contains(&format!("time {stage}:")), "{text}");
    }
    assert!(out.join("transect_synthetic_batch_000.kmz").is_file());

    // structured logs carry the counts
    let done = events(&o)
        .into_iter()
        .find(|e| e["msg"] == "stitch complete")
        .expect("stitch event");
    assert_eq!(done["frames_in"], 150);
    assert_eq!(done["accepted"], 149);
    assert_eq!(done["rejected"], 0);
}

#[test]
fn missing_gps_is_an_ingest_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let config = synth(&tmp.path().join("s"), &["--frames", "5"]);
    let o = corstitch(&["run", "--config", &config, "--gps", "/nonexistent/gps.csv"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let last = events(&o).into_iter().rev().find(|e| e["level"] == "error").unwrap();
    assert_eq!(last["stage"], "ingest");
    assert_eq!(last["code"], 3);
    assert!(last["msg"].as_str().unwrap().starts_with("[ingest]"));

    let quiet = corstitch(&["run", "--config", &config, "--gps", "/nonexistent/gps.csv", "--log-level", "off"]);
    assert_eq!(quiet.status.code(), Some(3));
    assert!(stderr(&quiet).starts_with("error: [ingest]"));
}

#[test]
fn stitch_then_georef_matches_run() {
    let tmp = tempfile::tempdir().unwrap();
    let config = synth(&tmp.path().join("s"), &["--frames", "200", "--dx", "1", "--dy", "-5"]);
    let full = tmp.path().join("full");
    let split = tmp.path().join("split");
    let o = corstitch(&["run", "--config", &config, "--out", full.to_str().unwrap(), "--batch", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for step in ["stitch", "georef"] {
        let o = corstitch(&[step, "--config", &config, "--out", split.to_str().unwrap(), "--batch", "1"]);
        assert!(o.status.success(), "{step}: {}", stderr(&o));
    }
    let names = ["manifest.jsonl", "quads.jsonl", "mosaics/mosaic_00000.png", "mosaics/mosaic_00001.png",
        "transect_synthetic_batch_000.kmz", "transect_synthetic_batch_001.kmz"];
    for name in names {
        let a = fs::read(full.join(name)).unwrap();
        let b = fs::read(split.join(name)).unwrap();
        assert!(a == b, "{name} differs");
    }
}

#[test]
fn georef_reports_time_outside_coverage() {
    let tmp = tempfile::tempdir().unwrap();
    let config = synth(&tmp.path().join("s"), &["--frames", "20"]);
    let out = tmp.path().join("out");
    let out_s = out.to_str().unwrap();
    assert!(corstitch(&["stitch", "--config", &config, "--out", out_s]).status.success());

    let manifest = out.join("manifest.jsonl");
    let mut record: Value = serde_json::from_str(fs::read_to_string(&manifest).unwrap().lines().next().unwrap()).unwrap();
    record["end_time"] = Value::from(9999.0);
    fs::write(&manifest, format!("{record}\n")).unwrap();

    let o = corstitch(&["georef", "--config", &config, "--out", out_s]);
    assert_eq!(o.status.code(), Some(5));
    assert!(stderr(&o).contains("time outside GPS coverage"), "{}", stderr(&o));
}

#[test]
fn manifest_version_mismatch_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let config = synth(&tmp.path().join("s"), &["--frames", "10"]);
    let out = tmp.path().join("out");
    let out_s = out.to_str().unwrap();
    assert!(corstitch(&["stitch", "--config", &config, "--out", out_s]).status.success());
    let manifest = out.join("manifest.jsonl");
    let text = fs::read_to_string(&manifest).unwrap().replace("\"version\":1", "\"version\":2");
    fs::write(&manifest, text).unwrap();
    let o = corstitch(&["georef", "--config", &config, "--out", out_s]);
    assert_eq!(o.status.code(), Some(7));
    assert!(stderr(&o).contains("manifest version 2"), "{}", stderr(&o));
}

#[test]
fn rejected_frames_show_in_logs() {
    let tmp = tempfile::tempdir().unwrap();
    // the scene moves down, so every candidate is rejected; 8 frames keep
    // the stale-reference shift (up to 21 rows) inside the 48-row strip
    let config = synth(&tmp.path().join("s"), &["--frames", "8", "--dy", "3"]);
    let o = corstitch(&["stitch", "--config", &config, "--out", tmp.path().join("out").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let done = events(&o).into_iter().find(|e| e["msg"] == "stitch complete").unwrap();
    assert_eq!(done["rejected"], 7);
    assert_eq!(done["accepted"], 0);
}

#[test]
fn literal_mode_and_overrides_apply() {
    let tmp = tempfile::tempdir().unwrap();
    let config = synth(&tmp.path().join("s"), &["--frames", "40", "--heading", "0"]);
    let out = tmp.path().join("out");
    let o = corstitch(&[
        "run", "--config", &config, "--out", out.to_str().unwrap(),
        "--offset-mode", "literal", "--width-m", "4", "--mosaic-time", "0.5", "--threads", "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("mosaics: 3\n"), "{}", stdout(&o));
    let quad: Value = serde_json::from_str(fs::read_to_string(out.join("quads.jsonl")).unwrap().lines().next().unwrap()).unwrap();
    // literal mode puts the whole width offset into latitude
    let c = &quad["corners"];
    assert_eq!(c[0][1], c[1][1]);
    let dlat = (c[0][0].as_f64().unwrap() - c[1][0].as_f64().unwrap()).abs();
    assert!((dlat - 4.0 / 6_371_000.0 * 180.0 / std::f64::consts::PI).abs() < 1e-12);
}

#[test]
fn bad_flag_values_are_usage_errors() {
    let o = corstitch(&["run", "--offset-mode", "north"]);
    assert_eq!(o.status.code(), Some(2));
    let o = corstitch(&["run", "--fps", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("[config]"));
}
