//! End-to-end runs of the installed binary: exit codes, error wording,
//! artifact shape, and byte-identical reruns.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_deltaproj"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin()
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary launches")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).to_string()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

#[test]
fn unknown_suite_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["verify", "bogus"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_budget_list_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["sweep", "--budgets", ""], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("usage error"));
}

#[test]
fn unreachable_budget_names_the_offender() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["sweep", "--budgets", "100"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    assert!(msg.contains("budget 100"), "got: {msg}");
    assert!(msg.contains("24x24"), "got: {msg}");
}

#[test]
fn unknown_preset_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["sweep", "--preset", "nope"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nope"));
}

#[test]
fn truncated_fixture_reports_the_byte_offset() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = run(&["gen-fixtures", "--out", "fx"], tmp.path());
    assert!(ok.status.success(), "{}", stderr(&ok));
    let z = tmp.path().join("fx/zpatch.dltn");
    let bytes = std::fs::read(&z).unwrap();
    std::fs::write(&z, &bytes[..bytes.len() / 2]).unwrap();
    let out = run(&["project", "--fixtures", "fx"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let msg = stderr(&out);
    assert!(msg.contains("format error at byte"), "got: {msg}");
    assert!(msg.contains("zpatch.dltn"), "got: {msg}");
}

#[test]
fn corrupt_hook_fails_the_windowed_check() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["verify", "attention", "--corrupt"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let text = stdout(&out);
    assert!(
        text.contains("FAIL attention.window_global"),
        "got: {text}"
    );
    assert!(text.contains("1 failed"), "got: {text}");
}

#[test]
fn fixture_config_mismatch_reports_both_shapes() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = run(&["gen-fixtures", "--out", "fx"], tmp.path());
    assert!(ok.status.success());
    // Fixtures were made for the desk feature width; ask for a projector
    // whose memory has a different width via a doctored config.
    let cfg = preset_text_with(&[("memory_tokens", "12")]);
    let cfg_path = tmp.path().join("short.cfg");
    std::fs::write(&cfg_path, cfg).unwrap();
    let out = run(
        &[
            "project",
            "--config",
            cfg_path.to_str().unwrap(),
            "--fixtures",
            "fx",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let msg = stderr(&out);
    assert!(msg.contains("[16, 64]"), "got: {msg}");
    assert!(msg.contains("12"), "got: {msg}");
}

/// The desk preset's text with chosen keys replaced.
fn preset_text_with(overrides: &[(&str, &str)]) -> String {
    let base = include_str!("../presets/desk.cfg");
    let mut out = String::new();
    for line in base.lines() {
        let key = line.split('=').next().unwrap_or("").trim();
        match overrides.iter().find(|(k, _)| *k == key) {
            Some((k, v)) => out.push_str(&format!("{k} = {v}\n")),
            None => {
                out.push_str(line);
                out.push('\n');
            }
        }
    }
    out
}

#[test]
fn sweep_json_carries_the_config_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["sweep", "--format", "json"], tmp.path());
    assert!(out.status.success());
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["version"], 1);
    assert!(doc["config_hash"].as_str().unwrap().len() == 16);
    assert_eq!(doc["rows"].as_array().unwrap().len(), 7);
    assert!(doc["constants"]["projector_macs_per_token"].as_u64().unwrap() > 0);
}

#[test]
fn sidecar_describes_the_run_without_wall_time() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run(&["gen-fixtures", "--out", "fx"], tmp.path()).status.success());
    let out = run(&["project", "--fixtures", "fx", "--out", "t.dltn"], tmp.path());
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).is_empty());
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("t.json")).unwrap()).unwrap();
    assert_eq!(doc["v"], 144);
    assert_eq!(doc["d_v"], 64);
    assert!(doc["wall_ms"].is_null());
    assert!(doc["total_macs"].as_u64().unwrap() > 0);
    let rows = doc["stage_trace"].as_array().unwrap();
    assert!(rows.len() >= 8);
    for row in rows {
        assert!(row["shape"].as_array().unwrap().len() == 2);
        assert!(row["macs"].as_u64().is_some());
    }
    // Timing is opt-in and lands only in the sidecar's excluded field.
    let timed = run(
        &["project", "--fixtures", "fx", "--out", "t2.dltn", "--timing"],
        tmp.path(),
    );
    assert!(timed.status.success());
    let doc2: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("t2.json")).unwrap())
            .unwrap();
    assert!(doc2["wall_ms"].as_f64().unwrap() > 0.0);
}

#[test]
fn fixtures_and_outputs_rerun_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    for dir in ["a", "b"] {
        assert!(run(&["gen-fixtures", "--out", dir, "--with-positions"], tmp.path())
            .status
            .success());
        assert!(run(
            &[
                "project",
                "--fixtures",
                dir,
                "--out",
                &format!("{dir}/tokens.dltn"),
            ],
            tmp.path()
        )
        .status
        .success());
    }
    for name in [
        "zpatch.dltn",
        "summary.dltn",
        "positions.dltn",
        "tokens.dltn",
        "tokens.json",
    ] {
        let a = std::fs::read(tmp.path().join("a").join(name)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs across reruns");
    }
}

#[test]
fn verify_report_is_rerun_identical_and_seeded() {
    let tmp = tempfile::tempdir().unwrap();
    let a = run(&["verify", "delta"], tmp.path());
    let b = run(&["verify", "delta"], tmp.path());
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    // A different seed redraws the sampled instances but keeps the shape.
    let c = run(&["verify", "delta", "--seed", "7"], tmp.path());
    assert!(c.status.success());
    assert_eq!(
        stdout(&a).lines().count(),
        stdout(&c).lines().count()
    );
}

#[test]
fn single_budget_row_matches_the_published_prefill() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["sweep", "--preset", "7b", "--budgets", "144"], tmp.path());
    assert!(out.status.success());
    let text = stdout(&out);
    let row = text.lines().nth(1).unwrap();
    let cells: Vec<&str> = row.split(',').collect();
    assert_eq!(cells[0], "144");
    let prefill: f64 = cells[3].parse().unwrap();
    assert!((prefill - 2.16).abs() / 2.16 < 0.01, "prefill {prefill}");
}

#[test]
fn sweep_out_writes_csv_and_json_twins() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["sweep", "--out", "s.csv"], tmp.path());
    assert!(out.status.success());
    assert!(stdout(&out).is_empty());
    let csv = std::fs::read_to_string(tmp.path().join("s.csv")).unwrap();
    assert!(csv.starts_with("V,f_vision,f_proj,f_prefill,f_decode,f_total,tps_est\n"));
    let json = std::fs::read_to_string(tmp.path().join("s.json")).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(doc["strict_flops"], false);
    // Reruns of both artifacts are byte-identical.
    let again = run(&["sweep", "--out", "s2.csv"], tmp.path());
    assert!(again.status.success());
    assert_eq!(
        std::fs::read(tmp.path().join("s.csv")).unwrap(),
        std::fs::read(tmp.path().join("s2.csv")).unwrap()
    );
    assert_eq!(
        std::fs::read(tmp.path().join("s.json")).unwrap(),
        std::fs::read(tmp.path().join("s2.json")).unwrap()
    );
}
