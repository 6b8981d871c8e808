mod support;

use std::path::Path;
use std::process::{Command, Output};

use artready_core::asset::JointDynamics;

const BIN: &str = env!("CARGO_BIN_EXE_artready");

fn run(args: &[&str], extra: &[&Path]) -> Output {
    Command::new(BIN).args(args).args(extra).output().unwrap()
}

#[test]
fn missing_asset_exits_with_two() {
    let out = run(&["analyze", "/nonexistent/thing.urdf"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn analyze_json_lists_links() {
    let dir = tempfile::tempdir().unwrap();
    let urdf = support::hinge_box("box", 0.0, 0.0).write(dir.path());
    let out = run(&["--format", "json", "analyze"], &[&urdf]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let text = v.to_string();
    assert!(text.contains("body") && text.contains("lid"), "{text}");
}

#[test]
fn evaluate_exit_code_follows_classification() {
    let dir = tempfile::tempdir().unwrap();
    let stable = support::hinge_box("stable", 0.2, 0.0)
        .with_inertials(500.0, JointDynamics::triplet(0.5, 0.01, 0.0))
        .write(&dir.path().join("a"));
    let out = run(&["evaluate"], &[&stable]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );

    let springy = support::door_box("springy", 0.4, -1.5)
        .with_inertials(500.0, JointDynamics::triplet(0.0, 0.0, 2.0))
        .write(&dir.path().join("b"));
    let out = run(&["--format", "json", "evaluate"], &[&springy]);
    assert_eq!(out.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["classification"], "instability");
}

#[test]
fn refine_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let a = support::hinge_box("lidded", -0.3, -0.5).write(&dir.path().join("lidded"));
    let b = support::slide_lid("sliding", -0.04).write(&dir.path().join("sliding"));
    let manifest = dir.path().join("m.toml");
    std::fs::write(
        &manifest,
        format!(
            "[[asset]]\nurdf = {:?}\nguidance = \"closed\"\n\n[[asset]]\nurdf = {:?}\n",
            a, b
        ),
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&["--out"], &[&out_dir]);
    assert_eq!(out.status.code(), Some(2), "subcommand is required");
    let out = Command::new(BIN)
        .arg("--out")
        .arg(&out_dir)
        .args(["refine", "--manifest"])
        .arg(&manifest)
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(out_dir.join("aggregate.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(out_dir.join("lidded/lidded.urdf").exists());

    let summary = dir.path().join("summary.csv");
    let out = Command::new(BIN)
        .arg("--out")
        .arg(&summary)
        .arg("report")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("pass"));
    assert!(summary.exists());
}

#[test]
fn report_on_empty_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["report"], &[dir.path()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn srcc_text_marks_undefined_correlation() {
    let table = concat!(env!("CARGO_MANIFEST_DIR"), "/data/rates/pi0.csv");
    let out = run(&["srcc", table], &[]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("0.5163") && text.contains("N/A"), "{text}");
}

#[test]
fn bad_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "t_test = 0.0\n").unwrap();
    let table = concat!(env!("CARGO_MANIFEST_DIR"), "/data/rates/pi0.csv");
    let out = Command::new(BIN)
        .arg("--config")
        .arg(&cfg)
        .args(["srcc", table])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
