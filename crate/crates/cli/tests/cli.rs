use std::path::Path;
use std::process::Command;

fn mfg(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_mfg"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .unwrap()
}

#[test]
fn validate_lq_passes_on_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = mfg(&["validate-lq", "--paths", "4000"], dir.path());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert!(stdout.contains("PASS"));
    assert!(!stdout.contains("FAIL"));
    assert!(dir.path().join("validate.json").exists());
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"problem":{"family":"lq","c":-1,"c_l":1,"sigma":0}}"#).unwrap();
    let out = mfg(
        &["solve-single", "--config", cfg.to_str().unwrap()],
        &dir.path().join("out"),
    );
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("/problem/c"), "{stderr}");
    assert!(stderr.contains("/problem/sigma"), "{stderr}");
}

#[test]
fn type_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"numeric":{"paths":"lots"}}"#).unwrap();
    let out = mfg(
        &["solve-single", "--config", cfg.to_str().unwrap()],
        &dir.path().join("out"),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/numeric/paths"));
}

#[test]
fn repeated_runs_are_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["solve-multi", "--k", "2", "--paths", "2000", "--seed", "9"];
    assert_eq!(mfg(&args, a.path()).status.code(), Some(0));
    assert_eq!(mfg(&args, b.path()).status.code(), Some(0));
    for name in ["policy.csv", "flow.csv", "report.json", "manifest.json"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs");
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["applicability"]["lq_family"], true);
}

#[test]
fn solve_single_writes_its_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = mfg(&["solve-single", "--paths", "2000"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["converged"], true);
    let measure = std::fs::read_to_string(dir.path().join("measure.csv")).unwrap();
    assert_eq!(measure.lines().count(), 2001);
}
