use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn bundled() -> PathBuf {
    repo().join("scenarios/default.json")
}

fn momcc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_momcc")).arg("--no-banner").args(args).output().expect("spawn momcc")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_bundled_scenario_writes_four_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = momcc(&["run", bundled().to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    for name in ["metrics.json", "metrics.csv", "trace.log", "ledger.csv"] {
        let meta = fs::metadata(dir.path().join(name)).unwrap();
        assert!(meta.len() > 0, "{name} is empty");
    }
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["format_version"], 1);
    assert_eq!(metrics["trace_violations"], 0);
}

#[test]
fn negative_duration_is_a_validation_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"duration_hours": -1.0}"#).unwrap();
    let out = momcc(&["run", bad.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("/duration_hours"), "{}", stderr(&out));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn same_seed_gives_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let mut texts = Vec::new();
    for run in ["a", "b"] {
        let d = dir.path().join(run);
        let out = momcc(&["run", bundled().to_str().unwrap(), "--seed", "7", "--out", d.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        texts.push(fs::read(d.join("metrics.json")).unwrap());
    }
    assert_eq!(texts[0], texts[1]);
    assert!(String::from_utf8_lossy(&texts[0]).contains("\"seed\": 7"));
}

#[test]
fn compare_with_zero_seeds_is_a_usage_error() {
    let out = momcc(&["compare", bundled().to_str().unwrap(), "--seeds", "0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn compare_table_has_a_row_per_seed_and_mode() {
    let out = momcc(&["compare", bundled().to_str().unwrap(), "--seeds", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let table = String::from_utf8(out.stdout).unwrap();
    assert_eq!(table.lines().filter(|l| l.contains(" momcc ")).count(), 2);
    assert_eq!(table.lines().filter(|l| l.contains(" wan_cloud ")).count(), 2);
    assert!(table.contains("mean [min, max] over 2 seed(s)"));
}

#[test]
fn unknown_subcommand_exits_one() {
    assert_eq!(momcc(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn snapshot_restores_and_truncation_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let snap = dir.path().join("state.snap");
    let out = momcc(&["snapshot", bundled().to_str().unwrap(), "--out", snap.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let out = momcc(&["restore", snap.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("invariants: ok"));

    let text = fs::read(&snap).unwrap();
    let cut = dir.path().join("cut.snap");
    fs::write(&cut, &text[..text.len() / 2]).unwrap();
    let out = momcc(&["restore", cut.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("integrity"), "{}", stderr(&out));
}

#[test]
fn validate_accepts_every_repo_scenario() {
    let mut seen = 0;
    for entry in fs::read_dir(repo().join("scenarios")).unwrap() {
        let path = entry.unwrap().path();
        if path.file_name().unwrap() == "defaults.json" {
            continue;
        }
        let out = momcc(&["validate", path.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}: {}", path.display(), stderr(&out));
        seen += 1;
    }
    assert!(seen >= 1);
}

#[test]
fn validate_lists_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"duration_hours": 0, "latency": {"wlan_ms": [30, 5]}}"#).unwrap();
    let out = momcc(&["validate", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("/duration_hours") && err.contains("/latency/wlan_ms"), "{err}");
}

#[test]
fn defaults_file_is_layered_under_the_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let defaults = dir.path().join("defaults.json");
    fs::write(&defaults, r#"{"scenario": {"duration_hours": -3}}"#).unwrap();
    let scenario = dir.path().join("s.json");
    fs::write(&scenario, "{}").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_momcc"))
        .args(["--no-banner", "--defaults", defaults.to_str().unwrap(), "validate", scenario.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    fs::write(&scenario, r#"{"duration_hours": 1}"#).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_momcc"))
        .args(["--no-banner", "--defaults", defaults.to_str().unwrap(), "validate", scenario.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
}

#[test]
fn requirements_prints_the_canonical_form() {
    let out = momcc(&["requirements", repo().join("fixtures/listing1_verbatim.xml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let golden = fs::read(repo().join("fixtures/host_requirements.golden.xml")).unwrap();
    assert_eq!(out.stdout, golden);
}

#[test]
fn banner_goes_to_stderr_only() {
    let out = Command::new(env!("CARGO_BIN_EXE_momcc"))
        .args(["requirements", repo().join("fixtures/listing1_verbatim.xml").to_str().unwrap()])
        .output()
        .unwrap();
    assert!(stderr(&out).starts_with("momcc "));
    let golden = fs::read(repo().join("fixtures/host_requirements.golden.xml")).unwrap();
    assert_eq!(out.stdout, golden);
}
