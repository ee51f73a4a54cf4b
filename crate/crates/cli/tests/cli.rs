use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn autolab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_autolab")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn mock_run(run_dir: &Path, fixture_set: &Path) -> Output {
    let (config, query) = (fixtures().join("config.json"), fixtures().join("query.json"));
    autolab(&[
        "mock-run",
        "--config",
        path(&config),
        "--query",
        path(&query),
        "--fixtures",
        path(fixture_set),
        "--run-dir",
        path(run_dir),
    ])
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, (Vec<u8>, Option<std::time::SystemTime>)> {
    walkdir::WalkDir::new(dir)
        .into_iter()
        .map(Result::unwrap)
        .map(|e| {
            let bytes = if e.file_type().is_file() { fs::read(e.path()).unwrap() } else { Vec::new() };
            (e.path().to_path_buf(), (bytes, e.metadata().unwrap().modified().ok()))
        })
        .collect()
}

#[test]
fn mock_run_of_example_i_succeeds() {
    let ws = tempfile::tempdir().unwrap();
    let run = ws.path().join("run");
    let out = mock_run(&run, &fixtures().join("example_i"));
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(stdout(&out).contains("status: Done"), "{}", stdout(&out));
    assert!(stdout(&out).contains("rounds executed: 4"));
    assert!(run.join("run_record.json").is_file());
}

#[test]
fn early_stop_fixture_executes_one_round() {
    let ws = tempfile::tempdir().unwrap();
    let out = mock_run(&ws.path().join("run"), &fixtures().join("early_stop"));
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(stdout(&out).contains("rounds executed: 1"));
}

#[test]
fn missing_fixture_exits_one_and_names_the_key() {
    let ws = tempfile::tempdir().unwrap();
    let partial = ws.path().join("partial");
    fs::create_dir(&partial).unwrap();
    for entry in fs::read_dir(fixtures().join("example_i")).unwrap() {
        let entry = entry.unwrap();
        if !entry.file_name().to_string_lossy().starts_with("Refiner_2_1") {
            fs::copy(entry.path(), partial.join(entry.file_name())).unwrap();
        }
    }
    let run = ws.path().join("run");
    let out = mock_run(&run, &partial);
    assert_eq!(out.status.code(), Some(1), "{}", stdout(&out));
    assert!(stdout(&out).contains("no fixture for (Refiner_2, 1)"), "{}", stdout(&out));

    let resumed = autolab(&["resume", "--run-dir", path(&run), "--fixtures", path(&fixtures().join("example_i"))]);
    assert_eq!(resumed.status.code(), Some(0), "{}", stdout(&resumed));
    assert!(stdout(&resumed).contains("rounds executed: 4"));
}

#[test]
fn resume_with_a_complete_fixture_set_finishes_the_run() {
    let ws = tempfile::tempdir().unwrap();
    let run = ws.path().join("run");
    let partial = ws.path().join("partial");
    fs::create_dir(&partial).unwrap();
    for entry in fs::read_dir(fixtures().join("example_i")).unwrap() {
        let entry = entry.unwrap();
        let name = entry.file_name().to_string_lossy().into_owned();
        if !name.contains("Writer") {
            fs::copy(entry.path(), partial.join(&name)).unwrap();
        }
    }
    let out = mock_run(&run, &partial);
    assert_eq!(out.status.code(), Some(1), "{}", stdout(&out));

    let resumed = autolab(&["resume", "--run-dir", path(&run), "--fixtures", path(&fixtures().join("example_i"))]);
    assert_eq!(resumed.status.code(), Some(0), "{}", stdout(&resumed));
    assert!(stdout(&resumed).contains("rounds executed: 4"));
    assert!(run.join("report/main.tex").is_file());
}

#[test]
fn malformed_config_exits_two_naming_the_field() {
    let ws = tempfile::tempdir().unwrap();
    let mut config: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fixtures().join("config.json")).unwrap()).unwrap();
    config["script_timeout"] = serde_json::json!("soon");
    let bad = ws.path().join("config.json");
    fs::write(&bad, config.to_string()).unwrap();
    let out = autolab(&["validate", "--config", path(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stdout(&out).contains("script_timeout"), "{}", stdout(&out));

    let query = fixtures().join("query.json");
    let out = autolab(&[
        "mock-run",
        "--config",
        path(&bad),
        "--query",
        path(&query),
        "--fixtures",
        path(&fixtures().join("example_i")),
        "--run-dir",
        path(&ws.path().join("run")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!ws.path().join("run").exists());
}

#[test]
fn validate_accepts_the_shipped_config() {
    let (config, query) = (fixtures().join("config.json"), fixtures().join("query.json"));
    let out = autolab(&["validate", "--config", path(&config), "--query", path(&query)]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("validated"), "{}", stdout(&out));
}

#[test]
fn live_run_without_key_is_invalid_input() {
    let ws = tempfile::tempdir().unwrap();
    let (config, query) = (fixtures().join("config.json"), fixtures().join("query.json"));
    let out = Command::new(env!("CARGO_BIN_EXE_autolab"))
        .args(["run", "--config", path(&config), "--query", path(&query), "--run-dir"])
        .arg(ws.path().join("run"))
        .env_clear()
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", stdout(&out));
    assert!(!ws.path().join("run").exists());
}

#[test]
fn inspect_rejects_a_non_run_directory() {
    let ws = tempfile::tempdir().unwrap();
    let out = autolab(&["inspect", "--run-dir", path(ws.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn inspect_reports_without_modifying_the_run() {
    let ws = tempfile::tempdir().unwrap();
    let run = ws.path().join("run");
    assert_eq!(mock_run(&run, &fixtures().join("example_i")).status.code(), Some(0));
    let before = snapshot(&run);
    let out = autolab(&["inspect", "--run-dir", path(&run)]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("stage: Done"), "{text}");
    assert!(text.contains("rounds: 4"));
    assert!(text.contains("report sections: 5 of 5"));
    assert!(text.contains("continuity 2 -> 3: 0 violation(s)"));

    let json_out = autolab(&["--json", "inspect", "--run-dir", path(&run)]);
    let summary: serde_json::Value = serde_json::from_slice(&json_out.stdout).unwrap();
    assert_eq!(summary["rounds"].as_array().unwrap().len(), 4);
    assert_eq!(snapshot(&run), before);
}
