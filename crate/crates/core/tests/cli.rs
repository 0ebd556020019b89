use std::path::{Path, PathBuf};
use std::process::Command;

fn catsbm(out: &Path, args: &[&str]) -> (i32, PathBuf) {
    let output = Command::new(env!("CARGO_BIN_EXE_catsbm"))
        .args(args)
        .arg(format!("--out-dir={}", out.display()))
        .output()
        .expect("binary runs");
    let stdout = String::from_utf8(output.stdout).unwrap();
    (output.status.code().unwrap_or(-1), PathBuf::from(stdout.trim()))
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

const SMALL: [&str; 4] = ["--density=30", "--replicates=6", "--dt=1e-3", "--record-every=0.05"];

#[test]
fn simulate_is_byte_identical_across_runs_and_threads() {
    let tmp = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for threads in ["1", "3", "1"] {
        let mut args = vec!["simulate", "--seed", "11", "--threads", threads, "--log-events=true"];
        args.extend(SMALL);
        let (code, dir) = catsbm(tmp.path(), &args);
        assert_eq!(code, 0);
        assert!(dir.join("manifest.json").exists());
        runs.push(csv_files(&dir));
    }
    assert_eq!(runs[0].len(), 4);
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], runs[2]);
}

#[test]
fn shipped_config_parses_and_manifest_reproduces_run() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/default.conf");
    let (code, dir) = catsbm(tmp.path(), &["solve", "--config", conf, "--solver-steps=256"]);
    assert_eq!(code, 0);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    // rebuild a config file from the manifest and rerun
    let entries = manifest["config"].as_object().unwrap();
    let mut text = format!("schema_version = {}\n", entries["schema_version"].as_str().unwrap());
    for (k, v) in entries.iter().filter(|(k, _)| *k != "schema_version") {
        text.push_str(&format!("{k} = {}\n", v.as_str().unwrap()));
    }
    let replay = tmp.path().join("replay.conf");
    std::fs::write(&replay, text).unwrap();
    let (code, again) = catsbm(tmp.path(), &["solve", "--config", replay.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert_eq!(csv_files(&dir), csv_files(&again));
}

#[test]
fn invalid_config_names_the_key_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let output = Command::new(env!("CARGO_BIN_EXE_catsbm"))
        .args(["moments", "--no-such-key=1"])
        .arg(format!("--out-dir={}", tmp.path().display()))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("no_such_key"));
    assert_eq!(std::fs::read_dir(tmp.path()).unwrap().count(), 0);
}

#[test]
fn quick_verify_is_reproducible_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, a) = catsbm(
        tmp.path(),
        &["verify", "--verify-scale=quick", "--threads=1", "--seed=3"],
    );
    let (_, b) = catsbm(
        tmp.path(),
        &["verify", "--verify-scale=quick", "--threads=2", "--seed=3"],
    );
    let (fa, fb) = (csv_files(&a), csv_files(&b));
    assert!(fa.iter().any(|(name, _)| name == "verify.csv"));
    assert_eq!(fa, fb);
}
