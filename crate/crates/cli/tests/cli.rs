use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use platoon_vdsa::scenario::{load_config_str, SimConfig};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_vdsa-sim"));
    for (k, _) in std::env::vars() {
        if k.starts_with("VDSA_") {
            cmd.env_remove(k);
        }
    }
    cmd
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    if !out.status.success() {
        eprintln!("stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut found = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                found.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                );
            }
        }
    }
    found
}

fn only_run_dir(out: &Path) -> PathBuf {
    let dirs: Vec<_> = fs::read_dir(out).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs[0].clone()
}

fn without_timestamp(bytes: &[u8]) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_slice(bytes).unwrap();
    v.as_object_mut().unwrap().remove("created_unix_s");
    v
}

#[test]
fn printed_default_config_loads_back_unchanged() {
    let out = run(bin().args(["run", "--print-default-config"]));
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(load_config_str(&text, None).unwrap(), SimConfig::default());
}

#[test]
fn overrides_show_up_in_the_printed_config() {
    let out = run(bin()
        .args(["run", "--print-default-config", "--set", "platoons.0.size=6"])
        .env("VDSA_SET", "ignored=1"));
    assert!(out.status.success());
    let cfg = load_config_str(&String::from_utf8(out.stdout).unwrap(), None).unwrap();
    assert_eq!(cfg.platoons[0].size, 6);

    let out = run(bin()
        .args(["run", "--print-default-config"])
        .env("VDSA_SET", "sim_duration_s=7;tick_ms=1"));
    assert!(out.status.success());
    let cfg = load_config_str(&String::from_utf8(out.stdout).unwrap(), None).unwrap();
    assert_eq!(cfg.sim_duration_s, 7.0);
}

#[test]
fn identical_invocations_write_identical_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut trees = Vec::new();
    for (name, jobs) in [("a", "1"), ("b", "2")] {
        let out_dir = tmp.path().join(name);
        let out = run(bin().args([
            "run",
            "--seeds",
            "1..2",
            "--strategy",
            "cch-only,bumblebee:3",
            "--set",
            "sim_duration_s=4",
            "--trajectory-stride",
            "500",
            "--jobs",
            jobs,
            "--out",
        ])
        .arg(&out_dir));
        assert!(out.status.success());
        trees.push(files_under(&only_run_dir(&out_dir)));
    }
    let (a, b) = (&trees[0], &trees[1]);
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (path, bytes) in a {
        if path == Path::new("manifest.json") {
            assert_eq!(without_timestamp(bytes), without_timestamp(&b[path]));
        } else {
            assert!(bytes == &b[path], "{} differs", path.display());
        }
    }
    for name in [
        "config.toml",
        "manifest.json",
        "run_summary.csv",
        "switch_counts.csv",
        "prr_by_position.csv",
    ] {
        assert!(a.contains_key(Path::new(name)), "missing {name}");
    }
    assert!(a.contains_key(&Path::new("bumblebee_3/seed_2/trajectory.csv").to_path_buf()));

    let manifest: serde_json::Value = serde_json::from_slice(&a[Path::new("manifest.json")]).unwrap();
    assert_eq!(manifest["code_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(manifest["seeds"], serde_json::json!([1, 2]));
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn repeated_runs_get_separate_directories() {
    let tmp = tempfile::tempdir().unwrap();
    for _ in 0..2 {
        let out = run(bin()
            .args(["run", "--seeds", "3", "--strategy", "cch-only", "--set", "sim_duration_s=1", "--out"])
            .arg(tmp.path()));
        assert!(out.status.success());
    }
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 2);
}

#[test]
fn invalid_config_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    let mut text = SimConfig::default().to_toml();
    text = text.replace("lane_count = 4", "lane_count = 1");
    fs::write(&path, text).unwrap();
    let out = run(bin().args(["run", "--config"]).arg(&path).arg("--out").arg(tmp.path()));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lane_count"));

    let out = run(bin().args(["run", "--strategy", "greedy"]));
    assert!(!out.status.success());
    let out = run(bin().args(["run", "--seeds", "9..1"]).arg("--out").arg(tmp.path()));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, b"not a directory").unwrap();
    let out = run(bin()
        .args(["reproduce", "--quick", "--seeds", "1", "--out"])
        .arg(blocker.join("out")));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("creating"));
}

#[test]
fn failing_checks_exit_with_one() {
    // Two seconds of driving cannot produce the expected switching activity.
    let tmp = tempfile::tempdir().unwrap();
    let out = run(bin()
        .args(["reproduce", "--quick", "--seeds", "1", "--set", "sim_duration_s=2", "--out"])
        .arg(tmp.path()));
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("[FAIL]"));
    assert!(only_run_dir(tmp.path()).join("report.txt").exists());
}
