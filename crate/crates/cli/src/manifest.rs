use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use platoon_vdsa::experiment::RunRecord;
use platoon_vdsa::metrics::PrrKind;
use platoon_vdsa::scenario::SimConfig;

#[derive(Debug, Serialize)]
struct Manifest {
    tool: &'static str,
    code_version: &'static str,
    created_unix_s: u64,
    config_sha256: String,
    prr_kind: String,
    strategies: Vec<String>,
    seeds: Vec<u64>,
    runs: Vec<RunEntry>,
    files: Vec<FileEntry>,
}

#[derive(Debug, Serialize)]
struct RunEntry {
    strategy: String,
    seed: u64,
    dir: String,
}

#[derive(Debug, Serialize)]
struct FileEntry {
    path: String,
    sha256: String,
}

fn now_s() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Creates a fresh `<out>/run-<unix seconds>` directory, suffixed `-1`, `-2`, ...
/// when a run in the same second already took the name.
pub fn stamped_dir(out: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let stamp = format!("run-{}", now_s());
    for k in 0.. {
        let name = if k == 0 { stamp.clone() } else { format!("{stamp}-{k}") };
        let dir = out.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).with_context(|| format!("creating {}", dir.display())),
        }
    }
    unreachable!("the suffix search is unbounded")
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `config.toml` (the effective scenario) and `manifest.json`.
pub fn write(
    dir: &Path,
    cfg: &SimConfig,
    records: &[RunRecord],
    written: &[PathBuf],
    kind: PrrKind,
) -> Result<()> {
    let config_text = cfg.to_toml();
    let config_path = dir.join("config.toml");
    fs::write(&config_path, &config_text)
        .with_context(|| format!("writing {}", config_path.display()))?;

    let mut strategies: Vec<String> = Vec::new();
    let mut seeds: Vec<u64> = Vec::new();
    for r in records {
        let s = r.strategy.to_string();
        if !strategies.contains(&s) {
            strategies.push(s);
        }
        if !seeds.contains(&r.seed) {
            seeds.push(r.seed);
        }
    }
    let mut files = Vec::new();
    for rel in std::iter::once(&PathBuf::from("config.toml")).chain(written) {
        let bytes = fs::read(dir.join(rel)).with_context(|| format!("hashing {}", rel.display()))?;
        files.push(FileEntry {
            path: rel.to_string_lossy().replace('\\', "/"),
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        code_version: env!("CARGO_PKG_VERSION"),
        created_unix_s: now_s(),
        config_sha256: sha256_hex(config_text.as_bytes()),
        prr_kind: kind.to_string(),
        strategies,
        seeds,
        runs: records
            .iter()
            .map(|r| RunEntry {
                strategy: r.strategy.to_string(),
                seed: r.seed,
                dir: r.rel_dir().to_string_lossy().replace('\\', "/"),
            })
            .collect(),
        files,
    };
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}
