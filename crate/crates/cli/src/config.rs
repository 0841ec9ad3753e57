use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use platoon_vdsa::scenario::{load_config_str, SimConfig};
use toml::Value;

/// Loads the scenario (file or built-in default) and applies `path=value`
/// overrides before validation.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<SimConfig> {
    let (text, base_dir) = match path {
        Some(p) => (
            std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            p.parent(),
        ),
        None => (SimConfig::default().to_toml(), None),
    };
    let text = if overrides.is_empty() {
        text
    } else {
        let mut doc: Value = toml::from_str(&text).context("parsing config")?;
        for o in overrides.iter().filter(|o| !o.trim().is_empty()) {
            apply(&mut doc, o)?;
        }
        toml::to_string(&doc).context("re-serializing config")?
    };
    load_config_str(&text, base_dir).context("loading config")
}

/// `a.b.2.c=value`: numeric segments index arrays. The value is read as a
/// TOML value and falls back to a bare string.
pub fn apply(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{assignment}` is not PATH=VALUE"))?;
    let value = parse_value(raw.trim());
    let mut node = doc;
    let segments: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = segments.split_last().expect("split yields one segment");
    for seg in parents {
        node = child(node, seg).with_context(|| format!("override `{key}`"))?;
    }
    let slot = child(node, last).with_context(|| format!("override `{key}`"))?;
    *slot = value;
    Ok(())
}

fn child<'a>(node: &'a mut Value, seg: &str) -> Result<&'a mut Value> {
    match node {
        Value::Table(t) => t
            .get_mut(seg)
            .ok_or_else(|| anyhow!("no field `{seg}`")),
        Value::Array(a) => {
            let i: usize = seg.parse().map_err(|_| anyhow!("`{seg}` is not an index"))?;
            let len = a.len();
            a.get_mut(i)
                .ok_or_else(|| anyhow!("index {i} out of range (len {len})"))
        }
        _ => bail!("`{seg}` descends into a scalar"),
    }
}

fn parse_value(raw: &str) -> Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}
