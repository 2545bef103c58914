//! TOML configuration with `key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use gnome_core::pipeline::PipelineConfig;
use toml::{Table, Value};

/// Reads `path` (if any), applies the overrides in order and validates.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> anyhow::Result<PipelineConfig> {
    let mut table = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            text.parse::<Table>().with_context(|| format!("parsing {}", p.display()))?
        }
        None => Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let config: PipelineConfig = Value::Table(table).try_into().context("invalid configuration")?;
    config.validate().map_err(|e| anyhow!(e))?;
    Ok(config)
}

/// `a.b=v` sets key `b` of table `a`. The value is read as a TOML literal
/// when it parses as one, otherwise as a bare string.
pub fn apply_override(table: &mut Table, spec: &str) -> anyhow::Result<()> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| anyhow!("override {spec:?} is not KEY=VALUE"))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        bail!("override {spec:?} has an empty key");
    }
    let value = parse_value(raw.trim());
    let (last, parents) = path.split_last().expect("split yields at least one part");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| anyhow!("override {spec:?}: {p} is not a table"))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// `<output_dir>/<UTC timestamp>-<first 12 hex digits of the config hash>`.
pub fn run_dir_name(config: &PipelineConfig) -> PathBuf {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    config.output_dir.join(format!("{stamp}-{}", &config.hash()[..12]))
}
