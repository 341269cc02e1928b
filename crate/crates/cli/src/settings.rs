//! Run configuration from a TOML file plus `key=value` overrides, and the
//! content-hash run id.

use std::fs;
use std::path::{Path, PathBuf};

use casematch_core::config::RunConfig;
use casematch_core::{Error, Result};
use sha2::{Digest, Sha256};

/// Parses one override value as a TOML scalar or array; anything that is
/// not valid TOML is taken as a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("override `{assignment}` has an empty key")));
    }
    table.insert(key.to_string(), parse_value(value.trim()));
    Ok(())
}

/// Reads `file` (if any), applies `overrides` in order and validates.
pub fn load_config(file: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut table = match file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            toml::from_str::<toml::Table>(&text)
                .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let config: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
    config.validate()?;
    Ok(config)
}

/// First 12 hex digits of the SHA-256 of the config as JSON. The output
/// directory is left out so moving a run does not rename it.
pub fn run_id(config: &RunConfig) -> String {
    let keyed = RunConfig { output_dir: PathBuf::new(), ..config.clone() };
    let bytes = serde_json::to_vec(&keyed).expect("config serializes");
    Sha256::digest(&bytes).iter().take(6).map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
