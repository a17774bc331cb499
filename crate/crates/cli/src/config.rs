//! Layered configuration: command defaults, then an optional TOML file,
//! then command-line flags. Every run directory receives the fully
//! resolved configuration as `config.toml`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "TOKENBOUND_OUT";
pub const DEFAULT_OUT_ROOT: &str = "tokenbound-runs";
pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Errors caused by the user's input rather than by the tool.
#[derive(Debug)]
pub struct BadInput(pub String);

impl fmt::Display for BadInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for BadInput {}

macro_rules! bad_input {
    ($($arg:tt)*) => {
        anyhow::Error::new($crate::config::BadInput(format!($($arg)*)))
    };
}
pub(crate) use bad_input;

pub fn read_input(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| bad_input!("cannot read {}: {e}", path.display()))
}

fn without_nulls(v: Value) -> Value {
    match v {
        Value::Object(map) => Value::Object(
            map.into_iter()
                .filter(|(_, v)| !v.is_null())
                .map(|(k, v)| (k, without_nulls(v)))
                .collect(),
        ),
        other => other,
    }
}

/// Loads the section for `command` from a TOML file. A file without a
/// `[command]` table is read as a flat table of keys.
fn file_layer(path: &Path, command: &str) -> Result<Map<String, Value>> {
    let text = String::from_utf8(read_input(path)?).map_err(|_| bad_input!("{} is not UTF-8", path.display()))?;
    let table: Value = toml::from_str(&text).map_err(|e| bad_input!("{}: {e}", path.display()))?;
    let Value::Object(mut map) = table else {
        return Err(bad_input!("{}: expected a table", path.display()));
    };
    match map.remove(command) {
        Some(Value::Object(section)) => Ok(section),
        Some(_) => Err(bad_input!("{}: [{command}] must be a table", path.display())),
        None => Ok(map),
    }
}

/// Resolves a command configuration from defaults, the config file and
/// the flags that were actually given.
pub fn resolve<C, O>(command: &str, file: Option<&Path>, overrides: &O) -> Result<C>
where
    C: DeserializeOwned,
    O: Serialize,
{
    let mut merged = match file {
        Some(path) => file_layer(path, command)?,
        None => Map::new(),
    };
    if let Value::Object(flags) = without_nulls(serde_json::to_value(overrides)?) {
        merged.extend(flags);
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| bad_input!("{command} configuration: {e}"))
}

/// Output directory for a run: `out` if given, otherwise a directory under
/// `$TOKENBOUND_OUT` named after the command and a digest of the resolved
/// configuration, so identical runs land in the same place.
pub fn run_dir<C: Serialize>(command: &str, config: &C, out: Option<&Path>) -> Result<PathBuf> {
    let dir = match out {
        Some(dir) => dir.to_path_buf(),
        None => {
            let root = std::env::var_os(OUT_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| DEFAULT_OUT_ROOT.into());
            let digest = Sha256::digest(serde_json::to_vec(config)?);
            let short: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
            root.join(format!("{command}-{short}"))
        }
    };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

pub fn write_resolved<C: Serialize>(dir: &Path, config: &C) -> Result<()> {
    let text = toml::to_string_pretty(config).context("serializing resolved config")?;
    write(dir, "config.toml", text.as_bytes())
}

pub fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))
}
