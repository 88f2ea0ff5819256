//! Settings layering: command-line flags over a config file over built-in
//! defaults.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::Failure;

/// Parsed config file, TOML unless the name ends in `.json`.
#[derive(Debug, Default)]
pub struct FileConfig {
    root: Map<String, Value>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let value: Value = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)
                .map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))?
        } else {
            let table: toml::Table = toml::from_str(&text)
                .map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))?;
            serde_json::to_value(table).map_err(|e| Failure::Usage(e.to_string()))?
        };
        match value {
            Value::Object(root) => Ok(FileConfig { root }),
            _ => Err(Failure::Usage(format!(
                "config {} must be a table",
                path.display()
            ))),
        }
    }

    pub fn string(&self, key: &str) -> Option<String> {
        self.root.get(key).and_then(Value::as_str).map(str::to_string)
    }

    pub fn u64(&self, key: &str) -> Option<u64> {
        self.root.get(key).and_then(Value::as_u64)
    }

    /// `flags` with every unset field filled from `[section]`.
    pub fn layer<T: Serialize + DeserializeOwned>(&self, section: &str, flags: &T) -> Result<T, Failure> {
        let mut merged = match self.root.get(section) {
            None => Value::Object(Map::new()),
            Some(v @ Value::Object(_)) => v.clone(),
            Some(_) => {
                return Err(Failure::Usage(format!(
                    "config section `{section}` must be a table"
                )))
            }
        };
        let flags = serde_json::to_value(flags).map_err(|e| Failure::Usage(e.to_string()))?;
        overlay(&mut merged, flags);
        serde_json::from_value(merged).map_err(|e| Failure::Usage(format!("config section `{section}`: {e}")))
    }
}

/// Copies set values of `top` onto `base`. Null, false and empty lists
/// count as unset.
fn overlay(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match v {
                    Value::Null | Value::Bool(false) => {}
                    Value::Array(ref a) if a.is_empty() => {}
                    Value::Object(_) => overlay(b.entry(k).or_insert_with(|| Value::Object(Map::new())), v),
                    v => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}
