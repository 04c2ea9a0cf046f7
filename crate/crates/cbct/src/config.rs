//! Layered configuration: defaults, then a JSON file, then command-line
//! flags. Layers are JSON objects merged key by key.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

/// Recursively overlays `patch` onto `base`. Objects merge; any other value
/// replaces.
pub fn overlay(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                overlay(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// `defaults` overlaid with each layer in order, deserialised back.
pub fn resolve<T: Serialize + DeserializeOwned>(defaults: &T, layers: &[&Value]) -> CliResult<T> {
    let mut value = serde_json::to_value(defaults).map_err(|e| CliError::runtime(e.to_string()))?;
    for layer in layers {
        overlay(&mut value, layer);
    }
    serde_json::from_value(value).map_err(|e| CliError::invalid(format!("configuration: {e}")))
}

/// Builds an object from the flags that were actually given.
#[derive(Debug, Default)]
pub struct FlagLayer(Map<String, Value>);

impl FlagLayer {
    pub fn set<V: Serialize>(&mut self, key: &str, value: Option<V>) -> &mut Self {
        if let Some(v) = value {
            self.0.insert(key.to_string(), serde_json::to_value(v).expect("flag values serialise"));
        }
        self
    }

    pub fn into_value(self) -> Value {
        Value::Object(self.0)
    }
}

/// Section `key` of a config file, or an empty object.
pub fn section(file: &Value, key: &str) -> Value {
    file.get(key).cloned().unwrap_or_else(|| Value::Object(Map::new()))
}
