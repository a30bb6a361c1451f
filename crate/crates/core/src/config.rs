//! Resolved run configuration and JSON overrides.

use std::path::Path;

use serde_json::{Map, Value};

use crate::augmenter::AugmentConfig;
use crate::error::{Error, Result};

fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

/// Applies `overrides` to `base`. Keys may be nested (`{"solver": {"n_p": 3}}`)
/// or name an objective or solver field directly (`{"n_p": 3}`).
pub fn apply_overrides(base: &AugmentConfig, overrides: &Map<String, Value>) -> Result<AugmentConfig> {
    let mut value = serde_json::to_value(base)?;
    let root = value.as_object_mut().expect("config serializes to an object");
    for (key, v) in overrides {
        let section = if root.contains_key(key) {
            None
        } else if ["objective", "solver"]
            .iter()
            .any(|s| root[*s].as_object().is_some_and(|o| o.contains_key(key)))
        {
            Some(if root["objective"].as_object().is_some_and(|o| o.contains_key(key)) {
                "objective"
            } else {
                "solver"
            })
        } else if key == "workspace" {
            Some("objective")
        } else {
            return Err(Error::InvalidArgument(format!("unknown config field '{key}'")));
        };
        let target = match section {
            None => root.get_mut(key).expect("checked above"),
            Some(s) => {
                let obj = root[s].as_object_mut().expect("section is an object");
                obj.entry(key.clone()).or_insert(Value::Null)
            }
        };
        merge(target, v);
    }
    let cfg: AugmentConfig = serde_json::from_value(value)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_overrides(path: &Path) -> Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path)?;
    match serde_json::from_str(&text)? {
        Value::Object(m) => Ok(m),
        _ => Err(Error::InvalidArgument(format!(
            "{} must hold a JSON object",
            path.display()
        ))),
    }
}
