//! Layered configuration: flags over a JSON config file over defaults.
//!
//! Layers are merged as JSON objects. Top-level keys of the file must exist
//! in the defaults so typos fail loudly; nested maps merge key by key.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::manifest::read_json;

fn merge(base: &mut Value, layer: Value) {
    match (base, layer) {
        (Value::Object(b), Value::Object(l)) => {
            for (k, v) in l {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| Error::Config(e.to_string()))
}

/// Merges a file layer and flag overrides onto `defaults`.
pub fn resolve<T: Serialize + DeserializeOwned>(
    defaults: &T,
    file: Option<&Value>,
    overrides: Map<String, Value>,
) -> Result<T> {
    let mut value = to_value(defaults)?;
    let known = match &value {
        Value::Object(m) => m.keys().cloned().collect::<Vec<_>>(),
        _ => Vec::new(),
    };
    if let Some(layer) = file {
        let Value::Object(obj) = layer else {
            return Err(Error::Config(String::from("config file must hold a JSON object")));
        };
        if let Some(k) = obj.keys().find(|k| !known.contains(k)) {
            return Err(Error::Config(format!("unknown config key {k:?}")));
        }
        merge(&mut value, layer.clone());
    }
    merge(&mut value, Value::Object(overrides));
    serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
}

pub fn read_config_file(path: &Path) -> Result<Value> {
    read_json(path)
}

/// Collects `Some` flag values under their config keys.
#[derive(Default)]
pub struct Overrides(Map<String, Value>);

impl Overrides {
    pub fn set<V: Serialize>(&mut self, key: &str, value: Option<V>) -> Result<&mut Self> {
        if let Some(v) = value {
            self.0.insert(key.to_owned(), to_value(&v)?);
        }
        Ok(self)
    }

    pub fn into_map(self) -> Map<String, Value> {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mgnma_core::trainer::TrainConfig;
    use serde_json::json;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let file = json!({"epochs": 7, "learning_rate": 0.01});
        let mut o = Overrides::default();
        o.set("epochs", Some(3)).unwrap();
        let cfg: TrainConfig = resolve(&TrainConfig::default(), Some(&file), o.into_map()).unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.learning_rate, 0.01);
        assert_eq!(cfg.batch_size, 1536);
    }

    #[test]
    fn unknown_file_key_is_rejected() {
        let file = json!({"epoch": 7});
        let err = resolve(&TrainConfig::default(), Some(&file), Map::new()).unwrap_err();
        assert!(err.to_string().contains("epoch"));
    }

    #[test]
    fn nested_maps_merge() {
        let defaults = mgnma_core::synth::SynthSpec::small();
        let file = json!({"dims": {"image": 4}});
        let spec: mgnma_core::synth::SynthSpec = resolve(&defaults, Some(&file), Map::new()).unwrap();
        assert_eq!(spec.dims[&mgnma_core::features::Modality::Image], 4);
        assert_eq!(spec.dims[&mgnma_core::features::Modality::Audio], 8);
    }
}
