//! The `lfw1` JSON weights format shared by every model file.
//!
//! ```json
//! {"format":"lfw1","kind":"generator",
//!  "layers":[{"name":"mapping.0.weight","shape":[16,32],"data":[...]}],
//!  "meta":{"w_bar":[...],"config":{...}}}
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::ndcore::{ParamStore, Tensor};

pub const FORMAT: &str = "lfw1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    pub format: String,
    pub kind: String,
    pub layers: Vec<LayerRecord>,
    #[serde(default)]
    pub meta: Map<String, Value>,
}

impl WeightsFile {
    pub fn from_store(kind: &str, store: &ParamStore) -> Self {
        let layers = store
            .names()
            .iter()
            .zip(store.tensors())
            .map(|(name, t)| LayerRecord {
                name: name.clone(),
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect();
        WeightsFile {
            format: FORMAT.to_string(),
            kind: kind.to_string(),
            layers,
            meta: Map::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: Value) -> Self {
        self.meta.insert(key.to_string(), value);
        self
    }

    pub fn meta(&self, key: &str) -> Result<&Value> {
        self.meta
            .get(key)
            .ok_or_else(|| Error::Validation(format!("weights file missing meta.{key}")))
    }

    /// Layer tensors in file order.
    pub fn tensors(&self) -> Result<Vec<(String, Tensor)>> {
        self.layers
            .iter()
            .map(|l| Ok((l.name.clone(), Tensor::new(l.shape.clone(), l.data.clone())?)))
            .collect()
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Validation(format!(
                "expected a {kind:?} weights file, found {:?}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: Value = serde_json::from_str(s)?;
        match raw.get("format").and_then(Value::as_str) {
            Some(FORMAT) => {}
            Some(other) => return Err(Error::Format(other.to_string())),
            None => return Err(Error::Format("<missing>".to_string())),
        }
        Ok(serde_json::from_value(raw)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        WeightsFile::from_json(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unknown_format() {
        let s = r#"{"format":"lfw2","kind":"x","layers":[],"meta":{}}"#;
        assert!(matches!(WeightsFile::from_json(s), Err(Error::Format(f)) if f == "lfw2"));
    }

    #[test]
    fn roundtrip_is_exact() {
        let mut store = ParamStore::new();
        store.add("a", Tensor::vector(vec![0.1, 1.0 / 3.0, -2.5e-17]));
        let f = WeightsFile::from_store("test", &store).with_meta("w_bar", serde_json::json!([1.0]));
        let back = WeightsFile::from_json(&f.to_json().unwrap()).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.tensors().unwrap()[0].1, *store.get(0));
    }
}
