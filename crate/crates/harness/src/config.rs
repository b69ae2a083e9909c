//! Layered configuration: defaults, then a JSON file, then command-line
//! flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Recursively overlays `top` on `base`. Objects merge key by key; any other
/// value in `top` replaces the one below it.
pub fn deep_merge(base: &mut Value, top: &Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(k) {
                    Some(slot) => deep_merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

/// Reads a config file. A top-level key named `section` is used when
/// present, so one file can hold settings for several commands.
pub fn load_file(path: &Path, section: &str) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if !v.is_object() {
        return Err(Error::Config(format!("{}: top level must be an object", path.display())));
    }
    Ok(match v.get(section) {
        Some(s) if s.is_object() => s.clone(),
        _ => v,
    })
}

/// Flag overrides collected as dotted paths, e.g. `optimizer.eta`.
#[derive(Default)]
pub struct Overrides(Map<String, Value>);

impl Overrides {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set<T: Serialize>(&mut self, path: &str, value: Option<T>) -> &mut Self {
        if let Some(v) = value {
            let v = serde_json::to_value(v).expect("flag values serialise");
            let mut keys: Vec<&str> = path.split('.').collect();
            let last = keys.pop().expect("non-empty path");
            let mut node = &mut self.0;
            for k in keys {
                node = node
                    .entry(k.to_string())
                    .or_insert_with(|| Value::Object(Map::new()))
                    .as_object_mut()
                    .expect("override paths do not collide");
            }
            node.insert(last.to_string(), v);
        }
        self
    }

    pub fn into_value(self) -> Value {
        Value::Object(self.0)
    }
}

/// `defaults ← file ← flags`, deserialised into `T`. Unknown keys are
/// rejected by types that deny them.
pub fn resolve<T: Serialize + DeserializeOwned + Default>(file: Option<&Path>, section: &str, flags: Overrides) -> Result<T> {
    let mut v = serde_json::to_value(T::default())?;
    if let Some(p) = file {
        deep_merge(&mut v, &load_file(p, section)?);
    }
    deep_merge(&mut v, &flags.into_value());
    serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;
    use serde_json::json;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default, deny_unknown_fields)]
    struct Inner {
        eta: f64,
        epochs: usize,
    }

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default, deny_unknown_fields)]
    struct Outer {
        name: String,
        inner: Inner,
    }

    #[test]
    fn merge_keeps_unset_siblings() {
        let mut base = json!({"a": {"x": 1, "y": 2}, "b": 3});
        deep_merge(&mut base, &json!({"a": {"y": 20}, "c": 4}));
        assert_eq!(base, json!({"a": {"x": 1, "y": 20}, "b": 3, "c": 4}));
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"train": {"name": "file", "inner": {"eta": 0.5, "epochs": 7}}}"#).unwrap();
        let mut o = Overrides::new();
        o.set("inner.eta", Some(0.1)).set("name", None::<String>);
        let r: Outer = resolve(Some(&p), "train", o).unwrap();
        assert_eq!(r, Outer { name: "file".into(), inner: Inner { eta: 0.1, epochs: 7 } });
        let r: Outer = resolve(None, "train", Overrides::new()).unwrap();
        assert_eq!(r, Outer::default());
    }

    #[test]
    fn unknown_keys_and_bad_files_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"inner": {"eta": 1.0, "bogus": 1}}"#).unwrap();
        assert!(matches!(resolve::<Outer>(Some(&p), "train", Overrides::new()), Err(Error::Config(_))));
        std::fs::write(&p, "[1, 2]").unwrap();
        assert!(matches!(resolve::<Outer>(Some(&p), "train", Overrides::new()), Err(Error::Config(_))));
    }
}
