//! JSON documents layered over defaults: a partial document overrides only
//! the keys it names, and unknown keys are still rejected by the target type.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use super::CliError;

/// Tag key of internally tagged enums; a document naming a different
/// variant replaces the default section instead of merging into it.
const TAG: &str = "kind";

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) if o.get(TAG).is_none_or(|t| b.get(TAG) == Some(t)) => {
            for (k, v) in o {
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

/// `defaults` overridden by the JSON document at `path`, if any.
pub fn load<T: Serialize + DeserializeOwned>(defaults: &T, path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(
            serde_json::from_value(serde_json::to_value(defaults).expect("defaults serialize"))
                .expect("defaults round-trip"),
        );
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let doc: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: not valid JSON: {e}", path.display())))?;
    let mut value = serde_json::to_value(defaults).expect("defaults serialize");
    merge(&mut value, doc);
    serde_json::from_value(value).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Inner {
        a: u32,
        b: String,
    }

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Outer {
        x: f64,
        inner: Inner,
        list: Vec<u32>,
        source: Source,
    }

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    #[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
    enum Source {
        Disk { dir: String, n: u32 },
        Synthetic { seed: u64 },
    }

    fn defaults() -> Outer {
        Outer {
            x: 1.5,
            inner: Inner { a: 1, b: "b".into() },
            list: vec![1, 2],
            source: Source::Disk { dir: "d".into(), n: 3 },
        }
    }

    fn with(doc: &str) -> Result<Outer, CliError> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, doc).unwrap();
        load(&defaults(), Some(&path))
    }

    #[test]
    fn partial_documents_override_named_keys() {
        let got = with(r#"{"inner": {"a": 7}, "list": [3]}"#).unwrap();
        assert_eq!(got.x, 1.5);
        assert_eq!(got.inner, Inner { a: 7, b: "b".into() });
        assert_eq!(got.list, vec![3]);
        assert_eq!(load(&defaults(), None).unwrap(), defaults());
        assert_eq!(
            with(r#"{"source": {"n": 5}}"#).unwrap().source,
            Source::Disk { dir: "d".into(), n: 5 }
        );
    }

    #[test]
    fn switching_variant_replaces_the_section() {
        let got = with(r#"{"source": {"kind": "synthetic", "seed": 4}}"#).unwrap();
        assert_eq!(got.source, Source::Synthetic { seed: 4 });
        assert!(with(r#"{"source": {"kind": "synthetic"}}"#).is_err());
    }

    #[test]
    fn errors_are_distinct() {
        assert!(matches!(with(r#"{"inner": {"z": 1}}"#), Err(CliError::Config(m)) if m.contains("unknown field")));
        assert!(matches!(with("{"), Err(CliError::Config(m)) if m.contains("not valid JSON")));
        assert!(matches!(
            load(&defaults(), Some(Path::new("/nonexistent/c.json"))),
            Err(CliError::Io(_))
        ));
    }
}
