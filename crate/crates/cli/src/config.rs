//! Config resolution: defaults, then the JSON file, then `--set` overrides,
//! then explicit flags. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, CliResult};

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

/// `a.b.c=value`; the value is read as JSON when it parses, else as a string.
pub fn parse_override(s: &str) -> CliResult<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override {s:?} is not key=value")))?;
    if k.is_empty() {
        return Err(CliError::Usage(format!("override {s:?} has an empty key")));
    }
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.to_string(), value))
}

fn set_path(root: &mut Value, key: &str, value: Value) -> CliResult<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        let obj = match cur {
            Value::Object(o) => o,
            Value::Null => {
                *cur = Value::Object(Default::default());
                cur.as_object_mut().expect("just set")
            }
            _ => return Err(CliError::Usage(format!("cannot set {key}: {p} is inside a non-object"))),
        };
        if i + 1 == parts.len() {
            obj.insert(p.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(p.to_string()).or_insert(Value::Null);
    }
    Ok(())
}

pub fn resolve<T: Serialize + DeserializeOwned>(
    defaults: &T,
    file: Option<&Path>,
    overrides: &[(String, Value)],
) -> CliResult<T> {
    let mut v = serde_json::to_value(defaults).map_err(|e| CliError::Runtime(e.to_string()))?;
    if let Some(p) = file {
        let text = std::fs::read_to_string(p).map_err(|e| CliError::Data(format!("cannot read config {}: {e}", p.display())))?;
        let patch: Value =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {} is not valid JSON: {e}", p.display())))?;
        merge(&mut v, patch);
    }
    for (k, val) in overrides {
        set_path(&mut v, k, val.clone())?;
    }
    serde_json::from_value(v).map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))
}

/// `--out` if given, else `runs/<unix-seconds>-seed<seed>`.
pub fn output_dir(out: Option<&Path>, seed: u64) -> PathBuf {
    out.map(Path::to_path_buf).unwrap_or_else(|| {
        let t = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        PathBuf::from("runs").join(format!("{t}-seed{seed}"))
    })
}

pub fn write_snapshot<T: Serialize>(dir: &Path, cfg: &T) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    let p = dir.join("config.json");
    let text = serde_json::to_string_pretty(cfg).map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(&p, text + "\n").map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", p.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Inner {
        lr: f64,
        steps: usize,
    }

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Cfg {
        seed: u64,
        name: String,
        inner: Inner,
    }

    fn base() -> Cfg {
        Cfg {
            seed: 1,
            name: "a".into(),
            inner: Inner { lr: 0.1, steps: 3 },
        }
    }

    #[test]
    fn layering() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("c.json");
        std::fs::write(&f, r#"{"inner": {"steps": 9}}"#).unwrap();
        let o = vec![parse_override("inner.lr=0.5").unwrap(), parse_override("name=zz").unwrap()];
        let c: Cfg = resolve(&base(), Some(&f), &o).unwrap();
        assert_eq!(c.inner, Inner { lr: 0.5, steps: 9 });
        assert_eq!(c.name, "zz");
    }

    #[test]
    fn unknown_keys_rejected() {
        let o = vec![parse_override("inner.nope=1").unwrap()];
        assert!(matches!(resolve(&base(), None, &o), Err(CliError::Usage(_))));
        assert!(parse_override("novalue").is_err());
        assert!(matches!(resolve(&base(), Some(Path::new("/nonexistent.json")), &[]), Err(CliError::Data(_))));
    }

    #[test]
    fn snapshot_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        write_snapshot(dir.path(), &base()).unwrap();
        let back: Cfg = resolve(&base(), Some(&dir.path().join("config.json")), &[]).unwrap();
        assert_eq!(back, base());
    }
}
