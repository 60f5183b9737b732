//! JSON Lines record formats.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rewards::parse_yes_no;
use crate::specialist::{OutputFormat, TaskKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskRecord {
    pub task: TaskKind,
    pub input: String,
    pub output: String,
    pub id: String,
}

impl TaskRecord {
    pub fn new(task: TaskKind, input: impl Into<String>, output: impl Into<String>, id: impl Into<String>) -> Self {
        Self {
            task,
            input: input.into(),
            output: output.into(),
            id: id.into(),
        }
    }

    /// Non-empty fields and an output in the task's format.
    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(CoreError::Data(format!("record {}: {m}", self.id)));
        if self.id.is_empty() {
            return Err(CoreError::Data("record without id".into()));
        }
        if self.input.trim().is_empty() || self.output.trim().is_empty() {
            return bad("empty input or output");
        }
        match self.task.output_format() {
            OutputFormat::YesNo if parse_yes_no(&self.output).is_none() => bad("output is not Yes/No"),
            OutputFormat::Float if self.output.trim().parse::<f64>().map_or(true, |v| !v.is_finite()) => {
                bad("output is not a number")
            }
            OutputFormat::Smiles | OutputFormat::Reaction if !molsyn_chem::is_valid_smiles(self.output.trim()) => {
                bad("output is not a valid SMILES")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CotFlags {
    pub annotated: bool,
    pub needs_denoise: bool,
    pub denoised: bool,
    pub manually_validated: bool,
}

/// Query / think / answer triplet over a task record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CotRecord {
    pub task: TaskKind,
    pub input: String,
    pub output: String,
    pub id: String,
    pub think: String,
    pub answer: String,
    pub flags: CotFlags,
}

impl CotRecord {
    pub fn new(base: &TaskRecord, think: impl Into<String>, answer: impl Into<String>, flags: CotFlags) -> Self {
        Self {
            task: base.task,
            input: base.input.clone(),
            output: base.output.clone(),
            id: base.id.clone(),
            think: think.into(),
            answer: answer.into(),
            flags,
        }
    }

    pub fn record(&self) -> TaskRecord {
        TaskRecord::new(self.task, self.input.clone(), self.output.clone(), self.id.clone())
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(CoreError::MissingFile(path.to_path_buf()));
    }
    let f = std::fs::File::open(path).map_err(|e| CoreError::io(format!("opening {}", path.display()), e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| CoreError::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line)
            .map_err(|e| CoreError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for it in items {
        serde_json::to_writer(&mut buf, it)?;
        buf.push(b'\n');
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CoreError::io(format!("creating {}", dir.display()), e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| CoreError::io(format!("creating {}", path.display()), e))?;
    f.write_all(&buf)
        .map_err(|e| CoreError::io(format!("writing {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_order_is_fixed() {
        let r = TaskRecord::new(TaskKind::Bbbp, "CCO", "Yes", "b1");
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"task":"BBBP","input":"CCO","output":"Yes","id":"b1"}"#
        );
        let c = CotRecord::new(&r, "t", "Yes", CotFlags::default());
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.starts_with(r#"{"task":"BBBP","input":"CCO","output":"Yes","id":"b1","think":"t","answer":"Yes","flags":{"#));
    }

    #[test]
    fn checks_formats() {
        assert!(TaskRecord::new(TaskKind::Bbbp, "CCO", "Yes", "a").check().is_ok());
        assert!(TaskRecord::new(TaskKind::Bbbp, "CCO", "maybe", "a").check().is_err());
        assert!(TaskRecord::new(TaskKind::Esol, "CCO", "x", "a").check().is_err());
        assert!(TaskRecord::new(TaskKind::SmilesGeneration, "ethanol", "C(", "a").check().is_err());
        assert!(TaskRecord::new(TaskKind::MoleculeCaptioning, "CCO", "", "a").check().is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/r.jsonl");
        let rs = vec![
            TaskRecord::new(TaskKind::Esol, "CCO", "0.5", "e1"),
            TaskRecord::new(TaskKind::Bbbp, "CN", "No", "b1"),
        ];
        write_jsonl(&p, &rs).unwrap();
        assert_eq!(read_jsonl::<TaskRecord>(&p).unwrap(), rs);
        std::fs::write(&p, "{\"task\":\"BBBP\"}\n").unwrap();
        assert!(read_jsonl::<TaskRecord>(&p).is_err());
        assert!(matches!(
            read_jsonl::<TaskRecord>(&dir.path().join("none")),
            Err(CoreError::MissingFile(_))
        ));
    }
}
