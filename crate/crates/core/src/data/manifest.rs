//! Human-review sample and the dataset manifest.

use std::collections::BTreeMap;
use std::path::Path;

use molsyn_autodiff::rng::stream;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::sampling::Splits;
use crate::data::CotRecord;
use crate::error::{CoreError, Result};

/// `ceil(n * fraction)`, guarding against float noise such as
/// `1000 * 0.05 = 50.000000000000007`.
pub fn review_count(n: usize, fraction: f64) -> usize {
    let raw = n as f64 * fraction;
    let near = raw.round();
    let k = if (raw - near).abs() < 1e-9 { near } else { raw.ceil() };
    (k as usize).min(n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewRow {
    pub id: String,
    pub task: String,
    pub input: String,
    pub think: String,
    pub answer: String,
    pub accept: String,
    pub reject: String,
}

/// Seeded uniform sample of `ceil(fraction * n)` records, in input order.
pub fn validation_sample(records: &[CotRecord], fraction: f64, seed: u64) -> Result<Vec<ReviewRow>> {
    if records.is_empty() {
        return Err(CoreError::Data("no records to sample for review".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CoreError::Config(format!("review fraction must be in (0, 1], got {fraction}")));
    }
    let k = review_count(records.len(), fraction);
    let mut idx = sample(&mut stream(seed, "validation_sample"), records.len(), k).into_vec();
    idx.sort_unstable();
    Ok(idx
        .into_iter()
        .map(|i| {
            let r = &records[i];
            ReviewRow {
                id: r.id.clone(),
                task: r.task.name().to_string(),
                input: r.input.clone(),
                think: r.think.clone(),
                answer: r.answer.clone(),
                accept: String::new(),
                reject: String::new(),
            }
        })
        .collect())
}

pub fn write_review_csv(path: &Path, rows: &[ReviewRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CoreError::io(format!("creating {}", dir.display()), e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CoreError::io(format!("writing {}", path.display()), e))?;
    Ok(())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CoreError::io(format!("reading {}", path.display()), e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// split -> task -> count
    pub counts: BTreeMap<String, BTreeMap<String, usize>>,
    pub seeds: BTreeMap<String, u64>,
    pub reducer: String,
    pub files: BTreeMap<String, String>,
    pub deviations: Vec<String>,
}

impl DatasetManifest {
    pub fn from_splits(splits: &Splits) -> Self {
        let mut counts: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
        for (name, recs) in [("train", &splits.train), ("valid", &splits.valid), ("test", &splits.test)] {
            let e = counts.entry(name.to_string()).or_default();
            for r in recs {
                *e.entry(r.task.name().to_string()).or_default() += 1;
            }
        }
        Self {
            counts,
            ..Self::default()
        }
    }

    /// Records the sha256 of each file under its file name.
    pub fn add_files(&mut self, paths: &[&Path]) -> Result<()> {
        for p in paths {
            let name = p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned());
            self.files.insert(name, sha256_file(p)?);
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")
            .map_err(|e| CoreError::io(format!("writing {}", path.display()), e))
    }
}
