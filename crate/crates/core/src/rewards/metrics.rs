use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rewards::{meteor, parse_yes_no};
use crate::specialist::{OutputFormat, TaskKind};

/// Reported `1/RMSE` when every residual is zero.
pub const INV_RMSE_CAP: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: TaskKind,
    pub metric: String,
    pub value: f64,
    pub n: usize,
    pub secondary: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

const FINGERPRINT_NOTE: &str =
    "similarity uses 2048-bit hashed linear-path fingerprints (paths of up to 7 bonds) in place of MACCS keys";
const METEOR_NOTE: &str =
    "METEOR-style: exact and stem matches only, no synonym tables; fragmentation penalty 0.5*((chunks-1)/(m-1))^3";

fn canonical(s: &str) -> Option<(String, molsyn_chem::Fingerprint)> {
    let m = molsyn_chem::parse_smiles(s.trim()).ok()?;
    let c = molsyn_chem::canonicalize(&m).ok()?;
    Some((c, molsyn_chem::fingerprint(&m)))
}

pub fn evaluate(task: TaskKind, predictions: &[String], golds: &[String]) -> Result<MetricReport> {
    if predictions.len() != golds.len() {
        return Err(CoreError::Data(format!(
            "{} predictions for {} references",
            predictions.len(),
            golds.len()
        )));
    }
    let n = predictions.len();
    let mut secondary = BTreeMap::new();
    let mut notes = Vec::new();
    let denom = n.max(1) as f64;
    let (metric, value) = match task.output_format() {
        OutputFormat::Text => {
            notes.push(METEOR_NOTE.to_string());
            let s: f64 = predictions.iter().zip(golds).map(|(p, g)| meteor(p, g)).sum();
            ("meteor_style", s / denom)
        }
        OutputFormat::Smiles | OutputFormat::Reaction => {
            notes.push(FINGERPRINT_NOTE.to_string());
            let mut sim = 0.0;
            let mut exact = 0usize;
            let mut invalid = 0usize;
            for (p, g) in predictions.iter().zip(golds) {
                match (canonical(p), canonical(g)) {
                    (Some((cp, fp)), Some((cg, fg))) => {
                        sim += molsyn_chem::tanimoto(&fp, &fg);
                        exact += usize::from(cp == cg);
                    }
                    (None, _) => invalid += 1,
                    (_, None) => return Err(CoreError::Data(format!("reference {g:?} is not a valid SMILES"))),
                }
            }
            secondary.insert("exact_match".into(), exact as f64 / denom);
            secondary.insert("validity".into(), (n - invalid) as f64 / denom);
            ("tanimoto", sim / denom)
        }
        OutputFormat::YesNo => {
            let correct = predictions
                .iter()
                .zip(golds)
                .filter(|(p, g)| parse_yes_no(p).is_some() && parse_yes_no(p) == parse_yes_no(g))
                .count();
            ("accuracy", correct as f64 / denom)
        }
        OutputFormat::Float => {
            let mut sq = 0.0;
            let mut unparsed = 0;
            for (p, g) in predictions.iter().zip(golds) {
                let g: f64 = g
                    .trim()
                    .parse()
                    .map_err(|_| CoreError::Data(format!("reference {g:?} is not a number")))?;
                let p = match p.trim().parse::<f64>() {
                    Ok(v) if v.is_finite() => v,
                    _ => {
                        unparsed += 1;
                        0.0
                    }
                };
                sq += (p - g) * (p - g);
            }
            let rmse = (sq / denom).sqrt();
            if unparsed > 0 {
                notes.push(format!("{unparsed} unparseable prediction(s) scored as 0"));
            }
            secondary.insert("rmse".into(), rmse);
            let inv = if rmse == 0.0 { INV_RMSE_CAP } else { (1.0 / rmse).min(INV_RMSE_CAP) };
            ("inverse_rmse", inv)
        }
    };
    Ok(MetricReport {
        task,
        metric: metric.into(),
        value,
        n,
        secondary,
        notes,
    })
}

/// Pretty JSON list of reports.
pub fn write_report(path: &Path, reports: &[MetricReport]) -> Result<()> {
    let text = serde_json::to_string_pretty(reports)?;
    std::fs::write(path, text + "\n").map_err(|e| CoreError::io(format!("writing {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn classification_and_regression() {
        let r = evaluate(TaskKind::Bbbp, &v(&["Yes", "No"]), &v(&["Yes", "No"])).unwrap();
        assert_eq!((r.metric.as_str(), r.value, r.n), ("accuracy", 1.0, 2));
        let r = evaluate(TaskKind::Esol, &v(&["1.0", "2"]), &v(&["1", "2.0"])).unwrap();
        assert_eq!(r.value, INV_RMSE_CAP);
        let r = evaluate(TaskKind::Esol, &v(&["3.0", "2.0"]), &v(&["1.0", "2.0"])).unwrap();
        // RMSE = sqrt(4/2).
        assert!((r.value - 1.0 / 2f64.sqrt()).abs() < 1e-12);
        assert!(evaluate(TaskKind::Esol, &v(&["1"]), &v(&[])).is_err());
    }

    #[test]
    fn smiles_and_text() {
        let r = evaluate(TaskKind::IupacToSmiles, &v(&["OCC", "C("]), &v(&["CCO", "CC"])).unwrap();
        assert_eq!(r.value, 0.5);
        assert_eq!(r.secondary["exact_match"], 0.5);
        assert_eq!(r.secondary["validity"], 0.5);
        let r = evaluate(TaskKind::MoleculeCaptioning, &v(&["the cat sat"]), &v(&["the cat sat"])).unwrap();
        assert_eq!(r.value, 1.0);
        assert!(!r.notes.is_empty());
    }

    #[test]
    fn report_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("metrics.json");
        let r = evaluate(TaskKind::Bbbp, &v(&["Yes"]), &v(&["No"])).unwrap();
        write_report(&p, &[r.clone()]).unwrap();
        let back: Vec<MetricReport> = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        assert_eq!(back, vec![r]);
    }
}
