//! Reasoning-chain paths: think text is split into steps, each step gets a
//! letter from a rule-based taxonomy, and path frequencies are tabulated.

use std::collections::BTreeMap;
use std::path::Path;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use crate::data::denoise::split_sentences;
use crate::data::CotRecord;
use crate::error::{CoreError, Result};

pub const OTHER_LABEL: &str = "O";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepLabel {
    pub letter: String,
    pub name: String,
    /// Case-insensitive regexes; a step matching any of them gets the label.
    pub patterns: Vec<String>,
}

/// Labels are tried in order; the first match wins.
#[derive(Clone, Debug)]
pub struct ChainTaxonomy {
    labels: Vec<(StepLabel, Vec<Regex>)>,
}

impl ChainTaxonomy {
    pub fn new(labels: Vec<StepLabel>) -> Result<Self> {
        if labels.is_empty() {
            return Err(CoreError::Config("taxonomy has no labels".into()));
        }
        let mut out = Vec::new();
        for l in labels {
            if l.letter.is_empty() || l.letter == OTHER_LABEL {
                return Err(CoreError::Config(format!("invalid label letter {:?}", l.letter)));
            }
            let res = l
                .patterns
                .iter()
                .map(|p| {
                    RegexBuilder::new(p)
                        .case_insensitive(true)
                        .build()
                        .map_err(|e| CoreError::Config(format!("bad pattern {p:?} for {}: {e}", l.letter)))
                })
                .collect::<Result<Vec<_>>>()?;
            out.push((l, res));
        }
        Ok(Self { labels: out })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::new(serde_json::from_str(text)?)
    }

    pub fn labels(&self) -> Vec<StepLabel> {
        self.labels.iter().map(|(l, _)| l.clone()).collect()
    }

    pub fn label(&self, step: &str) -> &str {
        self.labels
            .iter()
            .find(|(_, res)| res.iter().any(|r| r.is_match(step)))
            .map_or(OTHER_LABEL, |(l, _)| l.letter.as_str())
    }

    /// Letters of each step with consecutive repeats collapsed, joined by `→`.
    pub fn path(&self, think: &str) -> String {
        let mut letters: Vec<&str> = Vec::new();
        for s in segment_steps(think) {
            let l = self.label(&s);
            if letters.last() != Some(&l) {
                letters.push(l);
            }
        }
        if letters.is_empty() {
            letters.push(OTHER_LABEL);
        }
        letters.join("→")
    }
}

impl Default for ChainTaxonomy {
    /// Analysis, Comparison, Evidence recall, Inference.
    fn default() -> Self {
        let l = |letter: &str, name: &str, patterns: &[&str]| StepLabel {
            letter: letter.into(),
            name: name.into(),
            patterns: patterns.iter().map(|p| p.to_string()).collect(),
        };
        Self::new(vec![
            l("I", "inference", &[r"\b(therefore|thus|hence|in conclusion|we conclude|it follows|so the answer)\b"]),
            l("C", "comparison", &[r"\b(compar\w*|similar\w*|differ\w*|versus|relative to|more \w+ than|less \w+ than)\b"]),
            l("E", "evidence recall", &[r"\b(known|reported|literature|recall|evidence|studies|typically)\b"]),
            l("A", "analysis", &[r"\b(analy[sz]\w*|the (question|problem|task) asks|we need to|let'?s (look|examine|identify)|identify|structure)\b"]),
        ])
        .expect("default taxonomy compiles")
    }
}

/// Paragraphs separated by blank lines; a single paragraph is split into
/// sentences instead.
pub fn segment_steps(think: &str) -> Vec<String> {
    let paras: Vec<String> = think
        .split("\n\n")
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(str::to_string)
        .collect();
    if paras.len() > 1 {
        return paras;
    }
    split_sentences(think)
        .into_iter()
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// Relative frequency of each path, most frequent first (ties by path).
pub fn chain_distribution(records: &[CotRecord], taxonomy: &ChainTaxonomy) -> Result<Vec<(String, f64)>> {
    if records.is_empty() {
        return Err(CoreError::Data("empty CoT corpus".into()));
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for r in records {
        *counts.entry(taxonomy.path(&r.think)).or_default() += 1;
    }
    let n = records.len() as f64;
    let mut out: Vec<(String, f64)> = counts.into_iter().map(|(p, c)| (p, c as f64 / n)).collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}

pub fn write_chains_csv(path: &Path, dist: &[(String, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["path", "frequency"])?;
    for (p, f) in dist {
        w.write_record([p.as_str(), &f.to_string()])?;
    }
    w.flush().map_err(|e| CoreError::io(format!("writing {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CotFlags, TaskRecord};
    use crate::specialist::TaskKind;
    use proptest::prelude::*;

    fn rec(think: &str) -> CotRecord {
        let t = TaskRecord::new(TaskKind::Bbbp, "CN", "Yes", "r");
        CotRecord::new(&t, think, "Yes", CotFlags::default())
    }

    const A: &str = "We need to identify the functional groups.";
    const C: &str = "Compared to ethanol, this chain is longer.";
    const E: &str = "Amines are known to cross membranes.";
    const I: &str = "Therefore the answer is Yes.";

    #[test]
    fn single_record() {
        let t = ChainTaxonomy::default();
        let d = chain_distribution(&[rec(&format!("{A} {C} {I}"))], &t).unwrap();
        assert_eq!(d, vec![("A→C→I".to_string(), 1.0)]);
        assert!(chain_distribution(&[], &t).is_err());
    }

    #[test]
    fn paragraphs_and_other() {
        let t = ChainTaxonomy::default();
        assert_eq!(segment_steps(&format!("{A} {C}\n\n{I}")).len(), 2);
        assert_eq!(t.label("The sky is blue."), OTHER_LABEL);
        assert_eq!(t.path(&format!("{A} {A} {I}")), "A→I");
        assert_eq!(t.path(""), "O");
    }

    #[test]
    fn custom_taxonomy() {
        let t = ChainTaxonomy::from_json(r#"[{"letter":"X","name":"x","patterns":["carbon"]}]"#).unwrap();
        assert_eq!(t.path("Two carbon atoms. Then oxygen."), "X→O");
        assert!(ChainTaxonomy::from_json(r#"[{"letter":"O","name":"x","patterns":[]}]"#).is_err());
    }

    #[test]
    fn recovers_mix() {
        let t = ChainTaxonomy::default();
        let mut corpus = Vec::new();
        corpus.extend((0..260).map(|_| rec(&format!("{A} {C} {E} {I}"))));
        corpus.extend((0..197).map(|_| rec(&format!("{A} {C} {I}"))));
        corpus.extend((0..543).map(|_| rec(&format!("{A} {I}"))));
        let d: BTreeMap<_, _> = chain_distribution(&corpus, &t).unwrap().into_iter().collect();
        assert!((d["A→C→E→I"] - 0.26).abs() < 0.005);
        assert!((d["A→C→I"] - 0.197).abs() < 0.005);
    }

    proptest! {
        #[test]
        fn sums_to_one(picks in proptest::collection::vec(0usize..4, 1..60)) {
            let parts = [A, C, E, I];
            let corpus: Vec<_> = picks.iter().enumerate().map(|(i, &p)| rec(&format!("{} {}", parts[p], parts[(p + i) % 4]))).collect();
            let d = chain_distribution(&corpus, &ChainTaxonomy::default()).unwrap();
            prop_assert!((d.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
