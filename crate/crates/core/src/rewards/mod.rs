//! Answer and think rewards, reward combination and standardization, and
//! evaluation metrics.

mod metrics;
mod text;

pub use metrics::{evaluate, write_report, MetricReport, INV_RMSE_CAP};
pub use text::{meteor, sentence_bleu};

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::specialist::{OutputFormat, TaskKind};

pub const ALPHA: f64 = 0.8;
pub const BETA: f64 = 0.2;
pub const THINK_CENTER: f64 = 1569.0;
pub const THINK_SIGMA: f64 = 500.0;
pub const STD_EPS: f64 = 1e-6;

/// Answer reward with a note when the prediction could not be scored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnswerReward {
    pub value: f64,
    pub diagnostic: Option<String>,
}

impl AnswerReward {
    fn ok(value: f64) -> Self {
        Self {
            value: value.clamp(0.0, 1.0),
            diagnostic: None,
        }
    }

    fn fail(msg: impl Into<String>) -> Self {
        Self {
            value: 0.0,
            diagnostic: Some(msg.into()),
        }
    }
}

/// `Yes`/`No`, case-insensitive.
pub fn parse_yes_no(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

/// Validity times fingerprint similarity; zero for unparseable or invalid
/// predictions.
pub fn smiles_reward(pred: &str, gold: &str) -> AnswerReward {
    let p = match molsyn_chem::parse_smiles(pred.trim()) {
        Ok(m) if m.validate() => m,
        Ok(_) => return AnswerReward::fail("prediction fails the valence check"),
        Err(e) => return AnswerReward::fail(format!("prediction does not parse: {e}")),
    };
    let g = match molsyn_chem::parse_smiles(gold.trim()) {
        Ok(m) => m,
        Err(e) => return AnswerReward::fail(format!("gold does not parse: {e}")),
    };
    AnswerReward::ok(molsyn_chem::tanimoto(
        &molsyn_chem::fingerprint(&p),
        &molsyn_chem::fingerprint(&g),
    ))
}

pub fn answer_reward(task: TaskKind, prediction: &str, gold: &str) -> AnswerReward {
    match task.output_format() {
        OutputFormat::YesNo => match (parse_yes_no(prediction), parse_yes_no(gold)) {
            (Some(p), Some(g)) => AnswerReward::ok(if p == g { 1.0 } else { 0.0 }),
            (None, _) => AnswerReward::fail("prediction is not Yes/No"),
            (_, None) => AnswerReward::fail("gold is not Yes/No"),
        },
        OutputFormat::Float => match (prediction.trim().parse::<f64>(), gold.trim().parse::<f64>()) {
            (Ok(p), Ok(g)) if p.is_finite() && g.is_finite() => AnswerReward::ok(1.0 / (1.0 + (p - g).abs())),
            (Ok(_), Ok(_)) => AnswerReward::fail("non-finite number"),
            (Err(_), _) => AnswerReward::fail("prediction is not a number"),
            (_, Err(_)) => AnswerReward::fail("gold is not a number"),
        },
        OutputFormat::Smiles | OutputFormat::Reaction => smiles_reward(prediction, gold),
        OutputFormat::Text => AnswerReward::ok(sentence_bleu(prediction, gold)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThinkStats {
    pub length: usize,
    pub unique_word_ratio: f64,
}

impl ThinkStats {
    pub fn of(text: &str) -> Self {
        let toks: Vec<&str> = text.split_whitespace().collect();
        let unique: HashSet<&str> = toks.iter().copied().collect();
        Self {
            length: text.chars().count(),
            unique_word_ratio: if toks.is_empty() {
                0.0
            } else {
                unique.len() as f64 / toks.len() as f64
            },
        }
    }
}

/// `0.5 * exp(-(len - 1569)^2 / (2 * 500^2)) + 0.5 * unique_word_ratio`,
/// zero for empty text.
pub fn think_reward(text: &str) -> f64 {
    if text.is_empty() {
        return 0.0;
    }
    let s = ThinkStats::of(text);
    let d = s.length as f64 - THINK_CENTER;
    0.5 * (-d * d / (2.0 * THINK_SIGMA * THINK_SIGMA)).exp() + 0.5 * s.unique_word_ratio
}

pub fn combine(r_answer: f64, r_think: f64, alpha: f64, beta: f64) -> f64 {
    alpha * r_answer + beta * r_think
}

/// `(r - mean) / (population std + 1e-6)`.
pub fn standardize(rewards: &[f64]) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    // A constant batch has no deviation; avoid rounding noise in the mean.
    if rewards.iter().all(|&r| r == rewards[0]) {
        return vec![0.0; rewards.len()];
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let denom = var.sqrt() + STD_EPS;
    rewards.iter().map(|r| (r - mean) / denom).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_answer: f64,
    pub r_think: f64,
    pub alpha: f64,
    pub beta: f64,
    pub r: f64,
    pub r_hat: f64,
    pub diagnostic: Option<String>,
}

/// Scores a batch of `(task, think, answer, gold)` and standardizes the
/// combined rewards across it.
pub fn score_batch(items: &[(TaskKind, &str, &str, &str)], alpha: f64, beta: f64) -> Vec<RewardBreakdown> {
    let mut out: Vec<RewardBreakdown> = items
        .iter()
        .map(|&(task, think, answer, gold)| {
            let a = answer_reward(task, answer, gold);
            let t = think_reward(think);
            RewardBreakdown {
                r_answer: a.value,
                r_think: t,
                alpha,
                beta,
                r: combine(a.value, t, alpha, beta),
                r_hat: 0.0,
                diagnostic: a.diagnostic,
            }
        })
        .collect();
    let rs: Vec<f64> = out.iter().map(|b| b.r).collect();
    for (b, h) in out.iter_mut().zip(standardize(&rs)) {
        b.r_hat = h;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn answer_examples() {
        assert_eq!(answer_reward(TaskKind::Bbbp, "Yes", "Yes").value, 1.0);
        assert_eq!(answer_reward(TaskKind::Bbbp, "no", "Yes").value, 0.0);
        let r = answer_reward(TaskKind::SmilesGeneration, "C(", "CCO");
        assert_eq!(r.value, 0.0);
        assert!(r.diagnostic.is_some());
        assert_eq!(answer_reward(TaskKind::Esol, "2.0", "2.0").value, 1.0);
        assert_eq!(answer_reward(TaskKind::Esol, "3.0", "2.0").value, 0.5);
        let r = answer_reward(TaskKind::Lipophilicity, "lots", "2.0");
        assert_eq!((r.value, r.diagnostic.is_some()), (0.0, true));
        assert_eq!(answer_reward(TaskKind::IupacToSmiles, "OCC", "CCO").value, 1.0);
        assert_eq!(answer_reward(TaskKind::Retrosynthesis, "CC.O", "O.CC").value, 1.0);
        assert!(answer_reward(TaskKind::MoleculeCaptioning, "a b c d", "a b c d").value > 0.999);
        assert_eq!(answer_reward(TaskKind::SmilesGeneration, "F=F", "CCO").value, 0.0);
    }

    #[test]
    fn think_examples() {
        // 1569 characters of distinct words.
        let mut text = String::from("w0");
        let mut i = 1;
        while text.len() + format!(" w{i}").len() <= 1560 {
            text.push_str(&format!(" w{i}"));
            i += 1;
        }
        text.push(' ');
        text.push_str(&"z".repeat(1569 - text.len()));
        let s = ThinkStats::of(&text);
        assert_eq!(s.length, 1569);
        assert_eq!(s.unique_word_ratio, 1.0);
        assert_eq!(think_reward(&text), 1.0);
        assert_eq!(think_reward(""), 0.0);

        let a4 = format!("a a a a{}", " ".repeat(1569 - 7));
        assert_eq!(a4.chars().count(), 1569);
        assert!((think_reward(&a4) - 0.625).abs() < 1e-15);

        // Maximum of the length term sits at 1569.
        let len_term = |n: usize| think_reward(&"x".repeat(n)) - 0.5;
        assert!(len_term(1569) > len_term(1568) && len_term(1569) > len_term(1570));
    }

    #[test]
    fn standardize_examples() {
        assert_eq!(standardize(&[0.7, 0.7, 0.7]), vec![0.0, 0.0, 0.0]);
        let s = standardize(&[0.0, 1.0]);
        let expect = 0.5 / (0.5 + 1e-6);
        assert!((s[0] + expect).abs() < 1e-15 && (s[1] - expect).abs() < 1e-15);
        assert_eq!(standardize(&[0.3]), vec![0.0]);
    }

    #[test]
    fn batch_scoring() {
        let b = score_batch(
            &[(TaskKind::Bbbp, "", "Yes", "Yes"), (TaskKind::Bbbp, "", "No", "Yes")],
            ALPHA,
            BETA,
        );
        assert_eq!(b[0].r, 0.8);
        assert_eq!(b[1].r, 0.0);
        assert!(b[0].r_hat > 0.99 && b[1].r_hat < -0.99);
    }

    proptest! {
        #[test]
        fn standardized_moments(rs in prop::collection::vec(-10.0f64..10.0, 2..40)) {
            let s = standardize(&rs);
            let n = s.len() as f64;
            let mean = s.iter().sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-9);
            let m0 = rs.iter().sum::<f64>() / n;
            let var0 = rs.iter().map(|r| (r - m0).powi(2)).sum::<f64>() / n;
            if var0 > 1e-6 {
                let sd = (s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
                prop_assert!((sd - 1.0).abs() < 1e-4);
            }
        }

        #[test]
        fn shift_scale_equivariant(rs in prop::collection::vec(-5.0f64..5.0, 2..20), a in 0.5f64..4.0, b in -3.0f64..3.0) {
            let n = rs.len() as f64;
            let m = rs.iter().sum::<f64>() / n;
            let sd = (rs.iter().map(|r| (r - m).powi(2)).sum::<f64>() / n).sqrt();
            prop_assume!(sd > 0.1);
            let x = standardize(&rs);
            let y = standardize(&rs.iter().map(|r| a * r + b).collect::<Vec<_>>());
            for (p, q) in x.iter().zip(&y) {
                // Equal up to the epsilon in the denominator.
                prop_assert!((p - q).abs() < 1e-5);
            }
        }

        #[test]
        fn combination_between(ra in 0.0f64..1.0, rt in 0.0f64..1.0) {
            let r = combine(ra, rt, ALPHA, BETA);
            prop_assert!(r >= ra.min(rt) - 1e-15 && r <= ra.max(rt) + 1e-15);
            prop_assert_eq!(combine(ra, rt, 1.0, 0.0), ra);
        }

        #[test]
        fn think_reward_bounded(s in "[a-z ]{0,300}") {
            let r = think_reward(&s);
            prop_assert!((0.0..=1.0).contains(&r));
        }
    }
}
