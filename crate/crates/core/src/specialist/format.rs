//! Prompt and target layouts shared by training and inference.

use crate::error::{CoreError, Result};
use crate::specialist::TaskKind;
use crate::tokenizer::{ANSWER_CLOSE, ANSWER_OPEN, BOS, EOS, THINK_CLOSE, THINK_OPEN};

/// `<bos>⟨task:T⟩{input}⟨answer⟩`; the prediction adapter continues with the answer.
pub fn prediction_prompt(task: TaskKind, input: &str) -> String {
    format!("{BOS}{}{input}{ANSWER_OPEN}", task.tag())
}

pub fn prediction_target(answer: &str) -> String {
    format!("{answer}{ANSWER_CLOSE}{EOS}")
}

/// `<bos>⟨task:T⟩{input}\nDraft: {draft}\n`; the inference adapter continues
/// with the think and answer spans.
pub fn inference_prompt(task: TaskKind, input: &str, draft: &str) -> String {
    format!("{BOS}{}{input}\nDraft: {draft}\n", task.tag())
}

pub fn cot_target(think: &str, answer: &str) -> String {
    format!("{THINK_OPEN}{think}{THINK_CLOSE}{ANSWER_OPEN}{answer}{ANSWER_CLOSE}{EOS}")
}

/// Text of a prediction-phase continuation: everything before `⟨/answer⟩`
/// or `<eos>`.
pub fn extract_draft(output: &str) -> String {
    let end = [output.find(ANSWER_CLOSE), output.find(EOS)]
        .into_iter()
        .flatten()
        .min()
        .unwrap_or(output.len());
    output[..end].trim().to_string()
}

/// Think and answer spans of an inference continuation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CotSpans {
    pub think: String,
    pub answer: String,
}

fn between<'a>(text: &'a str, open: &str, close: &str) -> Option<(&'a str, usize)> {
    let start = text.find(open)? + open.len();
    let len = text[start..].find(close)?;
    Some((&text[start..start + len], start + len + close.len()))
}

/// Extracts the answer span (required) and think span (empty when absent).
pub fn parse_cot(output: &str) -> Result<CotSpans> {
    let malformed = |reason: &str| CoreError::MalformedOutput {
        reason: reason.into(),
        raw: output.to_string(),
    };
    let (answer, _) = between(output, ANSWER_OPEN, ANSWER_CLOSE).ok_or_else(|| malformed("missing answer span"))?;
    let think = between(output, THINK_OPEN, THINK_CLOSE).map_or("", |(t, _)| t);
    Ok(CotSpans {
        think: think.trim().to_string(),
        answer: answer.trim().to_string(),
    })
}

/// Both spans present, in order, with a non-empty think and answer.
pub fn is_well_formed(output: &str) -> bool {
    let Some(rest) = output.strip_prefix(THINK_OPEN) else {
        return false;
    };
    let Some(tc) = rest.find(THINK_CLOSE) else {
        return false;
    };
    let think = &rest[..tc];
    let after = &rest[tc + THINK_CLOSE.len()..];
    let Some(after) = after.strip_prefix(ANSWER_OPEN) else {
        return false;
    };
    let Some(ac) = after.find(ANSWER_CLOSE) else {
        return false;
    };
    let answer = &after[..ac];
    !think.trim().is_empty()
        && !answer.trim().is_empty()
        && ![THINK_OPEN, THINK_CLOSE, ANSWER_OPEN].iter().any(|m| think.contains(m) || answer.contains(m))
}
