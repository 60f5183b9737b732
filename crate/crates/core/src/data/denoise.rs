//! Removes anchor sentences (ones that lean on a revealed answer) from
//! self-corrected reasoning.

use regex::{Regex, RegexBuilder};

use crate::data::annotate::{ChatClient, ChatMessage, SkipEntry};
use crate::data::CotRecord;
use crate::error::{CoreError, Result};

pub const DEFAULT_ANCHORS: &[&str] = &[
    r"i already know the (correct |right |final )?answer",
    r"i (already )?know (that )?the (correct |right )?answer is",
    r"(since|because|as) (we|i) (already )?know the (correct |right )?answer",
    r"the (correct|right) answer (is|was) (given|provided|revealed|stated)",
    r"given that the (correct |right )?answer is",
    r"(knowing|told) (that )?the (correct |right )?answer",
    r"i was told the answer",
    r"the provided answer",
    r"working backwards? from the (given |known )?answer",
];

pub struct Denoiser {
    patterns: Vec<Regex>,
}

impl Denoiser {
    pub fn new<S: AsRef<str>>(patterns: &[S]) -> Result<Self> {
        let patterns = patterns
            .iter()
            .map(|p| {
                RegexBuilder::new(p.as_ref())
                    .case_insensitive(true)
                    .build()
                    .map_err(|e| CoreError::Config(format!("bad anchor pattern {:?}: {e}", p.as_ref())))
            })
            .collect::<Result<_>>()?;
        Ok(Self { patterns })
    }

    pub fn has_anchor(&self, text: &str) -> bool {
        self.patterns.iter().any(|p| p.is_match(text))
    }

    /// Drops every sentence that matches an anchor pattern. Text without
    /// anchors is returned unchanged.
    pub fn clean(&self, text: &str) -> String {
        let sentences = split_sentences(text);
        if !sentences.iter().any(|s| self.has_anchor(s)) {
            return text.to_string();
        }
        let kept: String = sentences.into_iter().filter(|s| !self.has_anchor(s)).collect();
        kept.trim().to_string()
    }
}

impl Default for Denoiser {
    fn default() -> Self {
        Self::new(DEFAULT_ANCHORS).expect("default patterns compile")
    }
}

/// Sentences with their trailing whitespace; concatenating them gives back
/// the input.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?' | '\n') {
            let mut end = i + c.len_utf8();
            let at_break = chars.peek().is_none_or(|&(_, n)| n.is_whitespace());
            if !at_break {
                continue;
            }
            while let Some(&(j, n)) = chars.peek() {
                if !n.is_whitespace() {
                    break;
                }
                end = j + n.len_utf8();
                chars.next();
            }
            out.push(&text[start..end]);
            start = end;
        }
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DenoiseOutcome {
    pub records: Vec<CotRecord>,
    pub dropped: Vec<SkipEntry>,
}

/// Cleans records flagged `needs_denoise`; others pass through untouched.
/// With a client, the rule-cleaned think is also sent for a rewrite that
/// strips contradictions; the rewrite is kept only if it is non-empty and
/// anchor-free. Records whose think ends up empty are dropped.
pub fn denoise(records: &[CotRecord], denoiser: &Denoiser, client: Option<&dyn ChatClient>) -> DenoiseOutcome {
    let mut out = DenoiseOutcome::default();
    for r in records {
        if !r.flags.needs_denoise {
            out.records.push(r.clone());
            continue;
        }
        let mut think = denoiser.clean(&r.think);
        if let (Some(c), false) = (client, think.is_empty()) {
            let msgs = [
                ChatMessage::new("system", "You edit chemistry reasoning."),
                ChatMessage::new(
                    "user",
                    format!(
                        "Remove any statements that contradict each other or rely on already knowing the answer. Keep the reasoning that leads to {}. Reply with the edited reasoning only.\n\n{think}",
                        r.answer
                    ),
                ),
            ];
            match c.complete(&msgs) {
                Ok(t) if !t.trim().is_empty() && !denoiser.has_anchor(&t) => think = t.trim().to_string(),
                Ok(_) => log::warn!("rewrite of {} rejected; keeping rule-cleaned text", r.id),
                Err(e) => log::warn!("rewrite of {} failed ({e}); keeping rule-cleaned text", r.id),
            }
        }
        if think.is_empty() {
            log::warn!("dropping {}: think is empty after cleaning", r.id);
            out.dropped.push(SkipEntry {
                id: r.id.clone(),
                reason: "think emptied by denoising".into(),
            });
            continue;
        }
        let mut c = r.clone();
        c.think = think;
        c.flags.needs_denoise = false;
        c.flags.denoised = true;
        out.records.push(c);
    }
    out
}
