//! CoT annotation through a chat-completion service. Each record is asked
//! for reasoning in a think/answer format; a wrong answer triggers one
//! self-correction round with the gold answer revealed, and the result is
//! flagged for denoising.

use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::data::{CotFlags, CotRecord, TaskRecord};
use crate::error::{CoreError, Result};
use crate::rewards::parse_yes_no;
use crate::specialist::{OutputFormat, TaskKind};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        Self {
            role: role.into(),
            content: content.into(),
        }
    }
}

/// A chat-completion backend. Transport problems are `CoreError::Transport`.
pub trait ChatClient: Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_key_env() -> String {
    "MOLSYN_CHAT_API_KEY".into()
}

fn default_timeout() -> u64 {
    60
}

/// OpenAI-style `POST {endpoint}` with `{model, messages}`; reads
/// `choices[0].message.content`.
pub struct HttpChatClient {
    config: ChatConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpChatClient {
    pub fn new(config: ChatConfig) -> Self {
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .new_agent();
        Self {
            config,
            api_key,
            agent,
        }
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    message: ChatMessage,
}

impl ChatClient for HttpChatClient {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String> {
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let body = serde_json::json!({ "model": self.config.model, "messages": messages });
        let mut resp = req.send_json(&body).map_err(|e| CoreError::Transport(e.to_string()))?;
        let parsed: CompletionResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| CoreError::Transport(format!("bad response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| CoreError::Transport("response has no choices".into()))
    }
}

/// Scripted offline client. Replies are queued per record input and
/// consumed in order; an `Err` entry simulates a transport failure.
#[derive(Default)]
pub struct MockChatClient {
    script: Mutex<BTreeMap<String, VecDeque<std::result::Result<String, String>>>>,
    calls: AtomicUsize,
}

impl MockChatClient {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reply(self, input: &str, text: &str) -> Self {
        self.push(input, Ok(text.to_string()))
    }

    pub fn fail(self, input: &str, reason: &str) -> Self {
        self.push(input, Err(reason.to_string()))
    }

    fn push(self, input: &str, r: std::result::Result<String, String>) -> Self {
        self.script
            .lock()
            .expect("mock lock")
            .entry(input.to_string())
            .or_default()
            .push_back(r);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatClient for MockChatClient {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let first = messages.iter().find(|m| m.role == "user").map_or("", |m| m.content.as_str());
        let mut script = self.script.lock().expect("mock lock");
        let key = script
            .keys()
            .filter(|k| first.contains(k.as_str()))
            .max_by_key(|k| k.len())
            .cloned()
            .ok_or_else(|| CoreError::Transport("mock has no script for this query".into()))?;
        match script.get_mut(&key).and_then(|q| q.pop_front()) {
            Some(Ok(text)) => Ok(text),
            Some(Err(reason)) => Err(CoreError::Transport(reason)),
            None => Err(CoreError::Transport("mock script exhausted".into())),
        }
    }
}

/// Task-aware answer equality: canonical SMILES, case-insensitive Yes/No,
/// numbers within 1e-3, otherwise exact after trimming.
pub fn answers_match(task: TaskKind, pred: &str, gold: &str) -> bool {
    let (p, g) = (pred.trim(), gold.trim());
    match task.output_format() {
        OutputFormat::Smiles | OutputFormat::Reaction => {
            match (molsyn_chem::canonical_smiles(p), molsyn_chem::canonical_smiles(g)) {
                (Ok(a), Ok(b)) => a == b,
                _ => p == g,
            }
        }
        OutputFormat::YesNo => matches!((parse_yes_no(p), parse_yes_no(g)), (Some(a), Some(b)) if a == b),
        OutputFormat::Float => match (p.parse::<f64>(), g.parse::<f64>()) {
            (Ok(a), Ok(b)) => (a - b).abs() <= 1e-3,
            _ => false,
        },
        OutputFormat::Text => p == g,
    }
}

/// Think and answer from a reply using `<think>`/`<answer>` tags (or the
/// model's own markers).
pub fn extract_reply(text: &str) -> Option<(String, String)> {
    static RE: std::sync::OnceLock<(Regex, Regex)> = std::sync::OnceLock::new();
    let (think, answer) = RE.get_or_init(|| {
        (
            Regex::new(r"(?s)(?:<think>|⟨think⟩)(.*?)(?:</think>|⟨/think⟩)").expect("valid"),
            Regex::new(r"(?s)(?:<answer>|⟨answer⟩)(.*?)(?:</answer>|⟨/answer⟩)").expect("valid"),
        )
    });
    let t = think.captures(text)?.get(1)?.as_str().trim().to_string();
    let a = answer.captures(text)?.get(1)?.as_str().trim().to_string();
    (!t.is_empty() && !a.is_empty()).then_some((t, a))
}

pub fn query_prompt(r: &TaskRecord) -> String {
    format!(
        "Task: {}\nQuery: {}\nReason step by step inside <think></think>, then give only the final answer inside <answer></answer>.",
        r.task.name(),
        r.input
    )
}

pub fn correction_prompt(gold: &str) -> String {
    format!(
        "That answer is wrong; the correct answer is {gold}. Rewrite your reasoning so it arrives at this answer, in the same <think></think><answer></answer> format."
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotateConfig {
    /// Retries after the first failed attempt.
    pub retries: u32,
    pub backoff_ms: u64,
    pub parallelism: usize,
}

impl Default for AnnotateConfig {
    fn default() -> Self {
        Self {
            retries: 3,
            backoff_ms: 500,
            parallelism: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkipEntry {
    pub id: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Annotation {
    pub records: Vec<CotRecord>,
    pub skipped: Vec<SkipEntry>,
}

fn with_retries(client: &dyn ChatClient, messages: &[ChatMessage], cfg: &AnnotateConfig) -> Result<String> {
    let mut attempt = 0;
    loop {
        match client.complete(messages) {
            Ok(t) => return Ok(t),
            Err(CoreError::Transport(e)) if attempt < cfg.retries => {
                let wait = cfg.backoff_ms.saturating_mul(1 << attempt);
                log::warn!("chat request failed ({e}); retrying in {wait} ms");
                std::thread::sleep(Duration::from_millis(wait));
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

fn annotate_one(client: &dyn ChatClient, r: &TaskRecord, cfg: &AnnotateConfig) -> std::result::Result<CotRecord, String> {
    let mut messages = vec![
        ChatMessage::new("system", "You are an expert chemist."),
        ChatMessage::new("user", query_prompt(r)),
    ];
    let first = with_retries(client, &messages, cfg).map_err(|e| e.to_string())?;
    if let Some((think, answer)) = extract_reply(&first) {
        if answers_match(r.task, &answer, &r.output) {
            let flags = CotFlags {
                annotated: true,
                ..CotFlags::default()
            };
            return Ok(CotRecord::new(r, think, answer, flags));
        }
    }
    messages.push(ChatMessage::new("assistant", first));
    messages.push(ChatMessage::new("user", correction_prompt(&r.output)));
    let second = with_retries(client, &messages, cfg).map_err(|e| e.to_string())?;
    match extract_reply(&second) {
        Some((think, answer)) if answers_match(r.task, &answer, &r.output) => {
            let flags = CotFlags {
                annotated: true,
                needs_denoise: true,
                ..CotFlags::default()
            };
            Ok(CotRecord::new(r, think, answer, flags))
        }
        Some(_) => Err("answer still wrong after self-correction".into()),
        None => Err("reply lacks think or answer tags after self-correction".into()),
    }
}

/// Annotates records with up to `cfg.parallelism` requests in flight.
/// Output preserves input order; failures go to the skip log.
pub fn annotate_cot(records: &[TaskRecord], client: &dyn ChatClient, cfg: &AnnotateConfig) -> Annotation {
    let results: Vec<Mutex<Option<std::result::Result<CotRecord, String>>>> =
        records.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..cfg.parallelism.max(1).min(records.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(r) = records.get(i) else { break };
                *results[i].lock().expect("result slot") = Some(annotate_one(client, r, cfg));
            });
        }
    });
    let mut out = Annotation::default();
    for (r, slot) in records.iter().zip(results) {
        match slot.into_inner().expect("result slot").expect("every record processed") {
            Ok(c) => out.records.push(c),
            Err(reason) => {
                log::warn!("skipping {}: {reason}", r.id);
                out.skipped.push(SkipEntry {
                    id: r.id.clone(),
                    reason,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fast() -> AnnotateConfig {
        AnnotateConfig {
            backoff_ms: 1,
            ..AnnotateConfig::default()
        }
    }

    fn rec(task: TaskKind, input: &str, output: &str) -> TaskRecord {
        TaskRecord::new(task, input, output, format!("id-{input}"))
    }

    #[test]
    fn correct_reply_is_annotated() {
        let r = rec(TaskKind::Bbbp, "CCN", "Yes");
        let mock = MockChatClient::new().reply("CCN", "<think>an amine crosses</think><answer>yes</answer>");
        let a = annotate_cot(&[r], &mock, &fast());
        assert_eq!(a.records.len(), 1);
        assert!(a.records[0].flags.annotated && !a.records[0].flags.needs_denoise);
        assert_eq!(a.records[0].think, "an amine crosses");
    }

    #[test]
    fn corrected_reply_needs_denoise() {
        let r = rec(TaskKind::IupacToSmiles, "ethanol", "CCO");
        let mock = MockChatClient::new()
            .reply("ethanol", "<think>two carbons</think><answer>CC</answer>")
            .reply("ethanol", "<think>I already know the correct answer is CCO. Two carbons and a hydroxyl.</think><answer>OCC</answer>");
        let a = annotate_cot(&[r], &mock, &fast());
        assert_eq!(a.records.len(), 1);
        assert!(a.records[0].flags.needs_denoise);
        assert_eq!(mock.calls(), 2);
    }

    #[test]
    fn four_timeouts_skip_the_record() {
        let ok = rec(TaskKind::Esol, "CO", "1");
        let bad = rec(TaskKind::Esol, "OO", "2");
        let mut mock = MockChatClient::new().reply("CO", "<think>one oxygen</think><answer>1.0004</answer>");
        for _ in 0..4 {
            mock = mock.fail("OO", "timed out");
        }
        let a = annotate_cot(&[ok, bad], &mock, &fast());
        assert_eq!(a.records.len(), 1);
        assert_eq!(a.records[0].id, "id-CO");
        assert_eq!(a.skipped.len(), 1);
        assert_eq!(a.skipped[0].id, "id-OO");
        assert!(a.skipped[0].reason.contains("timed out"));
        assert_eq!(mock.calls(), 5);
    }

    #[test]
    fn three_timeouts_then_success() {
        let r = rec(TaskKind::Bbbp, "CC", "No");
        let mock = MockChatClient::new()
            .fail("CC", "timed out")
            .fail("CC", "timed out")
            .fail("CC", "timed out")
            .reply("CC", "<think>no nitrogen</think><answer>No</answer>");
        assert_eq!(annotate_cot(&[r], &mock, &fast()).records.len(), 1);
    }

    #[test]
    fn matching_rules() {
        assert!(answers_match(TaskKind::SmilesGeneration, "OCC", "CCO"));
        assert!(!answers_match(TaskKind::SmilesGeneration, "CCC", "CCO"));
        assert!(answers_match(TaskKind::Bbbp, "YES", "Yes"));
        assert!(answers_match(TaskKind::Esol, "-1.2345", "-1.2349"));
        assert!(!answers_match(TaskKind::Esol, "-1.2345", "-1.2360"));
        assert!(answers_match(TaskKind::MoleculeCaptioning, " a chain ", "a chain"));
        assert!(!answers_match(TaskKind::MoleculeCaptioning, "A chain", "a chain"));
    }

    #[test]
    fn preserves_order_under_parallelism() {
        let recs: Vec<TaskRecord> = (0..12).map(|i| rec(TaskKind::Esol, &format!("Q{i:02}"), &i.to_string())).collect();
        let mut mock = MockChatClient::new();
        for i in 0..12 {
            mock = mock.reply(&format!("Q{i:02}"), &format!("<think>count</think><answer>{i}</answer>"));
        }
        let a = annotate_cot(&recs, &mock, &fast());
        let ids: Vec<_> = a.records.iter().map(|r| r.id.clone()).collect();
        let want: Vec<_> = recs.iter().map(|r| r.id.clone()).collect();
        assert_eq!(ids, want);
    }
}
