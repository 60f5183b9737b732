//! Rule-based tokenizer.
//!
//! Special tokens are matched literally. Text is split on whitespace (each
//! whitespace character is its own token); within a non-whitespace run,
//! alphabetic words found in the vocabulary become single tokens and
//! everything else is split atom-wise the way SMILES is written: bracket
//! atoms, `Cl`, `Br`, then single characters. Characters outside the
//! vocabulary map to `<unk>`.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::specialist::TaskKind;

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";
pub const THINK_OPEN: &str = "⟨think⟩";
pub const THINK_CLOSE: &str = "⟨/think⟩";
pub const ANSWER_OPEN: &str = "⟨answer⟩";
pub const ANSWER_CLOSE: &str = "⟨/answer⟩";

const BRACKET_ATOMS: &[&str] = &[
    "[nH]", "[NH+]", "[NH2+]", "[NH3+]", "[NH4+]", "[N+]", "[N-]", "[n+]", "[nH+]", "[O-]", "[OH-]",
    "[O+]", "[S-]", "[Na+]", "[K+]", "[Cl-]", "[Br-]", "[I-]", "[C@H]", "[C@@H]", "[C@]", "[C@@]",
    "[2H]", "[13C]", "[H]", "[Si]", "[Se]", "[se]", "[B-]", "[Li+]",
];

/// Token inventory with dense ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
    #[serde(skip)]
    specials: Vec<(String, u32)>,
}

/// Token ids plus how many characters fell back to `<unk>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encoding {
    pub ids: Vec<u32>,
    pub unknown: usize,
}

fn special_tokens() -> Vec<String> {
    let mut v: Vec<String> = [PAD, BOS, EOS, UNK, THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE]
        .iter()
        .map(|s| s.to_string())
        .collect();
    v.extend(TaskKind::ALL.iter().map(|t| t.tag()));
    v
}

/// Alphabetic runs that read as prose rather than SMILES: after removing
/// `Cl`/`Br`, some lowercase letter is not an aromatic atom symbol.
fn is_word(run: &str) -> bool {
    if run.chars().count() < 2 || !run.chars().all(|c| c.is_ascii_alphabetic()) {
        return false;
    }
    let stripped = run.replace("Cl", "").replace("Br", "");
    stripped
        .chars()
        .any(|c| c.is_ascii_lowercase() && !"bcnops".contains(c))
}

impl Vocabulary {
    /// Base inventory (specials, printable ASCII, atom tokens) plus the most
    /// frequent words and any extra characters of `corpus`, capped at `max_size`.
    pub fn build<'a>(corpus: impl IntoIterator<Item = &'a str>, max_size: usize) -> Self {
        let mut tokens = special_tokens();
        tokens.extend(["\n", "\t"].iter().map(|s| s.to_string()));
        tokens.extend((0x20u8..0x7f).map(|b| (b as char).to_string()));
        tokens.extend(["Cl", "Br"].iter().map(|s| s.to_string()));
        tokens.extend(BRACKET_ATOMS.iter().map(|s| s.to_string()));

        let base: std::collections::HashSet<String> = tokens.iter().cloned().collect();
        let mut words: BTreeMap<String, usize> = BTreeMap::new();
        let mut extra_chars: BTreeMap<char, usize> = BTreeMap::new();
        for text in corpus {
            let mut run = String::new();
            for c in text.chars().chain(std::iter::once(' ')) {
                if c.is_ascii_alphabetic() {
                    run.push(c);
                    continue;
                }
                if is_word(&run) {
                    *words.entry(std::mem::take(&mut run)).or_default() += 1;
                }
                run.clear();
                if !c.is_ascii() && !base.contains(&c.to_string()) {
                    *extra_chars.entry(c).or_default() += 1;
                }
            }
        }
        for c in extra_chars.keys() {
            if tokens.len() < max_size {
                tokens.push(c.to_string());
            }
        }
        let mut ranked: Vec<(String, usize)> = words.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        for (w, _) in ranked {
            if tokens.len() >= max_size {
                break;
            }
            if !base.contains(&w) {
                tokens.push(w);
            }
        }
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let mut v = Self {
            tokens,
            index: HashMap::new(),
            specials: Vec::new(),
        };
        v.reindex();
        v
    }

    /// Extends the inventory with inert `<extra_i>` entries up to `size`
    /// so the vocabulary matches a fixed model width.
    pub fn padded(mut self, size: usize) -> Self {
        let mut i = 0;
        while self.tokens.len() < size {
            self.tokens.push(format!("<extra_{i}>"));
            i += 1;
        }
        self.reindex();
        self
    }

    /// Rebuilds lookup tables, e.g. after deserializing.
    pub fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        let mut s: Vec<(String, u32)> = special_tokens()
            .into_iter()
            .filter_map(|t| self.index.get(&t).map(|&id| (t, id)))
            .collect();
        // Padding entries must survive a decode/encode round trip.
        s.extend(
            self.tokens
                .iter()
                .enumerate()
                .filter(|(_, t)| t.starts_with("<extra_") && t.ends_with('>'))
                .map(|(i, t)| (t.clone(), i as u32)),
        );
        // Longest first so no special shadows a longer one.
        s.sort_by(|a, b| b.0.len().cmp(&a.0.len()));
        self.specials = s;
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    fn special(&self, token: &str) -> u32 {
        self.id(token).expect("vocabulary is missing a special token")
    }

    pub fn pad(&self) -> u32 {
        self.special(PAD)
    }
    pub fn bos(&self) -> u32 {
        self.special(BOS)
    }
    pub fn eos(&self) -> u32 {
        self.special(EOS)
    }
    pub fn unk(&self) -> u32 {
        self.special(UNK)
    }
    pub fn think_open(&self) -> u32 {
        self.special(THINK_OPEN)
    }
    pub fn think_close(&self) -> u32 {
        self.special(THINK_CLOSE)
    }
    pub fn answer_open(&self) -> u32 {
        self.special(ANSWER_OPEN)
    }
    pub fn answer_close(&self) -> u32 {
        self.special(ANSWER_CLOSE)
    }

    pub fn task_tag(&self, task: TaskKind) -> u32 {
        self.special(&task.tag())
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    fn push_piece(&self, piece: &str, out: &mut Encoding) {
        if let Some(id) = self.id(piece) {
            out.ids.push(id);
            return;
        }
        for c in piece.chars() {
            match self.id(c.encode_utf8(&mut [0; 4])) {
                Some(id) => out.ids.push(id),
                None => {
                    out.ids.push(self.unk());
                    out.unknown += 1;
                }
            }
        }
    }

    fn push_run(&self, run: &str, out: &mut Encoding) {
        if let Some(id) = self.id(run).filter(|_| is_word(run)) {
            out.ids.push(id);
            return;
        }
        let mut i = 0;
        while i < run.len() {
            let rest = &run[i..];
            let c = rest.chars().next().unwrap();
            if c == '[' {
                if let Some(end) = rest.find(']') {
                    self.push_piece(&rest[..=end], out);
                    i += end + 1;
                    continue;
                }
            }
            if c.is_ascii_alphabetic() {
                let len = rest
                    .bytes()
                    .take_while(u8::is_ascii_alphabetic)
                    .count();
                let word = &rest[..len];
                if is_word(word) && self.id(word).is_some() {
                    self.push_piece(word, out);
                    i += len;
                    continue;
                }
                if rest.starts_with("Cl") || rest.starts_with("Br") {
                    self.push_piece(&rest[..2], out);
                    i += 2;
                    continue;
                }
            }
            let w = c.len_utf8();
            self.push_piece(&run[i..i + w], out);
            i += w;
        }
    }

    pub fn encode(&self, text: &str) -> Encoding {
        let mut out = Encoding {
            ids: Vec::new(),
            unknown: 0,
        };
        let mut i = 0;
        while i < text.len() {
            let rest = &text[i..];
            if let Some((tok, id)) = self.specials.iter().find(|(t, _)| rest.starts_with(t.as_str())) {
                out.ids.push(*id);
                i += tok.len();
                continue;
            }
            let c = rest.chars().next().unwrap();
            if c.is_whitespace() {
                self.push_piece(&rest[..c.len_utf8()], &mut out);
                i += c.len_utf8();
                continue;
            }
            // Non-whitespace run up to the next whitespace or special token.
            let mut end = 0;
            for (off, ch) in rest.char_indices() {
                if ch.is_whitespace()
                    || (off > 0 && self.specials.iter().any(|(t, _)| rest[off..].starts_with(t.as_str())))
                {
                    break;
                }
                end = off + ch.len_utf8();
            }
            self.push_run(&rest[..end], &mut out);
            i += end;
        }
        out
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or(UNK))
            .collect()
    }
}

/// Token ids for `text`; unknown characters become `<unk>`.
pub fn tokenize(vocab: &Vocabulary, text: &str) -> Encoding {
    let enc = vocab.encode(text);
    if enc.unknown > 0 {
        log::warn!("{} character(s) mapped to {UNK}", enc.unknown);
    }
    enc
}

pub fn detokenize(vocab: &Vocabulary, ids: &[u32]) -> String {
    vocab.decode(ids)
}
