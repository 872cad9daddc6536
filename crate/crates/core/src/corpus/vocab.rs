//! Word-level tokenizer and the shared vocabulary.

use crate::error::{CoreError, Result};
use sha2::{Digest, Sha256};
use std::collections::{BTreeSet, HashMap};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const EOS: &str = "<eos>";
pub const BOS: &str = "<bos>";
pub const SEP: &str = "<sep>";
pub const NUM_SENTINELS: usize = 100;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const BOS_ID: usize = 3;
pub const SEP_ID: usize = 4;

/// Every label name across tasks; each gets a reserved `<name>` token.
pub const LABEL_NAMES: [&str; 5] = ["negative", "positive", "entailment", "neutral", "contradiction"];

pub fn sentinel(i: usize) -> String {
    format!("<sent_{i}>")
}

pub fn label_token(name: &str) -> String {
    format!("<{name}>")
}

/// Lowercasing word tokenizer. Punctuation characters become their own
/// tokens; `<...>` markers (separators, sentinels) stay atomic.
#[derive(Debug, Clone, Copy)]
pub struct Tokenizer {
    pub lowercase: bool,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self { lowercase: true }
    }
}

impl Tokenizer {
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            let word = if self.lowercase { word.to_lowercase() } else { word.to_string() };
            let chars: Vec<char> = word.chars().collect();
            let mut cur = String::new();
            let mut i = 0;
            while i < chars.len() {
                let ch = chars[i];
                if ch == '<' {
                    if let Some(end) = chars[i..].iter().position(|&c| c == '>') {
                        if end > 1 {
                            if !cur.is_empty() {
                                out.push(std::mem::take(&mut cur));
                            }
                            out.push(chars[i..=i + end].iter().collect());
                            i += end + 1;
                            continue;
                        }
                    }
                }
                if ch.is_ascii_punctuation() {
                    if !cur.is_empty() {
                        out.push(std::mem::take(&mut cur));
                    }
                    out.push(ch.to_string());
                } else {
                    cur.push(ch);
                }
                i += 1;
            }
            if !cur.is_empty() {
                out.push(cur);
            }
        }
        out
    }

    /// Space-joined tokens; `tokenize(detokenize(t)) == t` for tokenizer output.
    pub fn detokenize<S: AsRef<str>>(&self, tokens: &[S]) -> String {
        tokens.iter().map(|t| t.as_ref()).collect::<Vec<_>>().join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Reserved tokens followed by the sorted word types of `corpus`.
    pub fn build<'a, I, S>(corpus: I) -> Self
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut words = BTreeSet::new();
        for toks in corpus {
            for t in toks {
                words.insert(t.as_ref().to_string());
            }
        }
        let mut tokens: Vec<String> = [PAD, UNK, EOS, BOS, SEP].iter().map(|s| s.to_string()).collect();
        tokens.extend(LABEL_NAMES.iter().map(|n| label_token(n)));
        tokens.extend((0..NUM_SENTINELS).map(sentinel));
        let reserved: BTreeSet<String> = tokens.iter().cloned().collect();
        tokens.extend(words.into_iter().filter(|w| !reserved.contains(w)));
        Self::from_tokens(tokens).expect("reserved tokens are unique")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(CoreError::Config(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        let v = Self { tokens, index };
        for (id, want) in [(PAD_ID, PAD), (UNK_ID, UNK), (EOS_ID, EOS), (BOS_ID, BOS), (SEP_ID, SEP)] {
            if v.tokens.get(id).map(String::as_str) != Some(want) {
                return Err(CoreError::Config(format!("vocabulary must start with reserved tokens, {want} missing")));
            }
        }
        Ok(v)
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

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.tokens
            .get(id)
            .map(String::as_str)
            .ok_or(CoreError::OutOfVocab { id, size: self.len() })
    }

    pub fn sentinel_id(&self, i: usize) -> usize {
        self.id(&sentinel(i)).expect("sentinels are reserved")
    }

    /// Index of `<sent_i>` if `id` is a sentinel.
    pub fn sentinel_index(&self, id: usize) -> Option<usize> {
        let first = self.sentinel_id(0);
        (first..first + NUM_SENTINELS).contains(&id).then(|| id - first)
    }

    pub fn label_id(&self, name: &str) -> Option<usize> {
        self.id(&label_token(name))
    }

    /// True for reserved markup: padding, separators, labels and sentinels.
    pub fn is_special(&self, id: usize) -> bool {
        id < self.sentinel_id(0) + NUM_SENTINELS
    }

    /// Unknown words map to `<unk>`.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens
            .iter()
            .map(|t| self.id(t.as_ref()).unwrap_or(UNK_ID))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter().map(|&i| self.token(i).map(str::to_string)).collect()
    }

    /// Hex SHA-256 over the newline-joined token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.tokens.join("\n") + "\n")?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}
