//! HTML-aware tokenizer and the frequency-ranked vocabulary.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use sha2::{Digest, Sha256};

use super::IngestError;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

pub const DEFAULT_MAX_LEN: usize = 100;
pub const DEFAULT_MIN_COUNT: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tokenizer {
    pub max_len: usize,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self {
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

impl Tokenizer {
    pub fn new(max_len: usize) -> Self {
        Self { max_len }
    }

    /// Strips tags and entities, lowercases and splits on non-alphanumerics.
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let plain = strip_markup(text);
        plain
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .take(self.max_len)
            .map(str::to_lowercase)
            .collect()
    }
}

/// Replaces `<...>` tags and `&...;` entities with spaces.
fn strip_markup(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        match c {
            '<' => {
                // an unmatched '<' acts as a plain separator
                if let Some(end) = text[i..].find('>') {
                    while let Some(&(j, _)) = chars.peek() {
                        if j > i + end {
                            break;
                        }
                        chars.next();
                    }
                }
                out.push(' ');
            }
            '&' => {
                let rest = &text[i + 1..];
                let entity_len = rest
                    .char_indices()
                    .take(12)
                    .find(|&(_, ch)| ch == ';')
                    .map(|(k, _)| k)
                    .filter(|&k| {
                        k > 0
                            && rest[..k]
                                .chars()
                                .enumerate()
                                .all(|(n, ch)| ch.is_ascii_alphanumeric() || (n == 0 && ch == '#'))
                    });
                if let Some(k) = entity_len {
                    for _ in 0..=k {
                        chars.next();
                    }
                }
                out.push(' ');
            }
            _ => out.push(c),
        }
    }
    out
}

/// Token ↔ id mapping with reserved `PAD = 0`, `UNK = 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Keeps tokens seen at least `min_count` times, most frequent first,
    /// ties broken lexicographically.
    pub fn build<I, S>(token_lists: I, min_count: u64) -> Self
    where
        I: IntoIterator,
        I::Item: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let min_count = min_count.max(1);
        let mut freq: HashMap<String, u64> = HashMap::new();
        for list in token_lists {
            for tok in list {
                *freq.entry(tok.as_ref().to_string()).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, u64)> = Vec::new();
        let mut unk = 0;
        for (tok, n) in freq {
            if n >= min_count {
                kept.push((tok, n));
            } else {
                unk += n;
            }
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut vocab = Self::reserved(unk);
        for (tok, n) in kept {
            vocab.push(tok, n);
        }
        vocab
    }

    /// A vocabulary with exactly the given tokens in id order after the
    /// reserved entries.
    pub fn from_tokens(tokens: impl IntoIterator<Item = (String, u64)>) -> Result<Self, IngestError> {
        let mut vocab = Self::reserved(0);
        for (tok, n) in tokens {
            if vocab.index.contains_key(&tok) {
                return Err(IngestError::Vocab(format!("duplicate token {tok:?}")));
            }
            vocab.push(tok, n);
        }
        Ok(vocab)
    }

    fn reserved(unk_count: u64) -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            counts: Vec::new(),
            index: HashMap::new(),
        };
        v.push(PAD_TOKEN.to_string(), 0);
        v.push(UNK_TOKEN.to_string(), unk_count);
        v
    }

    fn push(&mut self, token: String, count: u64) {
        self.index.insert(token.clone(), self.tokens.len() as u32);
        self.tokens.push(token);
        self.counts.push(count);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn count(&self, id: u32) -> Option<u64> {
        self.counts.get(id as usize).copied()
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// `token \t id \t count` per line, in id order.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (id, (tok, n)) in self.tokens.iter().zip(&self.counts).enumerate() {
            writeln!(out, "{tok}\t{id}\t{n}")?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(input: R) -> Result<Self, IngestError> {
        let mut tokens = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let bad = || IngestError::Vocab(format!("line {}: expected token<TAB>id<TAB>count", lineno + 1));
            let mut fields = line.split('\t');
            let (Some(tok), Some(id), Some(n), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(bad());
            };
            let id: usize = id.parse().map_err(|_| bad())?;
            let n: u64 = n.parse().map_err(|_| bad())?;
            if id != tokens.len() {
                return Err(IngestError::Vocab(format!(
                    "line {}: id {id} out of sequence",
                    lineno + 1
                )));
            }
            tokens.push((tok.to_string(), n));
        }
        if tokens.len() < 2 || tokens[0].0 != PAD_TOKEN || tokens[1].0 != UNK_TOKEN {
            return Err(IngestError::Vocab("missing reserved <pad>/<unk> entries".into()));
        }
        let unk = tokens[1].1;
        let mut vocab = Self::from_tokens(tokens.into_iter().skip(2))?;
        vocab.counts[UNK_ID as usize] = unk;
        Ok(vocab)
    }

    /// Hex SHA-256 of the TSV serialization.
    pub fn hash(&self) -> String {
        let mut buf = Vec::new();
        self.write_tsv(&mut buf).expect("writing to a Vec cannot fail");
        let digest = Sha256::digest(&buf);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
