//! Character vocabulary shared by Chinese characters and Latin letters.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

pub const BLANK_TOKEN: &str = "<blank>";
pub const UNK_TOKEN: &str = "<UNK>";
pub const SPACE_TOKEN: &str = "<SPACE>";

pub const BLANK_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const SPACE_ID: usize = 2;

/// NFC, Latin letters uppercased, whitespace runs collapsed and trimmed.
pub fn normalize_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for c in text.nfc() {
        if c.is_whitespace() {
            pending_space = !out.is_empty();
            continue;
        }
        if pending_space {
            out.push(' ');
            pending_space = false;
        }
        out.push(uppercase_latin(c));
    }
    out
}

/// [`normalize_text`] over raw bytes, rejecting invalid UTF-8.
pub fn normalize_bytes(bytes: &[u8]) -> Result<String> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::Vocab(format!("transcript is not valid UTF-8: {e}")))?;
    Ok(normalize_text(text))
}

fn uppercase_latin(c: char) -> char {
    // Basic Latin through Latin Extended-B; skip multi-char expansions like ß
    if (c as u32) < 0x250 && c.is_lowercase() {
        let mut up = c.to_uppercase();
        if let (Some(u), None) = (up.next(), up.next()) {
            return u;
        }
    }
    c
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenVocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl TokenVocabulary {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let reserved = [BLANK_TOKEN, UNK_TOKEN, SPACE_TOKEN];
        for (id, name) in reserved.iter().enumerate() {
            if tokens.get(id).map(String::as_str) != Some(*name) {
                return Err(Error::Vocab(format!(
                    "reserved token {name} must have id {id}"
                )));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if tok.is_empty() {
                return Err(Error::Vocab(format!("empty token at id {id}")));
            }
            if index.insert(tok.clone(), id).is_some() {
                return Err(Error::Vocab(format!("duplicate token {tok:?} at id {id}")));
            }
        }
        Ok(TokenVocabulary { tokens, index })
    }

    /// Reserved tokens followed by every distinct non-space character of the
    /// normalized transcripts, in code point order.
    pub fn build<S: AsRef<str>>(transcripts: &[S]) -> Result<Self> {
        if transcripts.is_empty() {
            return Err(Error::Vocab("cannot build a vocabulary from no transcripts".into()));
        }
        let chars: BTreeSet<char> = transcripts
            .iter()
            .flat_map(|t| normalize_text(t.as_ref()).chars().collect::<Vec<_>>())
            .filter(|c| *c != ' ')
            .collect();
        let mut tokens: Vec<String> = [BLANK_TOKEN, UNK_TOKEN, SPACE_TOKEN]
            .iter()
            .map(|s| s.to_string())
            .collect();
        tokens.extend(chars.into_iter().map(String::from));
        Self::from_tokens(tokens)
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

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Maps each character of already-normalized text to its id. Never
    /// produces the blank.
    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        let mut buf = [0u8; 4];
        text.chars()
            .map(|c| {
                if c == ' ' {
                    SPACE_ID
                } else {
                    self.id(c.encode_utf8(&mut buf)).unwrap_or(UNK_ID)
                }
            })
            .collect()
    }

    pub fn detokenize(&self, ids: &[usize]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            match id {
                BLANK_ID => return Err(Error::Vocab("blank id in token sequence".into())),
                UNK_ID => out.push('\u{FFFD}'),
                SPACE_ID => out.push(' '),
                _ => out.push_str(
                    self.token(id)
                        .ok_or_else(|| Error::Vocab(format!("id {id} outside vocabulary of {}", self.len())))?,
                ),
            }
        }
        Ok(out)
    }

    /// Hex SHA-256 over the newline-terminated token list.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for tok in &self.tokens {
            hasher.update(tok.as_bytes());
            hasher.update(b"\n");
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// One token per line; the line number is the id.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Vocab(format!("{} is not valid UTF-8", path.display())))?;
        Self::from_list(text.lines().map(String::from).collect())
            .map_err(|e| Error::Vocab(format!("{}: {e}", path.display())))
    }

    /// Rebuilds a vocabulary from an explicit id-ordered token list.
    pub fn from_list(tokens: Vec<String>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}
