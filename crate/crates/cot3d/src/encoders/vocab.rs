//! Whitespace/punctuation word tokenizer and frequency-ordered vocabulary.

use std::collections::BTreeMap;

use crate::error::{CotError, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
const RESERVED: usize = 2;

/// Lowercase and split on whitespace and punctuation boundaries; a token is
/// a maximal run of alphanumeric characters.
pub fn tokenize_words(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_string())
        .collect()
}

/// Token table with reserved pad and unk ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    token_to_id: BTreeMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocab {
    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        if id < RESERVED {
            return None;
        }
        self.id_to_token.get(id - RESERVED).map(|s| s.as_str())
    }

    /// Total id count, reserved ids included.
    pub fn size(&self) -> usize {
        self.id_to_token.len() + RESERVED
    }

    /// One token per line, line number = id - 2.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.id_to_token {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(|l| l.to_string()).collect();
        let mut token_to_id = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() {
                return Err(CotError::Parse {
                    line: i + 1,
                    msg: "empty vocab token".into(),
                });
            }
            if token_to_id.insert(t.clone(), i + RESERVED).is_some() {
                return Err(CotError::Parse {
                    line: i + 1,
                    msg: format!("duplicate vocab token {t:?}"),
                });
            }
        }
        Ok(Self {
            token_to_id,
            id_to_token: tokens,
        })
    }
}

/// Build a vocabulary from a corpus; tokens with frequency >= `min_freq`
/// get ids in frequency-then-lexicographic order.
pub fn build_vocab(corpus: &[String], min_freq: usize) -> Result<Vocab> {
    if corpus.is_empty() {
        return Err(CotError::Data("build_vocab needs a non-empty corpus".into()));
    }
    let mut freq: BTreeMap<String, usize> = BTreeMap::new();
    for text in corpus {
        for tok in tokenize_words(text) {
            *freq.entry(tok).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = freq
        .into_iter()
        .filter(|(_, f)| *f >= min_freq)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let id_to_token: Vec<String> = kept.into_iter().map(|(t, _)| t).collect();
    let token_to_id = id_to_token
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i + RESERVED))
        .collect();
    Ok(Vocab {
        token_to_id,
        id_to_token,
    })
}

/// Map a text to exactly `max_len` ids: truncate, pad with pad-id, OOV to unk.
pub fn tokenize(text: &str, vocab: &Vocab, max_len: usize) -> Result<Vec<usize>> {
    if max_len == 0 {
        return Err(CotError::Range("tokenize needs max_len >= 1".into()));
    }
    let mut ids: Vec<usize> = tokenize_words(text)
        .iter()
        .take(max_len)
        .map(|t| vocab.id(t))
        .collect();
    ids.resize(max_len, PAD_ID);
    Ok(ids)
}
