//! Whitespace tokenizer with a character fallback.
//!
//! Frequent words get a single id; any other word is spelled out with
//! per-character pieces (`##c`), or `[UNK]` for characters never seen while
//! building the vocabulary. Every word therefore maps to a contiguous,
//! non-empty token range, which is what word-level masking relies on.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const MASK: usize = 4;

const SPECIALS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];
const PIECE_PREFIX: &str = "##";

/// Default maximum sentence length in tokens.
pub const DEFAULT_MAX_LEN: usize = 128;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Builds a vocabulary from raw texts. Words seen at least `min_count`
    /// times get their own id; every character seen gets a piece id.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_count: usize) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        let mut chars: BTreeSet<char> = BTreeSet::new();
        for text in texts {
            for word in text.split_whitespace() {
                *counts.entry(word).or_default() += 1;
                chars.extend(word.chars());
            }
        }
        let mut words: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(w, c)| c >= min_count.max(1) && !SPECIALS.contains(&w))
            .collect();
        // frequency descending, then lexical for a stable order
        words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));

        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(chars.into_iter().map(|c| format!("{PIECE_PREFIX}{c}")));
        tokens.extend(words.into_iter().map(|(w, _)| w.to_string()));
        let mut seen = BTreeSet::new();
        tokens.retain(|t| seen.insert(t.clone()));
        Self::from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Token ids for one whitespace-delimited word.
    pub fn word_ids(&self, word: &str) -> Vec<usize> {
        if let Some(id) = self.id(word) {
            if id >= SPECIALS.len() && !word.starts_with(PIECE_PREFIX) {
                return vec![id];
            }
        }
        word.chars()
            .map(|c| self.id(&format!("{PIECE_PREFIX}{c}")).unwrap_or(UNK))
            .collect()
    }

    /// Tokenizes `text` as `[CLS] w₁ … wₖ [SEP]`, truncated to `max_len`
    /// tokens. A word cut by truncation keeps the tokens that fit.
    ///
    /// # Panics
    /// If `max_len < 2`.
    pub fn tokenize(&self, text: &str, max_len: usize) -> TokenizedExample {
        assert!(max_len >= 2, "max_len must leave room for [CLS] and [SEP]");
        let budget = max_len - 2;
        let mut ids = vec![CLS];
        let mut word_alignment = Vec::new();
        let mut words = Vec::new();
        for word in text.split_whitespace() {
            let used = ids.len() - 1;
            if used >= budget {
                break;
            }
            let mut pieces = self.word_ids(word);
            pieces.truncate(budget - used);
            let start = ids.len();
            ids.extend(pieces);
            word_alignment.push(start..ids.len());
            words.push(word.to_string());
        }
        ids.push(SEP);
        let n = ids.len();
        TokenizedExample {
            ids,
            attention_mask: vec![1; n],
            segment_ids: vec![0; n],
            position_ids: (0..n).collect(),
            word_alignment,
            words,
        }
    }
}

/// Token ids plus the word ↔ token alignment of one sentence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedExample {
    pub ids: Vec<usize>,
    pub attention_mask: Vec<u8>,
    pub segment_ids: Vec<usize>,
    pub position_ids: Vec<usize>,
    /// Token range of each word, in word order.
    pub word_alignment: Vec<Range<usize>>,
    /// Surface form of each aligned word.
    pub words: Vec<String>,
}

impl TokenizedExample {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn n_words(&self) -> usize {
        self.word_alignment.len()
    }

    /// Appends `[PAD]` tokens (attention mask 0) up to `len`.
    pub fn padded(&self, len: usize) -> Self {
        let mut out = self.clone();
        while out.ids.len() < len {
            let pos = out.ids.len();
            out.ids.push(PAD);
            out.attention_mask.push(0);
            out.segment_ids.push(0);
            out.position_ids.push(pos);
        }
        out
    }

    /// Replaces every token of word `word_index` with `[MASK]`.
    pub fn mask_word(&self, word_index: usize) -> Result<Self> {
        let range = self
            .word_alignment
            .get(word_index)
            .ok_or(Error::IndexOutOfRange {
                what: "word",
                index: word_index,
                len: self.word_alignment.len(),
            })?
            .clone();
        let mut out = self.clone();
        out.ids[range].fill(MASK);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::build(["ab cd ab cd ef", "ab xyz"], 2)
    }

    #[test]
    fn empty_text_is_cls_sep() {
        let tok = vocab().tokenize("", 128);
        assert_eq!(tok.ids, vec![CLS, SEP]);
        assert!(tok.word_alignment.is_empty());
    }

    #[test]
    fn long_text_truncates_to_max_len() {
        let text = vec!["ab"; 500].join(" ");
        let tok = vocab().tokenize(&text, DEFAULT_MAX_LEN);
        assert_eq!(tok.len(), 128);
        assert_eq!(tok.ids[0], CLS);
        assert_eq!(*tok.ids.last().unwrap(), SEP);
        assert_eq!(tok.n_words(), 126);
    }

    #[test]
    fn alignment_is_disjoint_and_covers_content() {
        let v = vocab();
        let tok = v.tokenize("ab cd", 16);
        assert_eq!(tok.word_alignment, vec![1..2, 2..3]);
        // unknown word falls back to characters
        let tok = v.tokenize("ab efg cd", 16);
        assert_eq!(tok.word_alignment, vec![1..2, 2..5, 5..6]);
        assert_eq!(tok.ids[4], UNK); // 'g' never seen
        let covered: usize = tok.word_alignment.iter().map(|r| r.len()).sum();
        assert_eq!(covered, tok.len() - 2);
    }

    #[test]
    fn truncation_keeps_partial_word() {
        let v = vocab();
        let tok = v.tokenize("ab xyz", 4);
        assert_eq!(tok.len(), 4);
        assert_eq!(tok.word_alignment, vec![1..2, 2..3]);
    }

    #[test]
    fn mask_word_locality_idempotence_bounds() {
        let v = vocab();
        let tok = v.tokenize("ab efx cd", 16);
        let masked = tok.mask_word(1).unwrap();
        for (t, (a, b)) in tok.ids.iter().zip(&masked.ids).enumerate() {
            if tok.word_alignment[1].contains(&t) {
                assert_eq!(*b, MASK);
            } else {
                assert_eq!(a, b);
            }
        }
        assert_eq!(masked.mask_word(1).unwrap(), masked);
        assert!(tok.mask_word(3).is_err());
    }

    #[test]
    fn vocab_round_trips_through_json() {
        let v = vocab();
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.id("ab"), v.id("ab"));
    }
}
