use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BLANK_TOKEN: &str = "<blank>";
pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";
pub const UNK_TOKEN: &str = "<unk>";

/// Number of reserved ids at the start of every vocabulary.
pub const RESERVED: usize = 4;

/// Closed token set. Ids: `0` blank, `1` bos, `2` eos, `3` unk, then content tokens.
///
/// Models emit over ids `1..len()`; the blank occupies output slot 0 of the
/// transducer and never appears in a language-model distribution, where id
/// `k` maps to LM slot `k - 1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Builds a vocabulary from content tokens; reserved symbols are prepended.
    pub fn new<S: AsRef<str>>(content: &[S]) -> Result<Self> {
        let mut tokens: Vec<String> = [BLANK_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for t in content {
            let t = t.as_ref();
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("invalid token {t:?}")));
            }
            if tokens.iter().any(|x| x == t) {
                return Err(Error::Config(format!("duplicate token {t}")));
            }
            tokens.push(t.to_string());
        }
        Ok(Self::from(tokens))
    }

    /// Content tokens `t00, t01, ...`.
    pub fn synthetic(size: usize) -> Self {
        let content: Vec<String> = (0..size).map(|i| format!("t{i:02}")).collect();
        Self::new(&content).expect("generated names are unique")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Non-blank output classes `V` (everything but the blank).
    pub fn output_size(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn blank(&self) -> usize {
        0
    }

    pub fn bos(&self) -> usize {
        1
    }

    pub fn eos(&self) -> usize {
        2
    }

    pub fn unk(&self) -> usize {
        3
    }

    pub fn content_ids(&self) -> std::ops::Range<usize> {
        RESERVED..self.tokens.len()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Whitespace split; unknown words map to `<unk>`. Never yields the blank id.
    pub fn tokenize(&self, line: &str) -> Vec<usize> {
        line.split_whitespace()
            .map(|w| match self.id(w) {
                Some(0) | None => self.unk(),
                Some(id) => id,
            })
            .collect()
    }

    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(UNK_TOKEN))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Checks that `ids` are valid label ids (non-blank, in range).
    pub fn check_labels(&self, ids: &[usize]) -> Result<()> {
        match ids.iter().find(|&&i| i == 0 || i >= self.tokens.len()) {
            Some(&id) => Err(Error::InvalidToken {
                id,
                lo: 1,
                hi: self.tokens.len() - 1,
            }),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_cases() {
        let v = Vocab::new(&["cat", "dog"]).unwrap();
        assert!(v.tokenize("").is_empty());
        assert_eq!(v.tokenize("dog  cat dog"), vec![5, 4, 5]);
        assert_eq!(v.tokenize("cat bird"), vec![4, v.unk()]);
        assert_eq!(v.tokenize("<blank> cat"), vec![v.unk(), 4]);
    }

    #[test]
    fn reserved_layout() {
        let v = Vocab::synthetic(30);
        assert_eq!(v.len(), 34);
        assert_eq!(v.output_size(), 33);
        assert_eq!(v.token(v.blank()), Some(BLANK_TOKEN));
        assert_eq!(v.token(v.eos()), Some(EOS_TOKEN));
        assert_eq!(v.content_ids(), 4..34);
        assert!(v.check_labels(&[0]).is_err());
        assert!(v.check_labels(&[34]).is_err());
        assert!(v.check_labels(&[1, 33]).is_ok());
    }

    #[test]
    fn serde_round_trip() {
        let v = Vocab::synthetic(3);
        let s = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str(&s).unwrap();
        assert_eq!(v, back);
    }
}
