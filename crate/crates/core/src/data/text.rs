//! Caption preprocessing: lower-casing, punctuation and stop-word removal,
//! vocabulary lookup, fixed-length padding.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Token sequences are truncated or padded to this length.
pub const CAPTION_LEN: usize = 16;
pub const PAD: usize = 0;
pub const PAD_TOKEN: &str = "<pad>";

const STOPWORDS: &str = include_str!("../../data/stopwords.txt");

pub fn stopwords() -> HashSet<&'static str> {
    STOPWORDS.lines().map(str::trim).filter(|l| !l.is_empty()).collect()
}

/// Lower-cases, strips punctuation and drops stop-words.
pub fn tokenize(caption: &str) -> Vec<String> {
    let stop = stopwords();
    caption
        .split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|w| !w.is_empty() && !stop.contains(w.as_str()))
        .collect()
}

/// Token vocabulary; id 0 is the padding token.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from words; duplicates keep their first id.
    pub fn from_words<I: IntoIterator<Item = S>, S: Into<String>>(words: I) -> Self {
        let mut vocab = Self {
            tokens: vec![PAD_TOKEN.to_string()],
            index: HashMap::new(),
        };
        for w in words {
            let w = w.into();
            if !vocab.index.contains_key(&w) && w != PAD_TOKEN {
                vocab.index.insert(w.clone(), vocab.tokens.len());
                vocab.tokens.push(w);
            }
        }
        vocab
    }

    /// Number of real tokens (`W`), excluding padding.
    pub fn size(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Token ids of a raw caption, truncated/padded to `len`. Unknown words are dropped.
    pub fn encode(&self, caption: &str, len: usize) -> Vec<usize> {
        let mut ids: Vec<usize> = tokenize(caption)
            .iter()
            .filter_map(|t| self.id(t))
            .take(len)
            .collect();
        ids.resize(len, PAD);
        ids
    }

    /// One token per line; the line number (from 0) is the id.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut body = self.tokens.join("\n");
        body.push('\n');
        fs::write(path, body)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        if lines.next() != Some(PAD_TOKEN) {
            return Err(Error::invalid(format!(
                "{}: first line must be the padding token {PAD_TOKEN}",
                path.display()
            )));
        }
        Ok(Self::from_words(lines))
    }
}

/// Pads or truncates an id sequence to `len`.
pub fn fit_length(tokens: &[usize], len: usize) -> Vec<usize> {
    let mut out: Vec<usize> = tokens.iter().copied().take(len).collect();
    out.resize(len, PAD);
    out
}
