//! Token vocabulary and caption token sequences.
//!
//! The vocabulary is tiny and closed: every caption the grammar can emit
//! tokenizes losslessly (whitespace split), and every token carries a word
//! class so the text attack can restrict substitutions to like-for-like
//! swaps (colors with colors, shapes with shapes, ...).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{LabError, Result};

/// Grammar part-of-speech class of a token.
///
/// Only the four content classes are substitutable by the text attack;
/// function words are structural and never swapped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WordClass {
    Color,
    Shape,
    Relation,
    Count,
    Function,
}

impl WordClass {
    pub fn substitutable(self) -> bool {
        !matches!(self, WordClass::Function)
    }

    fn tag(self) -> &'static str {
        match self {
            WordClass::Color => "color",
            WordClass::Shape => "shape",
            WordClass::Relation => "relation",
            WordClass::Count => "count",
            WordClass::Function => "function",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "color" => WordClass::Color,
            "shape" => WordClass::Shape,
            "relation" => WordClass::Relation,
            "count" => WordClass::Count,
            "function" => WordClass::Function,
            other => return Err(LabError::Format(format!("unknown word class {other:?}"))),
        })
    }
}

/// Dense-id token table. Id 0 is always the padding token.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    classes: Vec<WordClass>,
    index: HashMap<String, u32>,
}

pub const PAD_TOKEN: &str = "<pad>";

impl Vocabulary {
    /// Build from (token, class) rows; the pad token is prepended
    /// automatically and ids are assigned densely in row order.
    pub fn new(entries: &[(&str, WordClass)]) -> Result<Self> {
        let mut tokens = vec![PAD_TOKEN.to_string()];
        let mut classes = vec![WordClass::Function];
        for &(tok, class) in entries {
            if tok.is_empty() || tok.contains(char::is_whitespace) {
                return Err(LabError::Config(format!("invalid token {tok:?}")));
            }
            tokens.push(tok.to_string());
            classes.push(class);
        }
        let mut index = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(LabError::Config(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, classes, index })
    }

    /// The fixed vocabulary of the shape-scene caption grammar.
    pub fn builtin() -> Self {
        use WordClass::*;
        Self::new(&[
            ("a", Function),
            ("above", Relation),
            ("and", Function),
            ("are", Function),
            ("below", Relation),
            ("beside", Relation),
            ("blue", Color),
            ("circle", Shape),
            ("color", Function),
            ("green", Color),
            ("here", Function),
            ("in", Function),
            ("is", Function),
            ("orange", Color),
            ("purple", Color),
            ("red", Color),
            ("scene", Function),
            ("shapes", Function),
            ("shown", Function),
            ("shows", Function),
            ("square", Shape),
            ("the", Function),
            ("there", Function),
            ("this", Function),
            ("three", Count),
            ("triangle", Shape),
            ("two", Count),
            ("yellow", Color),
        ])
        .expect("builtin vocabulary is well-formed")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // always contains the pad token
    }

    pub fn pad_id(&self) -> u32 {
        0
    }

    pub fn token(&self, id: u32) -> Result<&str> {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .ok_or_else(|| LabError::Format(format!("token id {id} out of range")))
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn class(&self, id: u32) -> Result<WordClass> {
        self.classes
            .get(id as usize)
            .copied()
            .ok_or_else(|| LabError::Format(format!("token id {id} out of range")))
    }

    /// All token ids of a class, ascending.
    pub fn class_members(&self, class: WordClass) -> Vec<u32> {
        (0..self.len() as u32)
            .filter(|&i| self.classes[i as usize] == class && i != self.pad_id())
            .collect()
    }

    pub fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        let ids = text
            .split_whitespace()
            .map(|w| {
                self.id(w)
                    .ok_or_else(|| LabError::Format(format!("token {w:?} not in vocabulary")))
            })
            .collect::<Result<Vec<u32>>>()?;
        Ok(TokenSequence { text: self.detokenize(&ids)?, ids })
    }

    pub fn detokenize(&self, ids: &[u32]) -> Result<String> {
        let words = ids.iter().map(|&i| self.token(i)).collect::<Result<Vec<_>>>()?;
        Ok(words.join(" "))
    }

    pub fn sequence(&self, ids: Vec<u32>) -> Result<TokenSequence> {
        Ok(TokenSequence { text: self.detokenize(&ids)?, ids })
    }

    /// Stable fingerprint used to pair checkpoints with datasets.
    pub fn fingerprint(&self) -> String {
        let mut s = String::new();
        for (t, c) in self.tokens.iter().zip(&self.classes) {
            let _ = write!(s, "{t}\t{}\n", c.tag());
        }
        crate::data::store::sha256_hex(s.as_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        // Pad token is implicit at id 0; persist the rest.
        for i in 1..self.len() {
            let _ = writeln!(out, "{}\t{}", self.tokens[i], self.classes[i].tag());
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|_| LabError::MissingArtifact {
            path: path.to_path_buf(),
            hint: "vocab.txt is written by dataset generation".into(),
        })?;
        let mut entries = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (tok, tag) = line.split_once('\t').ok_or_else(|| {
                LabError::Format(format!("vocab line {line:?} is not token<TAB>class"))
            })?;
            entries.push((tok, WordClass::parse(tag)?));
        }
        let owned: Vec<(&str, WordClass)> = entries.iter().map(|&(t, c)| (t, c)).collect();
        Self::new(&owned)
    }
}

/// An ordered list of token ids with its detokenized surface form.
///
/// Construction goes through [`Vocabulary`], which keeps `text` consistent
/// with `ids` by design.
#[derive(Debug, Clone, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct TokenSequence {
    ids: Vec<u32>,
    text: String,
}

impl TokenSequence {
    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Copy with one token replaced; the surface form is re-rendered.
    pub fn with_substitution(
        &self,
        vocab: &Vocabulary,
        position: usize,
        token_id: u32,
    ) -> Result<TokenSequence> {
        if position >= self.ids.len() {
            return Err(LabError::Format(format!(
                "substitution position {position} out of range for length {}",
                self.ids.len()
            )));
        }
        let mut ids = self.ids.clone();
        ids[position] = token_id;
        vocab.sequence(ids)
    }

    /// Number of positions where the two sequences disagree; sequences of
    /// different lengths are maximally distant.
    pub fn word_distance(&self, other: &TokenSequence) -> usize {
        if self.ids.len() != other.ids.len() {
            return usize::MAX;
        }
        self.ids
            .iter()
            .zip(&other.ids)
            .filter(|(a, b)| a != b)
            .count()
    }
}
