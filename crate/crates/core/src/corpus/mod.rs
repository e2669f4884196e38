//! Sentences with gold predicate–argument–role triplets, read from
//! CoNLL-2009 or Universal Proposition Bank files.
//!
//! Token indices are 1-based everywhere in this module, matching the files.
//! Gold sets never contain the null role: a pair without a triplet has no
//! relation.

mod conll09;
mod embeddings;
mod upb;
mod vocab;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

pub use conll09::{parse_conll09, write_conll09};
pub use embeddings::{load_embeddings, parse_embeddings};
pub use upb::{parse_upb, parse_upb_with_stats, write_upb, UpbStats};
pub use vocab::{build_vocab, Vocab, Vocabulary, NULL_ROLE, NULL_ROLE_LABEL, PAD, UNK};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    /// 1-based position in the sentence.
    pub index: usize,
    pub form: String,
    pub pos: String,
    pub chars: Vec<char>,
    /// Leading columns as read (everything before the predicate columns),
    /// kept so predictions can be written back in the source layout.
    pub columns: Vec<String>,
}

impl Token {
    pub fn new(index: usize, form: &str, pos: &str) -> Self {
        Token {
            index,
            form: form.to_string(),
            pos: pos.to_string(),
            chars: form.chars().collect(),
            columns: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triplet {
    pub p: usize,
    pub a: usize,
    pub role: String,
}

impl Triplet {
    pub fn new(p: usize, a: usize, role: impl Into<String>) -> Self {
        Triplet {
            p,
            a,
            role: role.into(),
        }
    }

    /// Surface distance `|p − a|`.
    pub fn distance(&self) -> usize {
        self.p.abs_diff(self.a)
    }
}

impl fmt::Display for Triplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.p, self.a, self.role)
    }
}

/// A predicate row with its (unpredicted) sense label.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Predicate {
    pub index: usize,
    pub sense: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Sentence {
    pub tokens: Vec<Token>,
    /// Rows marked as predicates in the source, in token order.
    pub predicates: Vec<Predicate>,
    pub gold: BTreeSet<Triplet>,
    /// Lines that are not tokens (comments, multiword ranges, empty nodes),
    /// keyed by the number of tokens preceding them.
    pub extra_lines: Vec<(usize, String)>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn predicate_indices(&self) -> BTreeSet<usize> {
        self.predicates.iter().map(|p| p.index).collect()
    }

    /// Checks index ranges and pair uniqueness of the gold set.
    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        for (i, t) in self.tokens.iter().enumerate() {
            if t.index != i + 1 || t.chars.is_empty() {
                return Err(Error::Contract(format!("token {} malformed at position {}", t.index, i + 1)));
            }
        }
        let mut pairs = BTreeSet::new();
        for t in &self.gold {
            if t.p == 0 || t.a == 0 || t.p > n || t.a > n {
                return Err(Error::Contract(format!("triplet {t} outside 1..={n}")));
            }
            if t.role == NULL_ROLE_LABEL {
                return Err(Error::Contract(format!("triplet {t} stores the null role")));
            }
            if !pairs.insert((t.p, t.a)) {
                return Err(Error::Contract(format!("duplicate pair ({},{})", t.p, t.a)));
            }
        }
        Ok(())
    }

    /// Copy of this sentence whose annotation is `triplets`. Predicates are the
    /// tokens heading at least one triplet; known senses are carried over.
    pub fn with_triplets(&self, triplets: BTreeSet<Triplet>) -> Sentence {
        let senses: BTreeMap<usize, &str> = self
            .predicates
            .iter()
            .map(|p| (p.index, p.sense.as_str()))
            .collect();
        let heads: BTreeSet<usize> = triplets.iter().map(|t| t.p).collect();
        let predicates = heads
            .into_iter()
            .map(|index| Predicate {
                index,
                sense: senses.get(&index).unwrap_or(&PREDICTED_SENSE).to_string(),
            })
            .collect();
        Sentence {
            tokens: self.tokens.clone(),
            predicates,
            gold: triplets,
            extra_lines: self.extra_lines.clone(),
        }
    }

    /// APRED cell for `(p, a)`, `_` when there is no relation.
    pub(crate) fn role_table(&self) -> BTreeMap<(usize, usize), &str> {
        self.gold
            .iter()
            .map(|t| ((t.p, t.a), t.role.as_str()))
            .collect()
    }
}

/// Sense written for predicted predicates that have no gold sense.
pub const PREDICTED_SENSE: &str = "Y";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Conll09,
    Upb,
}

impl Format {
    pub fn parse(self, text: &str) -> Result<Vec<Sentence>> {
        match self {
            Format::Conll09 => parse_conll09(text),
            Format::Upb => parse_upb(text),
        }
    }

    pub fn write(self, sentences: &[Sentence]) -> String {
        match self {
            Format::Conll09 => write_conll09(sentences),
            Format::Upb => write_upb(sentences),
        }
    }

    pub fn read_file(self, path: &Path) -> Result<Vec<Sentence>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.parse(&text)
    }

    pub fn name(self) -> &'static str {
        match self {
            Format::Conll09 => "conll09",
            Format::Upb => "upb",
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conll09" => Ok(Format::Conll09),
            "upb" => Ok(Format::Upb),
            other => Err(Error::Contract(format!(
                "unknown format {other:?} (expected conll09 or upb)"
            ))),
        }
    }
}

/// Splits text into blank-line separated blocks of `(line number, line)`.
/// CRLF endings are tolerated.
pub(crate) fn blocks(text: &str) -> Vec<Vec<(usize, &str)>> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
        } else {
            current.push((i + 1, line));
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// Tab-separated when the line has tabs, otherwise whitespace-separated.
pub(crate) fn split_columns(line: &str) -> Vec<&str> {
    if line.contains('\t') {
        line.split('\t').collect()
    } else {
        line.split_whitespace().collect()
    }
}
