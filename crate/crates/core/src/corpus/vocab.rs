use std::collections::HashMap;

use super::Sentence;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
/// Role id of the null label.
pub const NULL_ROLE: usize = 0;
pub const NULL_ROLE_LABEL: &str = "_";

const PAD_LABEL: &str = "<pad>";
const UNK_LABEL: &str = "<unk>";

/// Bijective symbol table.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Vocab {
    items: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_items(items: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            if index.insert(item.clone(), i).is_some() {
                return Err(Error::Contract(format!("duplicate vocabulary entry {item:?}")));
            }
        }
        Ok(Vocab { items, index })
    }

    pub fn get(&self, item: &str) -> Option<usize> {
        self.index.get(item).copied()
    }

    pub fn id_or_unk(&self, item: &str) -> usize {
        self.get(item).unwrap_or(UNK)
    }

    pub fn item(&self, id: usize) -> &str {
        &self.items[id]
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Word, POS, character and role tables. Token tables reserve `PAD = 0` and
/// `UNK = 1`; the role table reserves the null label at id 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    pub words: Vocab,
    pub pos: Vocab,
    pub chars: Vocab,
    pub roles: Vocab,
}

impl Vocabulary {
    pub fn word_id(&self, form: &str) -> usize {
        self.words.id_or_unk(form)
    }

    pub fn pos_id(&self, tag: &str) -> usize {
        self.pos.id_or_unk(tag)
    }

    pub fn char_id(&self, c: char) -> usize {
        let mut buf = [0u8; 4];
        self.chars.id_or_unk(c.encode_utf8(&mut buf))
    }

    pub fn role_id(&self, role: &str) -> Option<usize> {
        self.roles.get(role)
    }

    pub fn num_roles(&self) -> usize {
        self.roles.len()
    }
}

/// Frequency-descending, then lexicographic.
fn ranked(counts: HashMap<String, usize>, min_freq: usize) -> Vec<String> {
    let mut entries: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_freq).collect();
    entries.sort_by(|(a, ca), (b, cb)| cb.cmp(ca).then_with(|| a.cmp(b)));
    entries.into_iter().map(|(s, _)| s).collect()
}

fn with_reserved(reserved: &[&str], rest: Vec<String>) -> Result<Vocab> {
    let mut items: Vec<String> = reserved.iter().map(|s| s.to_string()).collect();
    items.extend(rest.into_iter().filter(|s| !reserved.contains(&s.as_str())));
    Vocab::from_items(items)
}

/// Words seen fewer than `min_freq` times fall back to UNK at lookup time; POS
/// tags, characters and roles are kept whenever observed.
pub fn build_vocab(sentences: &[Sentence], min_freq: usize) -> Result<Vocabulary> {
    if min_freq == 0 {
        return Err(Error::Contract("min_freq must be at least 1".into()));
    }
    if sentences.iter().all(Sentence::is_empty) {
        return Err(Error::Contract("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut words = HashMap::new();
    let mut pos = HashMap::new();
    let mut chars = HashMap::new();
    let mut roles = HashMap::new();
    for s in sentences {
        for t in &s.tokens {
            *words.entry(t.form.clone()).or_insert(0) += 1;
            *pos.entry(t.pos.clone()).or_insert(0) += 1;
            for c in &t.chars {
                *chars.entry(c.to_string()).or_insert(0) += 1;
            }
        }
        for t in &s.gold {
            *roles.entry(t.role.clone()).or_insert(0) += 1;
        }
    }
    Ok(Vocabulary {
        words: with_reserved(&[PAD_LABEL, UNK_LABEL], ranked(words, min_freq))?,
        pos: with_reserved(&[PAD_LABEL, UNK_LABEL], ranked(pos, 1))?,
        chars: with_reserved(&[PAD_LABEL, UNK_LABEL], ranked(chars, 1))?,
        roles: with_reserved(&[NULL_ROLE_LABEL], ranked(roles, 1))?,
    })
}
