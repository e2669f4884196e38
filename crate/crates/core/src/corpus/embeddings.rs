//! Pretrained word vectors in the fastText `.vec` text format.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Vocabulary, PAD};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Range of the uniform draw for words without a pretrained vector.
pub const MISSING_WORD_BOUND: f64 = 0.05;

pub fn load_embeddings<T: Scalar>(
    path: &Path,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> Result<Tensor<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text, vocab, dim, seed)
}

/// Builds a `[|V| × dim]` table: rows of words found in `text` are copied,
/// every other row (UNK included) is drawn from a seeded uniform ±0.05, and
/// the PAD row is zero.
pub fn parse_embeddings<T: Scalar>(
    text: &str,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> Result<Tensor<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = Tensor::<T>::uniform(&[vocab.words.len(), dim], MISSING_WORD_BOUND, &mut rng);
    table.row_mut(PAD).fill(T::zero());

    let mut filled = vec![false; vocab.words.len()];
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if i == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
            let header_dim: usize = fields[1].parse().unwrap_or(0);
            if header_dim != dim {
                return Err(Error::parse(
                    line_no,
                    format!("header declares dimension {header_dim}, expected {dim}"),
                ));
            }
            continue;
        }
        if fields.len() != dim + 1 {
            return Err(Error::parse(
                line_no,
                format!("expected {dim} values, found {}", fields.len() - 1),
            ));
        }
        let Some(id) = vocab.words.get(fields[0]) else { continue };
        if id == PAD || filled[id] {
            continue;
        }
        let row = table.row_mut(id);
        for (slot, field) in row.iter_mut().zip(&fields[1..]) {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::parse(line_no, format!("bad value {field:?}")))?;
            *slot = T::of(v);
        }
        filled[id] = true;
    }
    Ok(table)
}
