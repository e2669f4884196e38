//! CoNLL-2009 blocks: `ID FORM LEMMA PLEMMA POS PPOS FEAT PFEAT HEAD PHEAD
//! DEPREL PDEPREL FILLPRED PRED APRED1..APREDm`, one APRED column per row
//! marked `FILLPRED = Y`, in row order.

use std::collections::BTreeSet;

use super::{blocks, split_columns, Predicate, Sentence, Token, Triplet, PREDICTED_SENSE};
use crate::error::{Error, Result};

const FIXED_COLUMNS: usize = 14;
const FORM: usize = 1;
const POS: usize = 4;
const PPOS: usize = 5;
const FILLPRED: usize = 12;
const PRED: usize = 13;

pub fn parse_conll09(text: &str) -> Result<Vec<Sentence>> {
    blocks(text).into_iter().map(|b| parse_block(&b)).collect()
}

fn parse_block(rows: &[(usize, &str)]) -> Result<Sentence> {
    let mut table = Vec::with_capacity(rows.len());
    let mut sentence = Sentence::default();
    for (position, &(line, text)) in rows.iter().enumerate() {
        let cols = split_columns(text);
        if cols.len() < FIXED_COLUMNS {
            return Err(Error::parse(
                line,
                format!("expected at least {FIXED_COLUMNS} columns, found {}", cols.len()),
            ));
        }
        let id: usize = cols[0]
            .parse()
            .map_err(|_| Error::parse(line, format!("non-integer ID {:?}", cols[0])))?;
        if id != position + 1 {
            return Err(Error::parse(line, format!("ID {id} at position {}", position + 1)));
        }
        let pos = if cols[POS] == "_" { cols[PPOS] } else { cols[POS] };
        let mut token = Token::new(id, cols[FORM], pos);
        token.columns = cols[..FILLPRED].iter().map(|c| c.to_string()).collect();
        sentence.tokens.push(token);
        if cols[FILLPRED] == "Y" {
            sentence.predicates.push(Predicate {
                index: id,
                sense: cols[PRED].to_string(),
            });
        }
        table.push((line, cols));
    }

    let m = sentence.predicates.len();
    for (a, (line, cols)) in table.iter().enumerate() {
        let args = &cols[FIXED_COLUMNS..];
        if args.len() != m {
            return Err(Error::parse(
                *line,
                format!("{} APRED columns for {m} predicates", args.len()),
            ));
        }
        for (pred, cell) in sentence.predicates.iter().zip(args) {
            if *cell != "_" {
                sentence.gold.insert(Triplet::new(pred.index, a + 1, *cell));
            }
        }
    }
    Ok(sentence)
}

pub fn write_conll09(sentences: &[Sentence]) -> String {
    let mut out = String::new();
    for (i, s) in sentences.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let predicates = predicate_columns(s);
        let roles = s.role_table();
        for token in &s.tokens {
            let mut cols: Vec<String> = if token.columns.len() == FILLPRED {
                token.columns.clone()
            } else {
                let mut c = vec!["_".to_string(); FILLPRED];
                c[0] = token.index.to_string();
                c[FORM] = token.form.clone();
                c[POS] = token.pos.clone();
                c
            };
            match predicates.iter().find(|p| p.index == token.index) {
                Some(p) => {
                    cols.push("Y".into());
                    cols.push(p.sense.clone());
                }
                None => {
                    cols.push("_".into());
                    cols.push("_".into());
                }
            }
            for p in &predicates {
                let cell = roles.get(&(p.index, token.index)).copied().unwrap_or("_");
                cols.push(cell.to_string());
            }
            out.push_str(&cols.join("\t"));
            out.push('\n');
        }
    }
    out
}

/// Declared predicates plus any triplet head that was not declared.
pub(crate) fn predicate_columns(s: &Sentence) -> Vec<Predicate> {
    let mut preds: Vec<Predicate> = s.predicates.clone();
    let declared: BTreeSet<usize> = s.predicate_indices();
    for t in &s.gold {
        if !declared.contains(&t.p) && !preds.iter().any(|p| p.index == t.p) {
            preds.push(Predicate {
                index: t.p,
                sense: PREDICTED_SENSE.to_string(),
            });
        }
    }
    preds.sort();
    preds
}
