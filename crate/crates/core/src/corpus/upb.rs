//! Universal Proposition Bank files: the ten CoNLL-U columns, a predicate
//! sense column (`_` for non-predicates), then one argument column per
//! predicate in row order. Comments, multiword ranges (`3-4`) and empty nodes
//! (`5.1`) do not take part in token indexing.

use log::warn;

use super::conll09::predicate_columns;
use super::{blocks, split_columns, Predicate, Sentence, Token, Triplet};
use crate::error::{Error, Result};

const CONLLU_COLUMNS: usize = 10;
const FORM: usize = 1;
const UPOS: usize = 3;
const SENSE: usize = 10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct UpbStats {
    /// Non-`_` predicate or argument cells on range / empty-node lines.
    pub dropped_annotations: usize,
}

pub fn parse_upb(text: &str) -> Result<Vec<Sentence>> {
    let (sentences, stats) = parse_upb_with_stats(text)?;
    if stats.dropped_annotations > 0 {
        warn!(
            "dropped {} annotations on multiword-range or empty-node lines",
            stats.dropped_annotations
        );
    }
    Ok(sentences)
}

pub fn parse_upb_with_stats(text: &str) -> Result<(Vec<Sentence>, UpbStats)> {
    let mut stats = UpbStats::default();
    let mut out = Vec::new();
    for block in blocks(text) {
        out.push(parse_block(&block, &mut stats)?);
    }
    Ok((out, stats))
}

enum RowId {
    Token(usize),
    Skipped,
}

fn row_id(line: usize, id: &str) -> Result<RowId> {
    let bad = || Error::parse(line, format!("malformed ID {id:?}"));
    if let Some((a, b)) = id.split_once('-') {
        a.parse::<usize>().map_err(|_| bad())?;
        b.parse::<usize>().map_err(|_| bad())?;
        return Ok(RowId::Skipped);
    }
    if let Some((a, b)) = id.split_once('.') {
        a.parse::<usize>().map_err(|_| bad())?;
        b.parse::<usize>().map_err(|_| bad())?;
        return Ok(RowId::Skipped);
    }
    id.parse().map(RowId::Token).map_err(|_| bad())
}

fn parse_block(rows: &[(usize, &str)], stats: &mut UpbStats) -> Result<Sentence> {
    let mut sentence = Sentence::default();
    let mut table = Vec::new();
    for &(line, text) in rows {
        if text.starts_with('#') {
            sentence.extra_lines.push((sentence.tokens.len(), text.to_string()));
            continue;
        }
        let cols = split_columns(text);
        if cols.len() < CONLLU_COLUMNS {
            return Err(Error::parse(
                line,
                format!("expected at least {CONLLU_COLUMNS} columns, found {}", cols.len()),
            ));
        }
        match row_id(line, cols[0])? {
            RowId::Skipped => {
                stats.dropped_annotations +=
                    cols[CONLLU_COLUMNS..].iter().filter(|c| **c != "_").count();
                sentence.extra_lines.push((sentence.tokens.len(), text.to_string()));
            }
            RowId::Token(id) => {
                let expected = sentence.tokens.len() + 1;
                if id != expected {
                    return Err(Error::parse(line, format!("ID {id} at position {expected}")));
                }
                let mut token = Token::new(id, cols[FORM], cols[UPOS]);
                token.columns = cols[..CONLLU_COLUMNS].iter().map(|c| c.to_string()).collect();
                sentence.tokens.push(token);
                let sense = cols.get(SENSE).copied().unwrap_or("_");
                if sense != "_" {
                    sentence.predicates.push(Predicate {
                        index: id,
                        sense: sense.to_string(),
                    });
                }
                table.push((line, cols));
            }
        }
    }

    let m = sentence.predicates.len();
    for (a, (line, cols)) in table.iter().enumerate() {
        let args = cols.get(SENSE + 1..).unwrap_or(&[]);
        if args.len() != m {
            return Err(Error::parse(
                *line,
                format!("{} argument columns for {m} predicates", args.len()),
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

pub fn write_upb(sentences: &[Sentence]) -> String {
    let mut out = String::new();
    for (i, s) in sentences.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let predicates = predicate_columns(s);
        let roles = s.role_table();
        let mut extra = s.extra_lines.iter().peekable();
        for token in &s.tokens {
            while let Some((_, line)) = extra.next_if(|(pos, _)| *pos < token.index) {
                out.push_str(line);
                out.push('\n');
            }
            let mut cols: Vec<String> = if token.columns.len() == CONLLU_COLUMNS {
                token.columns.clone()
            } else {
                let mut c = vec!["_".to_string(); CONLLU_COLUMNS];
                c[0] = token.index.to_string();
                c[FORM] = token.form.clone();
                c[UPOS] = token.pos.clone();
                c
            };
            let sense = predicates
                .iter()
                .find(|p| p.index == token.index)
                .map_or("_", |p| p.sense.as_str());
            cols.push(sense.to_string());
            for p in &predicates {
                let cell = roles.get(&(p.index, token.index)).copied().unwrap_or("_");
                cols.push(cell.to_string());
            }
            out.push_str(&cols.join("\t"));
            out.push('\n');
        }
        for (_, line) in extra {
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const BLOCK: &str = "# sent_id = 1\n\
# text = 他们吃饭\n\
1-2\t他们吃\t_\t_\t_\t_\t_\t_\t_\t_\t_\t_\n\
1\t他们\t他们\tPRON\t_\t_\t2\tnsubj\t_\t_\t_\tARG0\n\
2\t吃\t吃\tVERB\t_\t_\t0\troot\t_\t_\teat.01\t_\n\
3\t饭\t饭\tNOUN\t_\t_\t2\tobj\t_\t_\t_\tARG1\n";

    #[test]
    fn minimal_block() {
        let s = parse_upb(BLOCK).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].len(), 3);
        assert_eq!(
            s[0].gold,
            [Triplet::new(2, 1, "ARG0"), Triplet::new(2, 3, "ARG1")]
                .into_iter()
                .collect()
        );
        assert_eq!(s[0].tokens[1].pos, "VERB");
    }

    #[test]
    fn range_and_comment_lines_are_not_tokens() {
        let s = parse_upb(BLOCK).unwrap();
        assert_eq!(s[0].tokens[0].form, "他们");
        assert_eq!(s[0].extra_lines.len(), 3);
    }

    #[test]
    fn annotations_on_range_lines_are_counted() {
        let text = BLOCK.replace("1-2\t他们吃\t_\t_\t_\t_\t_\t_\t_\t_\t_\t_", "1-2\t他们吃\t_\t_\t_\t_\t_\t_\t_\t_\t_\tARG9");
        let (_, stats) = parse_upb_with_stats(&text).unwrap();
        assert_eq!(stats.dropped_annotations, 1);
    }

    #[test]
    fn empty_nodes_are_skipped() {
        let text = BLOCK.replace(
            "3\t饭",
            "2.1\tx\t_\t_\t_\t_\t_\t_\t_\t_\t_\t_\n3\t饭",
        );
        let s = parse_upb(&text).unwrap();
        assert_eq!(s[0].len(), 3);
    }

    #[test]
    fn malformed_id_reports_line() {
        let text = BLOCK.replace("3\t饭", "x3\t饭");
        match parse_upb(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn write_then_parse_round_trips() {
        let s = parse_upb(BLOCK).unwrap();
        let written = write_upb(&s);
        assert_eq!(written, BLOCK);
        assert_eq!(parse_upb(&written).unwrap(), s);
    }
}
