//! Seeded toy corpora for capacity and long-range experiments.

use std::ops::RangeInclusive;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Predicate, Sentence, Token, Triplet};

const FILLERS: [&str; 6] = ["de", "le", "zai", "hen", "ye", "dou"];
const NOUNS: [&str; 5] = ["mao", "gou", "shu", "che", "ren"];
const VERBS: [&str; 3] = ["chi", "kan", "mai"];

fn sentence(words: &[(&str, &str)], predicates: &[usize], gold: Vec<Triplet>) -> Sentence {
    let tokens = words
        .iter()
        .enumerate()
        .map(|(i, (form, pos))| Token::new(i + 1, form, pos))
        .collect();
    Sentence {
        tokens,
        predicates: predicates
            .iter()
            .map(|&index| Predicate {
                index,
                sense: "Y".into(),
            })
            .collect(),
        gold: gold.into_iter().collect(),
        extra_lines: Vec::new(),
    }
}

/// Short sentences (at most 8 tokens) with one or two predicates. Nouns left
/// of a verb are `A0`, nouns right of it `A1`, and the adverb `hen` next to
/// a verb is `A2`; each verb governs the nearest noun on each side.
pub fn capacity_corpus(count: usize, seed: u64) -> Vec<Sentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.gen_range(4..=8);
            let mut words: Vec<(&str, &str)> = (0..n)
                .map(|_| match rng.gen_range(0..3) {
                    0 => (*NOUNS.choose(&mut rng).unwrap(), "NN"),
                    _ => (*FILLERS[..2].choose(&mut rng).unwrap(), "DEC"),
                })
                .collect();
            let verbs = if n >= 7 { 2 } else { 1 };
            let mut positions: Vec<usize> = (0..n).collect();
            positions.shuffle(&mut rng);
            let mut vpos: Vec<usize> = positions[..verbs].to_vec();
            vpos.sort_unstable();
            for &v in &vpos {
                words[v] = (*VERBS.choose(&mut rng).unwrap(), "VV");
            }
            if rng.gen_bool(0.5) {
                let v = vpos[0];
                if v + 1 < n && words[v + 1].1 != "VV" {
                    words[v + 1] = ("hen", "AD");
                }
            }
            let mut gold = Vec::new();
            for &v in &vpos {
                let left = (0..v).rev().take_while(|&i| words[i].1 != "VV").find(|&i| words[i].1 == "NN");
                let right = (v + 1..n).take_while(|&i| words[i].1 != "VV").find(|&i| words[i].1 == "NN");
                if let Some(a) = left {
                    gold.push(Triplet::new(v + 1, a + 1, "A0"));
                }
                if let Some(a) = right {
                    gold.push(Triplet::new(v + 1, a + 1, "A1"));
                }
                if v + 1 < n && words[v + 1].0 == "hen" {
                    gold.push(Triplet::new(v + 1, v + 2, "A2"));
                }
            }
            let preds: Vec<usize> = vpos.iter().map(|v| v + 1).collect();
            sentence(&words, &preds, gold)
        })
        .collect()
}

/// Sentences with one verb, a near argument whose role depends only on its
/// side of the verb (`A0` left, `A1` right), and a far argument 7 or 8
/// tokens away whose role is `A2` or `A3` depending on a marker word (`ma`
/// or `mb`) placed 7 or 8 tokens before the verb. The marker is itself an
/// argument of the verb with role `AM` or `BM`, so the far role agrees with
/// a label that is easy to predict locally.
pub fn long_range_corpus(count: usize, seed: u64) -> Vec<Sentence> {
    long_range_corpus_with(count, seed, 7..=8)
}

/// [`long_range_corpus`] with the marker-to-verb distance drawn from
/// `marker_gap`, which must start at 7 or more.
pub fn long_range_corpus_with(count: usize, seed: u64, marker_gap: RangeInclusive<usize>) -> Vec<Sentence> {
    assert!(*marker_gap.start() >= 7, "marker gap must be at least 7");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let far = rng.gen_range(7..=8);
            let marker_gap = rng.gen_range(marker_gap.clone());
            let lead = rng.gen_range(0..=1);
            let tail = rng.gen_range(0..=1);
            // Layout left to right: lead fillers, marker, gap, verb, span to the
            // far argument, tail fillers.
            let n = lead + 1 + marker_gap + far + tail;
            let mut words: Vec<(&str, &str)> = (0..n)
                .map(|_| (*FILLERS.choose(&mut rng).unwrap(), "DEC"))
                .collect();
            let marker = lead;
            let verb = marker + marker_gap;
            let far_arg = verb + far;
            let a_marker = rng.gen_bool(0.5);
            words[marker] = (if a_marker { "ma" } else { "mb" }, "MK");
            words[verb] = (*VERBS.choose(&mut rng).unwrap(), "VV");
            words[far_arg] = (*NOUNS.choose(&mut rng).unwrap(), "NN");
            let near = if rng.gen_bool(0.5) { verb - rng.gen_range(1..=2) } else { verb + rng.gen_range(1..=2) };
            words[near] = (*NOUNS.choose(&mut rng).unwrap(), "NN");
            let near_role = if near < verb { "A0" } else { "A1" };
            let far_role = if a_marker { "A2" } else { "A3" };
            let marker_role = if a_marker { "AM" } else { "BM" };
            let gold = vec![
                Triplet::new(verb + 1, marker + 1, marker_role),
                Triplet::new(verb + 1, near + 1, near_role),
                Triplet::new(verb + 1, far_arg + 1, far_role),
            ];
            sentence(&words, &[verb + 1], gold)
        })
        .collect()
}
