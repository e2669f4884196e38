//! Decoding and scoring: labeled argument P/R/F1, predicate detection,
//! distance buckets and iteration sweeps.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::corpus::{Sentence, Triplet, Vocabulary, NULL_ROLE};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Micro-averaged counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Prf {
    pub correct: usize,
    pub predicted: usize,
    pub gold: usize,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl Prf {
    pub fn precision(&self) -> f64 {
        ratio(self.correct, self.predicted)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.correct, self.gold)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    /// Nothing predicted and nothing to find.
    pub fn no_data(&self) -> bool {
        self.predicted == 0 && self.gold == 0
    }

    fn add(&mut self, other: Prf) {
        self.correct += other.correct;
        self.predicted += other.predicted;
        self.gold += other.gold;
    }

    fn of_sets<X: Ord>(pred: &BTreeSet<X>, gold: &BTreeSet<X>) -> Prf {
        Prf {
            correct: pred.intersection(gold).count(),
            predicted: pred.len(),
            gold: gold.len(),
        }
    }
}

/// Triplets from `[K × |R|]` role scores: per pair the highest-scoring role,
/// ties to the lowest id, null predictions dropped. Indices become 1-based.
pub fn decode_scores<T: Scalar>(pairs: &[(usize, usize)], scores: &Tensor<T>, vocab: &Vocabulary) -> BTreeSet<Triplet> {
    let mut out = BTreeSet::new();
    for (k, &(p, a)) in pairs.iter().enumerate() {
        let row = scores.row(k);
        let mut best = 0;
        for r in 1..row.len() {
            if row[r] > row[best] {
                best = r;
            }
        }
        if best != NULL_ROLE {
            out.insert(Triplet::new(p + 1, a + 1, vocab.roles.item(best)));
        }
    }
    out
}

pub fn decode<T: Scalar>(model: &Model<T>, sentence: &Sentence, iterations: usize) -> Result<BTreeSet<Triplet>> {
    let inst = model.instance(sentence)?;
    let (pairs, scores) = model.scores(&inst, iterations)?;
    Ok(decode_scores(&pairs, &scores, &model.vocab))
}

/// Copies of `sentences` annotated with the model's predictions.
pub fn predict_corpus<T: Scalar>(model: &Model<T>, sentences: &[Sentence], iterations: usize) -> Result<Vec<Sentence>> {
    sentences
        .par_iter()
        .map(|s| Ok(s.with_triplets(decode(model, s, iterations)?)))
        .collect()
}

fn check_aligned(pred: usize, gold: usize) -> Result<()> {
    if pred != gold {
        return Err(Error::Contract(format!(
            "{pred} predicted sentences but {gold} gold sentences"
        )));
    }
    Ok(())
}

/// Exact `(p, a, r)` matches, summed over sentences.
pub fn score_arguments(pred: &[BTreeSet<Triplet>], gold: &[BTreeSet<Triplet>]) -> Result<Prf> {
    check_aligned(pred.len(), gold.len())?;
    let mut total = Prf::default();
    for (p, g) in pred.iter().zip(gold) {
        total.add(Prf::of_sets(p, g));
    }
    Ok(total)
}

/// Predicted predicates are the heads of predicted triplets.
pub fn score_predicates(pred: &[BTreeSet<Triplet>], gold: &[BTreeSet<usize>]) -> Result<Prf> {
    check_aligned(pred.len(), gold.len())?;
    let mut total = Prf::default();
    for (p, g) in pred.iter().zip(gold) {
        let heads: BTreeSet<usize> = p.iter().map(|t| t.p).collect();
        total.add(Prf::of_sets(&heads, g));
    }
    Ok(total)
}

pub const BUCKET_LABELS: [&str; 7] = ["1", "2", "3", "4", "5", "6", ">=7"];

/// Bucket index of a triplet by surface distance; self-pairs share bucket 1.
pub fn bucket(t: &Triplet) -> usize {
    t.distance().clamp(1, 7) - 1
}

pub fn distance_report(pred: &[BTreeSet<Triplet>], gold: &[BTreeSet<Triplet>]) -> Result<[Prf; 7]> {
    check_aligned(pred.len(), gold.len())?;
    let mut buckets = [Prf::default(); 7];
    let mut self_pairs = 0;
    for (p, g) in pred.iter().zip(gold) {
        for t in p {
            let b = &mut buckets[bucket(t)];
            b.predicted += 1;
            if g.contains(t) {
                b.correct += 1;
            }
            self_pairs += usize::from(t.distance() == 0);
        }
        for t in g {
            buckets[bucket(t)].gold += 1;
            self_pairs += usize::from(t.distance() == 0);
        }
    }
    if self_pairs > 0 {
        log::warn!("{self_pairs} self-pair triplets counted in distance bucket 1");
    }
    Ok(buckets)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub arguments: Prf,
    pub predicates: Prf,
    pub roles: BTreeMap<String, Prf>,
    pub buckets: [Prf; 7],
    pub sentences: usize,
}

impl EvalReport {
    /// Compares the triplets of `pred` against `gold`. Gold predicates are
    /// the rows marked as predicates in `gold`.
    pub fn compute(pred: &[Sentence], gold: &[Sentence]) -> Result<EvalReport> {
        check_aligned(pred.len(), gold.len())?;
        let p: Vec<BTreeSet<Triplet>> = pred.iter().map(|s| s.gold.clone()).collect();
        let g: Vec<BTreeSet<Triplet>> = gold.iter().map(|s| s.gold.clone()).collect();
        let gold_predicates: Vec<BTreeSet<usize>> = gold.iter().map(Sentence::predicate_indices).collect();
        let mut roles: BTreeMap<String, Prf> = BTreeMap::new();
        for (ps, gs) in p.iter().zip(&g) {
            for t in ps {
                let e = roles.entry(t.role.clone()).or_default();
                e.predicted += 1;
                e.correct += usize::from(gs.contains(t));
            }
            for t in gs {
                roles.entry(t.role.clone()).or_default().gold += 1;
            }
        }
        Ok(EvalReport {
            arguments: score_arguments(&p, &g)?,
            predicates: score_predicates(&p, &gold_predicates)?,
            roles,
            buckets: distance_report(&p, &g)?,
            sentences: gold.len(),
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let line = |out: &mut String, name: &str, m: &Prf| {
            let _ = writeln!(
                out,
                "{name:<12} P {:.4}  R {:.4}  F1 {:.4}  ({} correct / {} predicted / {} gold){}",
                m.precision(),
                m.recall(),
                m.f1(),
                m.correct,
                m.predicted,
                m.gold,
                if m.no_data() { "  no data" } else { "" }
            );
        };
        let _ = writeln!(out, "sentences    {}", self.sentences);
        line(&mut out, "arguments", &self.arguments);
        line(&mut out, "predicates", &self.predicates);
        let _ = writeln!(out, "\nby distance");
        for (label, b) in BUCKET_LABELS.iter().zip(&self.buckets) {
            line(&mut out, label, b);
        }
        let _ = writeln!(out, "\nby role");
        for (role, m) in &self.roles {
            line(&mut out, role, m);
        }
        out
    }

    /// Tab-separated records: `kind  name  correct  predicted  gold  P  R  F1`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("kind\tname\tcorrect\tpredicted\tgold\tprecision\trecall\tf1\n");
        let mut row = |kind: &str, name: &str, m: &Prf| {
            let _ = writeln!(
                out,
                "{kind}\t{name}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}",
                m.correct,
                m.predicted,
                m.gold,
                m.precision(),
                m.recall(),
                m.f1()
            );
        };
        row("metric", "arguments", &self.arguments);
        row("metric", "predicates", &self.predicates);
        for (label, b) in BUCKET_LABELS.iter().zip(&self.buckets) {
            row("distance", label, b);
        }
        for (role, m) in &self.roles {
            row("role", role, m);
        }
        out
    }
}

/// Models evaluated by [`iteration_sweep`].
pub enum SweepModels<'a, T: Scalar> {
    /// One parameter set run at every iteration count.
    Shared(&'a Model<T>),
    /// A separately trained model per iteration count.
    PerIteration(Vec<(usize, &'a Model<T>)>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub iterations: usize,
    pub arguments: Prf,
    pub predicates: Prf,
}

pub fn iteration_sweep<T: Scalar>(models: &SweepModels<'_, T>, dev: &[Sentence], range: &[usize]) -> Result<Vec<SweepRow>> {
    if range.is_empty() {
        return Err(Error::Contract("empty iteration range".into()));
    }
    let mut ns = range.to_vec();
    ns.sort_unstable();
    ns.dedup();
    ns.into_iter()
        .map(|n| {
            let model = match models {
                SweepModels::Shared(m) => *m,
                SweepModels::PerIteration(list) => list
                    .iter()
                    .find(|(k, _)| *k == n)
                    .map(|(_, m)| *m)
                    .ok_or_else(|| Error::Contract(format!("no model trained with {n} iterations")))?,
            };
            let pred = predict_corpus(model, dev, n)?;
            let report = EvalReport::compute(&pred, dev)?;
            Ok(SweepRow {
                iterations: n,
                arguments: report.arguments,
                predicates: report.predicates,
            })
        })
        .collect()
}

pub fn sweep_tsv(rows: &[SweepRow], shared: bool) -> String {
    let mut out = format!(
        "# parameters: {}\niterations\targ_p\targ_r\targ_f1\tprd_p\tprd_r\tprd_f1\n",
        if shared { "shared across rows" } else { "trained per row" }
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            r.iterations,
            r.arguments.precision(),
            r.arguments.recall(),
            r.arguments.f1(),
            r.predicates.precision(),
            r.predicates.recall(),
            r.predicates.f1()
        );
    }
    out
}

pub fn distance_tsv(buckets: &[Prf; 7]) -> String {
    let mut out = String::from("distance\tcorrect\tpredicted\tgold\tprecision\trecall\tf1\n");
    for (label, b) in BUCKET_LABELS.iter().zip(buckets) {
        let _ = writeln!(
            out,
            "{label}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}",
            b.correct,
            b.predicted,
            b.gold,
            b.precision(),
            b.recall(),
            b.f1()
        );
    }
    out
}
