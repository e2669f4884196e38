use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use srl_core::config::{AttentionScope, ModelConfig, PairPolicy};
use srl_core::corpus::{build_vocab, Format, Predicate, Sentence, Token, Triplet};
use srl_core::eval::{bucket, decode_scores, score_arguments, Prf, BUCKET_LABELS};
use srl_core::model::Model;
use srl_core::params::{ParamGroup, ParamId, ParamStore};
use srl_core::tensor::{grad_check, Graph, Tensor, Var};
use srl_core::trainer::{loss_value, sentence_loss, LossOptions};
use srl_core::Result;

/// Builds `out = f(inputs)` and reduces it with fixed random weights so every
/// output element gets a distinct upstream gradient.
type OpFn = fn(&mut Graph<'_, f64>, &[Var]) -> Var;

struct OpCase {
    name: &'static str,
    shapes: &'static [&'static [usize]],
    build: OpFn,
}

fn op_cases() -> Vec<OpCase> {
    vec![
        OpCase { name: "matmul", shapes: &[&[3, 4], &[4, 2]], build: |g, x| g.matmul(x[0], x[1]).unwrap() },
        OpCase { name: "add", shapes: &[&[3, 4], &[3, 4]], build: |g, x| g.add(x[0], x[1]).unwrap() },
        OpCase { name: "sub", shapes: &[&[3, 4], &[3, 4]], build: |g, x| g.sub(x[0], x[1]).unwrap() },
        OpCase { name: "mul", shapes: &[&[3, 4], &[3, 4]], build: |g, x| g.mul(x[0], x[1]).unwrap() },
        OpCase { name: "add_row", shapes: &[&[3, 4], &[1, 4]], build: |g, x| g.add_row(x[0], x[1]).unwrap() },
        OpCase { name: "scale", shapes: &[&[2, 3]], build: |g, x| g.scale(x[0], -1.7) },
        OpCase { name: "tanh", shapes: &[&[2, 3]], build: |g, x| g.tanh(x[0]) },
        OpCase { name: "relu", shapes: &[&[2, 3]], build: |g, x| g.relu(x[0]) },
        OpCase { name: "sigmoid", shapes: &[&[2, 3]], build: |g, x| g.sigmoid(x[0]) },
        OpCase { name: "softmax", shapes: &[&[5]], build: |g, x| g.softmax(x[0]).unwrap() },
        OpCase { name: "concat0", shapes: &[&[2, 3], &[1, 3]], build: |g, x| g.concat(&[x[0], x[1]], 0).unwrap() },
        OpCase { name: "concat1", shapes: &[&[2, 3], &[2, 2]], build: |g, x| g.concat(&[x[0], x[1]], 1).unwrap() },
        OpCase { name: "slice_rows", shapes: &[&[4, 2]], build: |g, x| g.slice_rows(x[0], 1, 2).unwrap() },
        OpCase { name: "slice_cols", shapes: &[&[2, 4]], build: |g, x| g.slice_cols(x[0], 1, 2).unwrap() },
        OpCase { name: "gather_rows", shapes: &[&[3, 2]], build: |g, x| g.gather_rows(x[0], &[2, 0, 2, 1]).unwrap() },
        OpCase { name: "reshape", shapes: &[&[2, 3]], build: |g, x| g.reshape(x[0], &[3, 2]).unwrap() },
        OpCase { name: "transpose", shapes: &[&[2, 3]], build: |g, x| g.transpose(x[0]).unwrap() },
        OpCase { name: "segment_max", shapes: &[&[5, 3]], build: |g, x| g.segment_max(x[0], &[2, 3]).unwrap() },
        OpCase {
            name: "cross_entropy",
            shapes: &[&[3, 4]],
            build: |g, x| g.cross_entropy(x[0], &[1, 0, 3], Some(&[1.0, 0.5, 2.0])).unwrap(),
        },
        OpCase {
            name: "shared_input",
            shapes: &[&[2, 2]],
            build: |g, x| {
                let y = g.mul(x[0], x[0]).unwrap();
                g.matmul(y, x[0]).unwrap()
            },
        },
    ]
}

fn check_op(case: &OpCase, seed: u64) -> Option<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<f64>::new();
    let ids: Vec<ParamId> = case
        .shapes
        .iter()
        .enumerate()
        .map(|(i, shape)| store.add(format!("x{i}"), ParamGroup::Ffn, Tensor::uniform(shape, 1.5, &mut rng)))
        .collect();
    let build = case.build;
    let forward = |g: &mut Graph<'_, f64>| -> Var {
        let inputs: Vec<Var> = ids.iter().map(|&id| g.param(id)).collect();
        build(g, &inputs)
    };
    // Fixed upstream weights, drawn once per seed.
    let probe = {
        let mut g = Graph::with_params(&store);
        let out = forward(&mut g);
        if g.kink_margin() < 1e-3 {
            return None;
        }
        Tensor::<f64>::uniform(g.shape(out), 1.0, &mut rng)
    };
    let report = grad_check(
        &store,
        |params, want| {
            let mut g = Graph::with_params(params);
            let out = forward(&mut g);
            let w = g.constant(probe.clone());
            let prod = g.mul(out, w)?;
            let l = g.sum(prod);
            Ok((g.value(l).data()[0], want.then(|| g.backward(l)).transpose()?))
        },
        1e-5,
        None,
    )
    .unwrap();
    Some(report.max_error())
}

#[test]
fn every_op_passes_gradient_checks_over_many_seeds() {
    for case in op_cases() {
        let mut checked = 0;
        for seed in 0..40u64 {
            if let Some(err) = check_op(&case, seed) {
                assert!(err < 1e-4, "{} seed {seed}: {err:e}", case.name);
                checked += 1;
            }
        }
        assert!(checked >= 20, "{}: only {checked} smooth draws", case.name);
    }
}

fn arb_sentence() -> impl Strategy<Value = Sentence> {
    (1usize..7)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(("[a-z]{1,5}", prop::sample::select(vec!["NN", "VV", "AD"])), n),
                prop::collection::vec(any::<bool>(), n),
                prop::collection::vec((0..n, 0..n, prop::sample::select(vec!["A0", "A1", "AM-TMP"])), 0..6),
            )
        })
        .prop_map(|(words, is_pred, triples)| {
            let tokens: Vec<Token> = words
                .iter()
                .enumerate()
                .map(|(i, (f, p))| Token::new(i + 1, f, p))
                .collect();
            let predicates: Vec<Predicate> = is_pred
                .iter()
                .enumerate()
                .filter(|(_, &b)| b)
                .map(|(i, _)| Predicate {
                    index: i + 1,
                    sense: "01".into(),
                })
                .collect();
            let mut gold = BTreeSet::new();
            let mut used = BTreeSet::new();
            for (p, a, r) in triples {
                if is_pred[p] && used.insert((p, a)) {
                    gold.insert(Triplet::new(p + 1, a + 1, r));
                }
            }
            Sentence {
                tokens,
                predicates,
                gold,
                extra_lines: Vec::new(),
            }
        })
}

fn tiny_model(seed: u64, sentences: &[Sentence], policy: PairPolicy, scope: AttentionScope) -> Model<f64> {
    let vocab = build_vocab(sentences, 1).unwrap();
    let cfg = ModelConfig {
        policy,
        attention_scope: scope,
        ..ModelConfig::tiny()
    };
    Model::new(cfg, vocab, seed, None).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_is_normalized_and_shift_invariant(xs in prop::collection::vec(-30.0f64..30.0, 1..12), c in -100.0f64..100.0) {
        let shift = |v: &[f64]| -> Vec<f64> {
            let mut g = Graph::<f64>::new();
            let x = g.constant(Tensor::vector(v.to_vec()));
            let s = g.softmax(x).unwrap();
            g.value(s).data().to_vec()
        };
        let p = shift(&xs);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        // Shifting by the max is exactly what the implementation does first.
        let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let centered: Vec<f64> = xs.iter().map(|x| x - m).collect();
        prop_assert_eq!(&p, &shift(&centered));
        let moved: Vec<f64> = xs.iter().map(|x| x + c).collect();
        for (a, b) in p.iter().zip(shift(&moved)) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn corpus_formats_round_trip(sentences in prop::collection::vec(arb_sentence(), 1..4)) {
        for format in [Format::Conll09, Format::Upb] {
            let once = format.parse(&format.write(&sentences)).unwrap();
            let twice = format.parse(&format.write(&once)).unwrap();
            prop_assert_eq!(&once, &twice);
            for (a, b) in once.iter().zip(&sentences) {
                prop_assert_eq!(&a.gold, &b.gold);
                prop_assert_eq!(a.predicate_indices(), b.predicate_indices());
                for t in &a.gold {
                    prop_assert!(t.p >= 1 && t.p <= a.len() && t.a >= 1 && t.a <= a.len());
                }
            }
        }
    }

    #[test]
    fn vocabulary_ignores_sentence_order(sentences in prop::collection::vec(arb_sentence(), 1..6), seed in any::<u64>()) {
        let mut shuffled = sentences.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.gen_range(0..=i));
        }
        prop_assert_eq!(build_vocab(&sentences, 1).unwrap(), build_vocab(&shuffled, 1).unwrap());
    }

    #[test]
    fn argument_scores_swap_precision_and_recall(
        pred in prop::collection::vec(arb_sentence(), 1..5),
        gold in prop::collection::vec(arb_sentence(), 1..5),
    ) {
        let k = pred.len().min(gold.len());
        let p: Vec<_> = pred[..k].iter().map(|s| s.gold.clone()).collect();
        let g: Vec<_> = gold[..k].iter().map(|s| s.gold.clone()).collect();
        let pg = score_arguments(&p, &g).unwrap();
        let gp = score_arguments(&g, &p).unwrap();
        prop_assert_eq!(pg.precision(), gp.recall());
        prop_assert_eq!(pg.recall(), gp.precision());
        prop_assert_eq!(pg.f1(), gp.f1());

        // Micro averaging: the corpus score is the score of the summed counts.
        let mut summed = Prf::default();
        for (a, b) in p.iter().zip(&g) {
            let one = score_arguments(std::slice::from_ref(a), std::slice::from_ref(b)).unwrap();
            summed.correct += one.correct;
            summed.predicted += one.predicted;
            summed.gold += one.gold;
        }
        prop_assert_eq!(summed, pg);
    }

    #[test]
    fn buckets_partition_distances(p in 1usize..200, a in 1usize..200) {
        let t = Triplet::new(p, a, "A0");
        let b = bucket(&t);
        prop_assert!(b < BUCKET_LABELS.len());
        let d = p.abs_diff(a);
        let expected = if d >= 7 { 6 } else { d.max(1) - 1 };
        prop_assert_eq!(b, expected);
    }

    #[test]
    fn decoding_never_emits_the_null_role(values in prop::collection::vec(-3.0f64..3.0, 12)) {
        let s = arb_sentence_fixed();
        let vocab = build_vocab(std::slice::from_ref(&s), 1).unwrap();
        let r = vocab.num_roles();
        let pairs = [(0, 1), (1, 0), (1, 1)];
        let data: Vec<f64> = values.iter().cycle().take(pairs.len() * r).cloned().collect();
        let scores = Tensor::new(&[pairs.len(), r], data).unwrap();
        for t in decode_scores(&pairs, &scores, &vocab) {
            prop_assert!(vocab.role_id(&t.role).is_some_and(|id| id != 0));
        }
    }
}

fn arb_sentence_fixed() -> Sentence {
    let mut s = Sentence::default();
    for (i, f) in ["a", "b"].iter().enumerate() {
        s.tokens.push(Token::new(i + 1, f, "NN"));
    }
    s.predicates.push(Predicate {
        index: 1,
        sense: "01".into(),
    });
    s.gold.insert(Triplet::new(1, 2, "A0"));
    s.gold.insert(Triplet::new(2, 1, "A1"));
    s
}

/// Checks both attention invariants on every token of every iteration.
fn attention_invariants(model: &Model<f64>, sentence: &Sentence, iterations: usize) -> Result<()> {
    let inst = model.instance(sentence)?;
    let mut g = Graph::with_params(&model.params);
    let out = model.forward::<ChaCha8Rng>(&mut g, &inst, iterations, false, None)?;
    for trace in &out.traces {
        let Some(reps) = trace.scores.reps else { continue };
        let v = g.value(reps);
        for att in &trace.tokens {
            let o = g.value(att.output).data();
            let Some(alpha) = att.alpha else {
                assert!(o.iter().all(|&x| x == 0.0));
                continue;
            };
            let a = g.value(alpha).data();
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            for (c, &oc) in o.iter().enumerate() {
                let col = att.pairs.iter().map(|&k| v.at(k, c));
                let lo = col.clone().fold(f64::INFINITY, f64::min);
                let hi = col.fold(f64::NEG_INFINITY, f64::max);
                assert!(lo - 1e-12 <= oc && oc <= hi + 1e-12, "channel {c}: {oc} outside [{lo}, {hi}]");
            }
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn attention_weights_are_convex(s in arb_sentence(), seed in any::<u64>(), token_scope in any::<bool>(), unordered in any::<bool>()) {
        let scope = if token_scope { AttentionScope::Token } else { AttentionScope::All };
        let policy = if unordered { PairPolicy::Unordered } else { PairPolicy::OrderedAll };
        let model = tiny_model(seed, std::slice::from_ref(&s), policy, scope);
        attention_invariants(&model, &s, 3).unwrap();
    }

    #[test]
    fn loss_is_finite_at_initialization(sentences in prop::collection::vec(arb_sentence(), 1..4), seed in any::<u64>()) {
        let model = tiny_model(seed, &sentences, PairPolicy::OrderedAll, AttentionScope::All);
        for s in &sentences {
            let l = loss_value(&model, s, LossOptions::new(2)).unwrap();
            prop_assert!(l.is_finite() && l >= 0.0);
        }
    }

    #[test]
    fn refinement_parameters_receive_gradient(s in arb_sentence(), seed in any::<u64>()) {
        // Without a gold role the only label is the null one and the loss is
        // constant.
        prop_assume!(s.len() >= 2 && !s.gold.is_empty());
        // With four zero-bias hidden units every ReLU of a short sentence can
        // be dead at once, which cuts all gradients; sixteen makes that
        // negligible.
        let cfg = ModelConfig {
            ffn_hidden: 16,
            role_dim: 16,
            refine_hidden: 16,
            ..ModelConfig::tiny()
        };
        let vocab = build_vocab(std::slice::from_ref(&s), 1).unwrap();
        let model = Model::<f64>::new(cfg, vocab, seed, None).unwrap();
        let inst = model.instance(&s).unwrap();
        let mut g = Graph::with_params(&model.params);
        let l = sentence_loss::<f64, ChaCha8Rng>(&mut g, &model, &s, &inst, LossOptions::new(2), None).unwrap();
        let grads = g.backward(l).unwrap();
        for id in [model.refiner.w3, model.refiner.w4] {
            let norm: f64 = grads.get(id, &model.params).data().iter().map(|x| x * x).sum();
            prop_assert!(norm > 0.0);
        }
    }

    #[test]
    fn encoding_is_deterministic(s in arb_sentence(), seed in any::<u64>()) {
        let model = tiny_model(seed, std::slice::from_ref(&s), PairPolicy::OrderedAll, AttentionScope::All);
        let inst = model.instance(&s).unwrap();
        let a = model.scores(&inst, 2).unwrap();
        let b = model.scores(&inst, 2).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn pair_enumeration_is_a_bijection(n in 0usize..12) {
        for policy in [PairPolicy::OrderedAll, PairPolicy::OrderedNoSelf, PairPolicy::Unordered] {
            let pairs = policy.enumerate(n);
            prop_assert_eq!(pairs.len(), policy.count(n));
            let unique: BTreeSet<_> = pairs.iter().collect();
            prop_assert_eq!(unique.len(), pairs.len());
            for &(p, a) in &pairs {
                prop_assert!(p < n && a < n && policy.admits(p, a));
            }
        }
    }
}



