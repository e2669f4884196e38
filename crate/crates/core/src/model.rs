//! The full labeler: encoder, pair scorer and refiner over one parameter
//! store.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::corpus::{Sentence, Vocabulary};
use crate::encoder::{Encoder, Instance};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::refiner::{IterationTrace, Refiner};
use crate::scalar::Scalar;
use crate::scorer::Scorer;
use crate::tensor::{Graph, Tensor, Var};

/// Source of extra per-token features appended to the encoder input, for
/// pretrained contextual encoders run outside this crate.
pub trait ContextualEmbedder<T>: Send + Sync {
    fn dim(&self) -> usize;
    /// `[n × dim]` for a sentence of `n` tokens.
    fn embed(&self, sentence: &Sentence) -> Result<Tensor<T>>;
}

#[derive(Clone)]
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore<T>,
    pub encoder: Encoder,
    pub scorer: Scorer,
    pub refiner: Refiner,
    external: Option<Arc<dyn ContextualEmbedder<T>>>,
}

impl<T: Scalar> fmt::Debug for Model<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Model")
            .field("config", &self.config)
            .field("params", &self.params.len())
            .field("scalars", &self.params.num_scalars())
            .finish()
    }
}

/// Output of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    /// 0-based `(p, a)` in policy order.
    pub pairs: Vec<(usize, usize)>,
    /// `[K × |R|]` final role scores; `None` when `K = 0`.
    pub logits: Option<Var>,
    /// Role scores before each refinement step (only when requested).
    pub intermediate: Vec<Option<Var>>,
    pub traces: Vec<IterationTrace>,
}

impl<T: Scalar> Model<T> {
    /// Fresh parameters drawn from `seed`. `words` replaces the word
    /// embedding table when given.
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64, words: Option<Tensor<T>>) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::register(&mut params, &config, &vocab, &mut rng);
        let scorer = Scorer::register(&mut params, &config, vocab.num_roles(), &mut rng);
        let refiner = Refiner::register(&mut params, &config, &mut rng);
        if let Some(table) = words {
            let slot = params.value_mut(encoder.word_emb);
            if table.shape() != slot.shape() {
                return Err(Error::Contract(format!(
                    "word table {:?}, expected {:?}",
                    table.shape(),
                    slot.shape()
                )));
            }
            *slot = table;
        }
        Ok(Model {
            config,
            vocab,
            params,
            encoder,
            scorer,
            refiner,
            external: None,
        })
    }

    pub fn set_external(&mut self, embedder: Arc<dyn ContextualEmbedder<T>>) -> Result<()> {
        if embedder.dim() != self.config.external_dim {
            return Err(Error::Contract(format!(
                "external features of width {}, model expects {}",
                embedder.dim(),
                self.config.external_dim
            )));
        }
        self.external = Some(embedder);
        Ok(())
    }

    /// Same architecture and values in another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            params: self.params.cast(),
            encoder: self.encoder.clone(),
            scorer: self.scorer.clone(),
            refiner: self.refiner.clone(),
            external: None,
        }
    }

    pub fn instance(&self, sentence: &Sentence) -> Result<Instance<T>> {
        if sentence.is_empty() {
            return Err(Error::Contract("empty sentence".into()));
        }
        let mut inst = Instance::from_sentence(sentence, &self.vocab);
        if let Some(ext) = &self.external {
            let features = ext.embed(sentence)?;
            if features.shape() != [sentence.len(), ext.dim()] {
                return Err(Error::Contract(format!("external features {:?}", features.shape())));
            }
            inst.external = Some(features);
        } else if self.config.external_dim > 0 {
            return Err(Error::Contract("model expects external features but none are attached".into()));
        }
        Ok(inst)
    }

    /// Encoder, `iterations` refinement steps, then role scoring.
    pub fn forward<R: Rng>(
        &self,
        g: &mut Graph<'_, T>,
        inst: &Instance<T>,
        iterations: usize,
        intermediate: bool,
        dropout: Option<&mut R>,
    ) -> Result<Forward> {
        let h = self.encoder.encode(g, inst, dropout)?;
        let (h, traces) = self.refiner.refine_iterate(g, &self.scorer, h, iterations)?;
        let mut inter = Vec::new();
        if intermediate {
            for t in &traces {
                let (vp, va) = t.projections;
                inter.push(self.scorer.role_scores(g, vp, va, &t.scores)?);
            }
        }
        let (vp, va) = self.scorer.project(g, h)?;
        let scores = self.scorer.score_all_pairs(g, vp, va)?;
        let logits = self.scorer.role_scores(g, vp, va, &scores)?;
        Ok(Forward {
            pairs: scores.pairs,
            logits,
            intermediate: inter,
            traces,
        })
    }

    /// Role scores as a `[K × |R|]` tensor (`[0 × |R|]` without pairs).
    pub fn scores(&self, inst: &Instance<T>, iterations: usize) -> Result<(Vec<(usize, usize)>, Tensor<T>)> {
        let mut g = Graph::with_params(&self.params);
        let out = self.forward::<ChaCha8Rng>(&mut g, inst, iterations, false, None)?;
        Ok((out.pairs, self.materialize(&g, out.logits)))
    }

    /// Role scores from the first-order path alone; the refiner is never
    /// touched.
    pub fn baseline_scores(&self, inst: &Instance<T>) -> Result<(Vec<(usize, usize)>, Tensor<T>)> {
        let mut g = Graph::with_params(&self.params);
        let h = self.encoder.encode::<T, ChaCha8Rng>(&mut g, inst, None)?;
        let (vp, va) = self.scorer.project(&mut g, h)?;
        let scores = self.scorer.score_all_pairs(&mut g, vp, va)?;
        let logits = self.scorer.role_scores(&mut g, vp, va, &scores)?;
        Ok((scores.pairs, self.materialize(&g, logits)))
    }

    fn materialize(&self, g: &Graph<'_, T>, logits: Option<Var>) -> Tensor<T> {
        match logits {
            Some(v) => g.value(v).clone(),
            None => Tensor::zeros(&[0, self.vocab.num_roles()]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, Token, Triplet};

    fn sentence(n: usize) -> Sentence {
        let mut s = Sentence::default();
        for i in 0..n {
            s.tokens.push(Token::new(i + 1, &format!("w{}", i % 3), "NN"));
        }
        s.gold.insert(Triplet::new(1, 2.min(n), "A0"));
        s
    }

    struct Ones;

    impl ContextualEmbedder<f64> for Ones {
        fn dim(&self) -> usize {
            2
        }
        fn embed(&self, s: &Sentence) -> Result<Tensor<f64>> {
            Ok(Tensor::full(&[s.len(), 2], 1.0))
        }
    }

    #[test]
    fn zero_iterations_equal_baseline() {
        let vocab = build_vocab(&[sentence(4)], 1).unwrap();
        let model = Model::<f64>::new(ModelConfig::tiny(), vocab, 3, None).unwrap();
        let inst = model.instance(&sentence(4)).unwrap();
        assert_eq!(model.scores(&inst, 0).unwrap(), model.baseline_scores(&inst).unwrap());
        let (pairs, refined) = model.scores(&inst, 2).unwrap();
        assert_eq!(pairs.len(), 16);
        assert_eq!(refined.shape(), &[16, 2]);
    }

    #[test]
    fn external_features_widen_the_input() {
        let vocab = build_vocab(&[sentence(3)], 1).unwrap();
        let cfg = ModelConfig {
            external_dim: 2,
            ..ModelConfig::tiny()
        };
        let mut model = Model::<f64>::new(cfg, vocab, 3, None).unwrap();
        assert!(model.instance(&sentence(3)).is_err());
        model.set_external(Arc::new(Ones)).unwrap();
        let inst = model.instance(&sentence(3)).unwrap();
        assert!(model.scores(&inst, 1).unwrap().1.all_finite());
    }

    #[test]
    fn cast_keeps_values() {
        let vocab = build_vocab(&[sentence(3)], 1).unwrap();
        let model = Model::<f32>::new(ModelConfig::tiny(), vocab, 5, None).unwrap();
        let wide: Model<f64> = model.cast();
        let inst32 = model.instance(&sentence(3)).unwrap();
        let inst64 = wide.instance(&sentence(3)).unwrap();
        let a = model.scores(&inst32, 1).unwrap().1;
        let b = wide.scores(&inst64, 1).unwrap().1;
        for (x, y) in a.to_f64().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-4);
        }
    }
}
