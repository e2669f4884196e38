//! Negative log-likelihood training with Adam, mini-batches and early
//! stopping on dev argument F1.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{Config, ModelConfig, PairPolicy, TrainConfig};
use crate::corpus::{build_vocab, load_embeddings, Sentence, Token, Triplet, Vocab, Vocabulary, NULL_ROLE};
use crate::encoder::Instance;
use crate::error::{Error, Result};
use crate::eval::{predict_corpus, EvalReport, Prf};
use crate::model::Model;
use crate::params::{ParamGroup, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{grad_check, Fault, GradCheckReport, Gradients, Graph, Tensor, Var};

/// Role id per enumerated pair: the gold role, or null where the pair has no
/// triplet. Gold pairs the policy does not enumerate are an error.
pub fn gold_targets(
    sentence: &Sentence,
    pairs: &[(usize, usize)],
    policy: PairPolicy,
    vocab: &Vocabulary,
) -> Result<Vec<usize>> {
    let n = sentence.len();
    let uncovered: Vec<String> = sentence
        .gold
        .iter()
        .filter(|t| t.p == 0 || t.a == 0 || t.p > n || t.a > n || !policy.admits(t.p - 1, t.a - 1))
        .map(Triplet::to_string)
        .collect();
    if !uncovered.is_empty() {
        return Err(Error::PolicyMismatch {
            policy: policy.to_string(),
            triplets: uncovered.join(" "),
        });
    }
    let mut gold = BTreeMap::new();
    for t in &sentence.gold {
        let id = vocab
            .role_id(&t.role)
            .ok_or_else(|| Error::Contract(format!("triplet {t} has a role unseen in training")))?;
        gold.insert((t.p - 1, t.a - 1), id);
    }
    Ok(pairs
        .iter()
        .map(|pa| gold.get(pa).copied().unwrap_or(NULL_ROLE))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossOptions {
    pub iterations: usize,
    /// Weight of pairs whose target is the null role.
    pub null_weight: f64,
    /// Also score the representations entering every refinement step.
    pub intermediate: bool,
}

impl LossOptions {
    pub fn new(iterations: usize) -> Self {
        LossOptions {
            iterations,
            null_weight: 1.0,
            intermediate: false,
        }
    }

    fn from_config(model: &ModelConfig, train: &TrainConfig) -> Self {
        LossOptions {
            iterations: model.iterations,
            null_weight: train.null_weight,
            intermediate: train.aux_loss,
        }
    }
}

/// `−Σ_pairs log P(gold role | pair)` as a `[1]` node.
pub fn sentence_loss<T: Scalar, R: Rng>(
    g: &mut Graph<'_, T>,
    model: &Model<T>,
    sentence: &Sentence,
    inst: &Instance<T>,
    options: LossOptions,
    dropout: Option<&mut R>,
) -> Result<Var> {
    let out = model.forward(g, inst, options.iterations, options.intermediate, dropout)?;
    let targets = gold_targets(sentence, &out.pairs, model.config.policy, &model.vocab)?;
    let weights: Option<Vec<T>> = (options.null_weight != 1.0).then(|| {
        targets
            .iter()
            .map(|&t| if t == NULL_ROLE { T::of(options.null_weight) } else { T::one() })
            .collect()
    });
    let mut total = None;
    for logits in out.intermediate.iter().chain(std::iter::once(&out.logits)).flatten() {
        let term = g.cross_entropy(*logits, &targets, weights.as_deref())?;
        total = Some(match total {
            None => term,
            Some(acc) => g.add(acc, term)?,
        });
    }
    Ok(total.unwrap_or_else(|| g.constant(Tensor::scalar(T::zero()))))
}

/// Loss value of one sentence without building gradients.
pub fn loss_value<T: Scalar>(model: &Model<T>, sentence: &Sentence, options: LossOptions) -> Result<f64> {
    let inst = model.instance(sentence)?;
    let mut g = Graph::with_params(&model.params);
    let l = sentence_loss::<T, ChaCha8Rng>(&mut g, model, sentence, &inst, options, None)?;
    Ok(g.value(l).data()[0].as_f64())
}

/// Adam moments and step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<T>> = params.iter().map(|(_, p)| vec![T::zero(); p.value.len()]).collect();
        OptimizerState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// Dense gradients, one array per parameter.
pub type GradBuffer<T> = Vec<Vec<T>>;

pub fn zero_grads<T: Scalar>(params: &ParamStore<T>) -> GradBuffer<T> {
    params.iter().map(|(_, p)| vec![T::zero(); p.value.len()]).collect()
}

/// Clips `grads` to global norm `max_norm` (0 disables); returns the norm
/// before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut GradBuffer<T>, max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .map(|g| g.as_f64() * g.as_f64())
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = T::of(max_norm / norm);
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

/// One bias-corrected Adam update of every trainable parameter.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &GradBuffer<T>,
    state: &mut OptimizerState<T>,
    config: &TrainConfig,
) -> Result<()> {
    for (id, p) in params.iter() {
        if p.trainable && grads[id.index()].iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {}", p.name)));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(config.beta1), T::of(config.beta2));
    let c1 = T::one() - T::of(config.beta1.powi(t));
    let c2 = T::one() - T::of(config.beta2.powi(t));
    let (lr, eps) = (T::of(config.learning_rate), T::of(config.adam_eps));
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let param = params.get_mut(id);
        if !param.trainable {
            continue;
        }
        let i = id.index();
        let (m, v, g) = (&mut state.m[i], &mut state.v[i], &grads[i]);
        for (k, x) in param.value.data_mut().iter_mut().enumerate() {
            m[k] = b1 * m[k] + (T::one() - b1) * g[k];
            v[k] = b2 * v[k] + (T::one() - b2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            *x -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Tracks dev F1 across epochs; stops after `patience` epochs without a
/// strict improvement.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best_epoch: usize,
    pub best_f1: f64,
    since_best: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Progress {
    Improved,
    Waiting,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best_epoch: 0,
            best_f1: f64::NEG_INFINITY,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, f1: f64) -> Progress {
        let f1 = if f1.is_nan() {
            log::warn!("epoch {epoch}: dev F1 undefined, counted as 0");
            0.0
        } else {
            f1
        };
        if f1 > self.best_f1 {
            self.best_f1 = f1;
            self.best_epoch = epoch;
            self.since_best = 0;
            Progress::Improved
        } else {
            self.since_best += 1;
            if self.since_best >= self.patience {
                Progress::Stop
            } else {
                Progress::Waiting
            }
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch loss over the epoch.
    pub loss: f64,
    pub dev: Prf,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} loss={:.6} dev_p={:.6} dev_r={:.6} dev_f1={:.6}",
            self.epoch,
            self.loss,
            self.dev.precision(),
            self.dev.recall(),
            self.dev.f1()
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T: Scalar> {
    /// Parameters from the best dev epoch.
    pub model: Model<T>,
    pub initial_loss: f64,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_f1: f64,
}

/// Vocabulary from `train`, word table from `embeddings` when given, fresh
/// parameters from the configured seed.
pub fn init_model<T: Scalar>(train: &[Sentence], config: &Config, embeddings: Option<&Path>) -> Result<Model<T>> {
    config.validate()?;
    let vocab = build_vocab(train, config.train.min_freq)?;
    let words = match embeddings {
        Some(path) => Some(load_embeddings(path, &vocab, config.model.word_dim, config.train.seed)?),
        None => None,
    };
    Model::new(config.model.clone(), vocab, config.train.seed, words)
}

/// Forward/backward of a batch, summed in batch order and divided by its size.
fn batch_gradients<T: Scalar>(
    model: &Model<T>,
    batch: &[(&Sentence, Instance<T>, u64)],
    options: LossOptions,
) -> Result<(f64, GradBuffer<T>)> {
    let results: Vec<Result<(f64, Gradients<T>)>> = batch
        .par_iter()
        .map(|(sentence, inst, stream)| {
            let mut g = Graph::with_params(&model.params);
            let mut rng = ChaCha8Rng::seed_from_u64(*stream);
            let dropout = (model.config.dropout > 0.0).then_some(&mut rng);
            let l = sentence_loss(&mut g, model, sentence, inst, options, dropout)?;
            let value = g.value(l).data()[0].as_f64();
            Ok((value, g.backward(l)?))
        })
        .collect();
    let scale = T::of(1.0 / batch.len() as f64);
    let mut grads = zero_grads(&model.params);
    let mut loss = 0.0;
    for r in results {
        let (value, g) = r?;
        loss += value;
        for id in model.params.ids() {
            g.add_scaled_into(id, &mut grads[id.index()], scale);
        }
    }
    for (id, p) in model.params.iter() {
        if p.pad_row {
            let c = p.value.cols();
            grads[id.index()][..c].fill(T::zero());
        }
    }
    Ok((loss / batch.len() as f64, grads))
}

/// Trains `model` in place of a copy; `on_epoch` sees every log record as it
/// is produced.
pub fn train<T: Scalar>(
    mut model: Model<T>,
    train: &[Sentence],
    dev: &[Sentence],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Contract("training and dev corpora must be non-empty".into()));
    }
    let options = LossOptions::from_config(&model.config, config);
    let instances: Vec<Instance<T>> = train.iter().map(|s| model.instance(s)).collect::<Result<_>>()?;
    for s in train {
        let pairs = model.config.policy.enumerate(s.len());
        gold_targets(s, &pairs, model.config.policy, &model.vocab)?;
    }

    let initial: Vec<f64> = train
        .par_iter()
        .map(|s| loss_value(&model, s, options))
        .collect::<Result<_>>()?;
    let initial_loss = initial.iter().sum::<f64>() / train.len() as f64;
    if !initial_loss.is_finite() {
        return Err(Error::NonFinite("initial loss".into()));
    }
    log::info!("initial loss {initial_loss:.6}");

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = OptimizerState::new(&model.params);
    let mut stopping = EarlyStopping::new(config.patience);
    let mut best = model.params.clone();
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut batch_losses = Vec::new();
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<_> = chunk
                .iter()
                .map(|&i| (&train[i], instances[i].clone(), rng.gen::<u64>()))
                .collect();
            let (loss, mut grads) = batch_gradients(&model, &batch, options)?;
            clip_global_norm(&mut grads, config.clip_norm);
            adam_step(&mut model.params, &grads, &mut state, config)?;
            batch_losses.push(loss);
        }
        let loss = batch_losses.iter().sum::<f64>() / batch_losses.len() as f64;
        let pred = predict_corpus(&model, dev, model.config.iterations)?;
        let report = EvalReport::compute(&pred, dev)?;
        let record = EpochRecord {
            epoch,
            loss,
            dev: report.arguments,
        };
        log::info!("{record}");
        on_epoch(&record);
        log.push(record);
        match stopping.observe(epoch, report.arguments.f1()) {
            Progress::Improved => best = model.params.clone(),
            Progress::Waiting => {}
            Progress::Stop => break,
        }
    }
    model.params = best;
    Ok(TrainOutcome {
        model,
        initial_loss,
        log,
        best_epoch: stopping.best_epoch,
        best_f1: stopping.best_f1.max(0.0),
    })
}

/// Shape of the random instance used by [`loss_grad_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckSpec {
    pub tokens: usize,
    /// Role inventory size, null role included.
    pub roles: usize,
    pub iterations: usize,
    pub seed: u64,
    pub fault: Option<Fault>,
    pub model: ModelConfig,
}

impl Default for GradCheckSpec {
    fn default() -> Self {
        GradCheckSpec {
            tokens: 3,
            roles: 4,
            iterations: 2,
            seed: 1,
            fault: None,
            model: ModelConfig::gradcheck(),
        }
    }
}

const KINK_MARGIN: f64 = 1e-2;
const MAX_DRAWS: usize = 1000;

/// A random sentence and a tiny fp64 model whose role inventory has exactly
/// `spec.roles` entries.
pub fn random_instance(spec: &GradCheckSpec) -> Result<(Model<f64>, Sentence)> {
    if spec.tokens == 0 || spec.roles < 2 {
        return Err(Error::Contract("need at least one token and two roles".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut sentence = Sentence::default();
    for i in 0..spec.tokens {
        let len = rng.gen_range(1..=6);
        let form: String = (0..len).map(|_| char::from(b'a' + rng.gen_range(0..5u8))).collect();
        let pos = ["NN", "VV", "AD"][rng.gen_range(0..3)];
        sentence.tokens.push(Token::new(i + 1, &form, pos));
    }
    let roles: Vec<String> = (1..spec.roles).map(|r| format!("R{r}")).collect();
    for p in 0..spec.tokens {
        for a in 0..spec.tokens {
            if spec.model.policy.admits(p, a) && rng.gen_bool(0.4) {
                let role = roles[rng.gen_range(0..roles.len())].clone();
                sentence.gold.insert(Triplet::new(p + 1, a + 1, role));
            }
        }
    }
    let mut vocab = build_vocab(std::slice::from_ref(&sentence), 1)?;
    let mut items = vec![crate::corpus::NULL_ROLE_LABEL.to_string()];
    items.extend(roles);
    vocab.roles = Vocab::from_items(items)?;
    let base = Model::<f64>::new(spec.model.clone(), vocab, spec.seed, None)?;
    let inst = base.instance(&sentence)?;
    // Central differences at eps 1e-5 only resolve small gradients when the
    // loss is smooth within the step and small enough that rounding noise
    // stays near 1e-13. Parameters are therefore redrawn until no ReLU input
    // or max-pool gap sits within KINK_MARGIN and the loss is at most twice
    // its value under uniform role scores.
    let pairs = spec.model.policy.count(spec.tokens) as f64;
    let loss_cap = 2.0 * pairs * (spec.roles as f64).ln();
    for _ in 0..MAX_DRAWS {
        let mut model = base.clone();
        for id in model.params.ids().collect::<Vec<_>>() {
            let param = model.params.get(id);
            let shape = param.value.shape().to_vec();
            let value = if shape.len() == 1 {
                let mut t = Tensor::<f64>::uniform(&shape, 0.1, &mut rng);
                t.data_mut().iter_mut().for_each(|x| *x += 0.1);
                t
            } else if param.group == ParamGroup::Embeddings {
                Tensor::uniform(&shape, 0.5, &mut rng)
            } else {
                let gain = if param.name.starts_with("role.") { 1.0 } else { 1.5 };
                let bound = gain * (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                Tensor::uniform(&shape, bound, &mut rng)
            };
            *model.params.value_mut(id) = value;
        }
        let mut g = Graph::with_params(&model.params);
        let options = LossOptions::new(spec.iterations);
        let l = sentence_loss::<f64, ChaCha8Rng>(&mut g, &model, &sentence, &inst, options, None)?;
        if g.kink_margin() >= KINK_MARGIN && g.value(l).data()[0] <= loss_cap {
            return Ok((model, sentence));
        }
    }
    Err(Error::Contract("no smooth instance found".into()))
}

/// Finite-difference check of `sentence_loss` over every parameter entry.
pub fn loss_grad_check(spec: &GradCheckSpec, eps: f64) -> Result<GradCheckReport> {
    let (model, sentence) = random_instance(spec)?;
    let inst = model.instance(&sentence)?;
    let options = LossOptions::new(spec.iterations);
    grad_check(
        &model.params,
        |params, want| {
            // The graph reads parameter values from `params`, so the
            // model's own store only supplies the ids.
            let mut g = Graph::with_params(params);
            g.inject_fault(spec.fault);
            let l = sentence_loss::<f64, ChaCha8Rng>(&mut g, &model, &sentence, &inst, options, None)?;
            let v = g.value(l).data()[0];
            Ok((v, want.then(|| g.backward(l)).transpose()?))
        },
        eps,
        None,
    )
}
