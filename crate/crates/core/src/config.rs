//! Line-oriented `key = value` configuration.
//!
//! Every key has a typed default; [`Config::to_text`] prints the full set and
//! [`Config::parse`] accepts any subset of it. `#` starts a comment.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::{Error, Result};

/// Which predicate–argument pairs are scored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairPolicy {
    /// Every ordered `(p, a)`, self-pairs included: `K = n²`.
    OrderedAll,
    /// Ordered pairs with `p ≠ a`: `K = n² − n`.
    OrderedNoSelf,
    /// One pair per `{i, j}`, `i < j`, read as `(p = i, a = j)`: `K = n(n−1)/2`.
    Unordered,
}

impl PairPolicy {
    pub fn count(self, n: usize) -> usize {
        match self {
            PairPolicy::OrderedAll => n * n,
            PairPolicy::OrderedNoSelf => n * n - n,
            PairPolicy::Unordered => n * n.saturating_sub(1) / 2,
        }
    }

    /// Admitted pairs, 0-based, row-major in `(p, a)`.
    pub fn enumerate(self, n: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.count(n));
        for p in 0..n {
            for a in 0..n {
                if self.admits(p, a) {
                    out.push((p, a));
                }
            }
        }
        out
    }

    pub fn admits(self, p: usize, a: usize) -> bool {
        match self {
            PairPolicy::OrderedAll => true,
            PairPolicy::OrderedNoSelf => p != a,
            PairPolicy::Unordered => p < a,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PairPolicy::OrderedAll => "ordered-all",
            PairPolicy::OrderedNoSelf => "ordered-no-self",
            PairPolicy::Unordered => "unordered",
        }
    }
}

impl FromStr for PairPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ordered-all" => Ok(PairPolicy::OrderedAll),
            "ordered-no-self" => Ok(PairPolicy::OrderedNoSelf),
            "unordered" => Ok(PairPolicy::Unordered),
            _ => Err(format!("unknown pair policy {s:?}")),
        }
    }
}

impl fmt::Display for PairPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which pairs a token attends over during refinement.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionScope {
    /// Every scored pair.
    All,
    /// Only pairs in which the token is predicate or argument.
    Token,
}

impl FromStr for AttentionScope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "all" => Ok(AttentionScope::All),
            "token" => Ok(AttentionScope::Token),
            _ => Err(format!("unknown attention scope {s:?}")),
        }
    }
}

impl fmt::Display for AttentionScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionScope::All => "all",
            AttentionScope::Token => "token",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    Fp32,
    Fp64,
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fp32" => Ok(Precision::Fp32),
            "fp64" => Ok(Precision::Fp64),
            _ => Err(format!("unknown precision {s:?}")),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::Fp32 => "fp32",
            Precision::Fp64 => "fp64",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub word_dim: usize,
    pub pos_dim: usize,
    pub char_dim: usize,
    /// Filters per kernel width.
    pub filters: usize,
    pub kernels: Vec<usize>,
    /// BiLSTM hidden size per direction.
    pub hidden: usize,
    pub layers: usize,
    pub ffn_hidden: usize,
    /// Predicate/argument representation size.
    pub role_dim: usize,
    /// Pair-score representation size.
    pub score_dim: usize,
    /// Attention projection size.
    pub attention_dim: usize,
    pub refine_hidden: usize,
    /// Refinement iterations.
    pub iterations: usize,
    pub policy: PairPolicy,
    pub attention_scope: AttentionScope,
    /// Dropout on BiLSTM inputs during training.
    pub dropout: f64,
    pub freeze_words: bool,
    /// Width of externally supplied per-token features; 0 disables the hook.
    pub external_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            word_dim: 300,
            pos_dim: 50,
            char_dim: 30,
            filters: 32,
            kernels: vec![3, 4, 5],
            hidden: 350,
            layers: 3,
            ffn_hidden: 300,
            role_dim: 300,
            score_dim: 150,
            attention_dim: 150,
            refine_hidden: 700,
            iterations: 2,
            policy: PairPolicy::OrderedAll,
            attention_scope: AttentionScope::All,
            dropout: 0.0,
            freeze_words: false,
            external_dim: 0,
        }
    }
}

impl ModelConfig {
    pub fn char_out_dim(&self) -> usize {
        self.filters * self.kernels.len()
    }

    pub fn input_dim(&self) -> usize {
        self.word_dim + self.pos_dim + self.char_out_dim() + self.external_dim
    }

    pub fn token_dim(&self) -> usize {
        2 * self.hidden
    }

    /// A few units per layer; used by tests.
    pub fn tiny() -> Self {
        ModelConfig {
            word_dim: 4,
            pos_dim: 2,
            char_dim: 3,
            filters: 2,
            kernels: vec![3, 4, 5],
            hidden: 3,
            layers: 3,
            ffn_hidden: 4,
            role_dim: 4,
            score_dim: 3,
            attention_dim: 3,
            refine_hidden: 4,
            iterations: 2,
            ..ModelConfig::default()
        }
    }

    /// The loss gradient check model. A single BiLSTM layer keeps the fp64
    /// loss well conditioned; deeper stacks are checked on their own.
    pub fn gradcheck() -> Self {
        ModelConfig {
            hidden: 4,
            layers: 1,
            ffn_hidden: 6,
            role_dim: 6,
            refine_hidden: 6,
            ..ModelConfig::tiny()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a dev argument-F1 improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    /// Loss weight of pairs whose gold role is null.
    pub null_weight: f64,
    /// Add the loss of every intermediate refinement iteration.
    pub aux_loss: bool,
    pub min_freq: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            batch_size: 32,
            max_epochs: 1000,
            patience: 10,
            seed: 1,
            clip_norm: 5.0,
            null_weight: 1.0,
            aux_loss: false,
            min_freq: 2,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            precision: Precision::Fp32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn kernels_text(k: &[usize]) -> String {
    k.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl Config {
    /// All keys in a stable order with their current values.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        let t = &self.train;
        vec![
            ("word_dim", m.word_dim.to_string()),
            ("pos_dim", m.pos_dim.to_string()),
            ("char_dim", m.char_dim.to_string()),
            ("filters", m.filters.to_string()),
            ("kernels", kernels_text(&m.kernels)),
            ("hidden", m.hidden.to_string()),
            ("layers", m.layers.to_string()),
            ("ffn_hidden", m.ffn_hidden.to_string()),
            ("role_dim", m.role_dim.to_string()),
            ("score_dim", m.score_dim.to_string()),
            ("attention_dim", m.attention_dim.to_string()),
            ("refine_hidden", m.refine_hidden.to_string()),
            ("iterations", m.iterations.to_string()),
            ("policy", m.policy.to_string()),
            ("attention_scope", m.attention_scope.to_string()),
            ("dropout", m.dropout.to_string()),
            ("freeze_words", m.freeze_words.to_string()),
            ("external_dim", m.external_dim.to_string()),
            ("learning_rate", t.learning_rate.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("max_epochs", t.max_epochs.to_string()),
            ("patience", t.patience.to_string()),
            ("seed", t.seed.to_string()),
            ("clip_norm", t.clip_norm.to_string()),
            ("null_weight", t.null_weight.to_string()),
            ("aux_loss", t.aux_loss.to_string()),
            ("min_freq", t.min_freq.to_string()),
            ("beta1", t.beta1.to_string()),
            ("beta2", t.beta2.to_string()),
            ("adam_eps", t.adam_eps.to_string()),
            ("precision", t.precision.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Parses `text` over the defaults. Every unknown key, unparsable value
    /// and failed constraint is collected into one [`Error::Config`].
    pub fn parse(text: &str) -> Result<Config> {
        let mut cfg = Config::default();
        let mut bad = Vec::new();
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bad.push(line.to_string());
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            if cfg.set(key, value).is_err() {
                bad.push(key.to_string());
            }
        }
        bad.extend(cfg.invalid_keys());
        if bad.is_empty() {
            Ok(cfg)
        } else {
            bad.dedup();
            Err(Error::Config { keys: bad })
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn p<V: FromStr>(v: &str) -> Result<V, String> {
            v.parse().map_err(|_| format!("cannot parse {v:?}"))
        }
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "word_dim" => m.word_dim = p(value)?,
            "pos_dim" => m.pos_dim = p(value)?,
            "char_dim" => m.char_dim = p(value)?,
            "filters" => m.filters = p(value)?,
            "kernels" => {
                m.kernels = value
                    .split(',')
                    .map(|k| p(k.trim()))
                    .collect::<Result<_, _>>()?
            }
            "hidden" => m.hidden = p(value)?,
            "layers" => m.layers = p(value)?,
            "ffn_hidden" => m.ffn_hidden = p(value)?,
            "role_dim" => m.role_dim = p(value)?,
            "score_dim" => m.score_dim = p(value)?,
            "attention_dim" => m.attention_dim = p(value)?,
            "refine_hidden" => m.refine_hidden = p(value)?,
            "iterations" => m.iterations = p(value)?,
            "policy" => m.policy = value.parse()?,
            "attention_scope" => m.attention_scope = value.parse()?,
            "dropout" => m.dropout = p(value)?,
            "freeze_words" => m.freeze_words = p(value)?,
            "external_dim" => m.external_dim = p(value)?,
            "learning_rate" => t.learning_rate = p(value)?,
            "batch_size" => t.batch_size = p(value)?,
            "max_epochs" => t.max_epochs = p(value)?,
            "patience" => t.patience = p(value)?,
            "seed" => t.seed = p(value)?,
            "clip_norm" => t.clip_norm = p(value)?,
            "null_weight" => t.null_weight = p(value)?,
            "aux_loss" => t.aux_loss = p(value)?,
            "min_freq" => t.min_freq = p(value)?,
            "beta1" => t.beta1 = p(value)?,
            "beta2" => t.beta2 = p(value)?,
            "adam_eps" => t.adam_eps = p(value)?,
            "precision" => t.precision = value.parse()?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Keys whose values violate a constraint.
    pub fn invalid_keys(&self) -> Vec<String> {
        let m = &self.model;
        let t = &self.train;
        let checks: [(&str, bool); 23] = [
            ("word_dim", m.word_dim >= 1),
            ("pos_dim", m.pos_dim >= 1),
            ("char_dim", m.char_dim >= 1),
            ("filters", m.filters >= 1),
            ("kernels", !m.kernels.is_empty() && m.kernels.iter().all(|&k| k >= 1)),
            ("hidden", m.hidden >= 1),
            ("layers", m.layers >= 1),
            ("ffn_hidden", m.ffn_hidden >= 1),
            ("role_dim", m.role_dim >= 1),
            ("score_dim", m.score_dim >= 1),
            ("attention_dim", m.attention_dim >= 1),
            ("refine_hidden", m.refine_hidden >= 1),
            ("dropout", (0.0..1.0).contains(&m.dropout)),
            ("learning_rate", t.learning_rate > 0.0 && t.learning_rate.is_finite()),
            ("batch_size", t.batch_size >= 1),
            ("max_epochs", t.max_epochs >= 1),
            ("patience", t.patience >= 1),
            ("clip_norm", t.clip_norm >= 0.0),
            ("null_weight", t.null_weight > 0.0),
            ("min_freq", t.min_freq >= 1),
            ("beta1", (0.0..1.0).contains(&t.beta1)),
            ("beta2", (0.0..1.0).contains(&t.beta2)),
            ("adam_eps", t.adam_eps > 0.0),
        ];
        checks
            .iter()
            .filter(|(_, ok)| !ok)
            .map(|(k, _)| k.to_string())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let keys = self.invalid_keys();
        if keys.is_empty() {
            Ok(())
        } else {
            Err(Error::Config { keys })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = Config::default();
        assert_eq!(Config::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(cfg.model.hidden, 350);
        assert_eq!(cfg.model.layers, 3);
        assert_eq!(cfg.model.kernels, vec![3, 4, 5]);
        assert_eq!(cfg.train.learning_rate, 1e-5);
    }

    #[test]
    fn partial_file_with_comments() {
        let cfg = Config::parse("# desk run\nhidden = 16  # small\npolicy = unordered\nkernels = 2, 3\n").unwrap();
        assert_eq!(cfg.model.hidden, 16);
        assert_eq!(cfg.model.policy, PairPolicy::Unordered);
        assert_eq!(cfg.model.kernels, vec![2, 3]);
    }

    #[test]
    fn offending_keys_are_all_listed() {
        match Config::parse("hidden = lots\nbogus = 1\nlearning_rate = -1\npatience = 0\n") {
            Err(Error::Config { keys }) => {
                assert_eq!(keys, vec!["hidden", "bogus", "learning_rate", "patience"]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pair_counts() {
        assert_eq!(PairPolicy::Unordered.count(5), 10);
        assert_eq!(PairPolicy::OrderedAll.count(5), 25);
        assert_eq!(PairPolicy::OrderedNoSelf.count(5), 20);
        assert_eq!(PairPolicy::OrderedNoSelf.count(1), 0);
        for policy in [PairPolicy::OrderedAll, PairPolicy::OrderedNoSelf, PairPolicy::Unordered] {
            for n in 0..7 {
                let pairs = policy.enumerate(n);
                assert_eq!(pairs.len(), policy.count(n));
                let mut sorted = pairs.clone();
                sorted.sort();
                sorted.dedup();
                assert_eq!(sorted, pairs, "row-major and unique");
            }
        }
    }
}
