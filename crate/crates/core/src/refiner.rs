//! Iterative refinement: every token attends over the pair representations,
//! and the attended summary is folded back into the token representation.

use rand::Rng;

use crate::config::{AttentionScope, ModelConfig};
use crate::error::Result;
use crate::nn::Ffn;
use crate::params::{ParamGroup, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::scorer::{PairScores, Scorer};
use crate::tensor::{Graph, Tensor, TensorError, Var};

#[derive(Clone, Debug)]
pub struct Refiner {
    /// `[2h × d_u]`
    pub w3: ParamId,
    /// `[d_s × d_u]`
    pub w4: ParamId,
    /// `[d_u × 1]`, reduces each attention vector to a scalar logit.
    pub w_u: ParamId,
    /// `(d_s + 2h) → 2h`
    pub ffn: Ffn,
    pub scope: AttentionScope,
    score_dim: usize,
}

/// What one token attended to in one iteration.
#[derive(Clone, Debug)]
pub struct Attention {
    /// Indices into the iteration's pair list.
    pub pairs: Vec<usize>,
    /// Weights over `pairs` (`[K']`); `None` when there was nothing to attend to.
    pub alpha: Option<Var>,
    /// `[1 × d_s]`
    pub output: Var,
}

#[derive(Clone, Debug)]
pub struct IterationTrace {
    /// `(V_p, V_a)` the pair scores were computed from.
    pub projections: (Var, Var),
    pub scores: PairScores,
    pub tokens: Vec<Attention>,
}

impl Refiner {
    pub fn register<T: Scalar, R: Rng>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut R) -> Self {
        let (d, ds, du) = (cfg.token_dim(), cfg.score_dim, cfg.attention_dim);
        let g = ParamGroup::Attention;
        Refiner {
            w3: store.add("attn.w3", g, Tensor::glorot(&[d, du], d, du, rng)),
            w4: store.add("attn.w4", g, Tensor::glorot(&[ds, du], ds, du, rng)),
            w_u: store.add("attn.w_u", g, Tensor::glorot(&[du, 1], du, 1, rng)),
            ffn: Ffn::register(store, "refine_ffn", g, (ds + d, cfg.refine_hidden, d), rng),
            scope: cfg.attention_scope,
            score_dim: ds,
        }
    }

    /// Attention of the `[1 × 2h]` row `h_t` over the listed rows of `reps`.
    /// `keys` is `reps·W4`, shared by all tokens of an iteration.
    pub fn attend<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        h_t: Var,
        reps: Option<Var>,
        keys: Option<Var>,
        pairs: Vec<usize>,
    ) -> Result<Attention, TensorError> {
        let (Some(reps), Some(keys)) = (reps, keys) else {
            let output = g.constant(Tensor::zeros(&[1, self.score_dim]));
            return Ok(Attention { pairs: Vec::new(), alpha: None, output });
        };
        if pairs.is_empty() {
            let output = g.constant(Tensor::zeros(&[1, self.score_dim]));
            return Ok(Attention { pairs, alpha: None, output });
        }
        let k = pairs.len();
        let all = k == g.shape(reps)[0];
        let (keys, values) = if all {
            (keys, reps)
        } else {
            (g.gather_rows(keys, &pairs)?, g.gather_rows(reps, &pairs)?)
        };
        let (w3, w_u) = (g.param(self.w3), g.param(self.w_u));
        let query = g.matmul(h_t, w3)?;
        let z = g.add_row(keys, query)?;
        let z = g.tanh(z);
        let u = g.matmul(z, w_u)?;
        let u = g.reshape(u, &[k])?;
        let alpha = g.softmax(u)?;
        let weights = g.reshape(alpha, &[1, k])?;
        let output = g.matmul(weights, values)?;
        Ok(Attention { pairs, alpha: Some(alpha), output })
    }

    /// `FFN([O ; H])` row-wise.
    pub fn refine_tokens<T: Scalar>(&self, g: &mut Graph<'_, T>, o: Var, h: Var) -> Result<Var, TensorError> {
        let x = g.concat(&[o, h], 1)?;
        self.ffn.apply(g, x)
    }

    /// One refinement step from `H^{i−1}` to `H^i`.
    pub fn step<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        scorer: &Scorer,
        h: Var,
    ) -> Result<(Var, IterationTrace)> {
        let (vp, va) = scorer.project(g, h)?;
        let scores = scorer.score_all_pairs(g, vp, va)?;
        let keys = match scores.reps {
            Some(reps) => {
                let w4 = g.param(self.w4);
                Some(g.matmul(reps, w4)?)
            }
            None => None,
        };
        let n = g.shape(h)[0];
        let mut tokens = Vec::with_capacity(n);
        for t in 0..n {
            let pairs = match self.scope {
                AttentionScope::All => (0..scores.len()).collect(),
                AttentionScope::Token => scores
                    .pairs
                    .iter()
                    .enumerate()
                    .filter(|(_, &(p, a))| p == t || a == t)
                    .map(|(k, _)| k)
                    .collect(),
            };
            let h_t = g.slice_rows(h, t, 1)?;
            tokens.push(self.attend(g, h_t, scores.reps, keys, pairs)?);
        }
        let rows: Vec<Var> = tokens.iter().map(|a| a.output).collect();
        let o = g.concat(&rows, 0)?;
        let refined = self.refine_tokens(g, o, h)?;
        Ok((
            refined,
            IterationTrace {
                projections: (vp, va),
                scores,
                tokens,
            },
        ))
    }

    /// Applies `iterations` refinement steps. Zero iterations return `h` itself.
    pub fn refine_iterate<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        scorer: &Scorer,
        h: Var,
        iterations: usize,
    ) -> Result<(Var, Vec<IterationTrace>)> {
        let mut current = h;
        let mut traces = Vec::with_capacity(iterations);
        for _ in 0..iterations {
            let (next, trace) = self.step(g, scorer, current)?;
            traces.push(trace);
            current = next;
        }
        Ok((current, traces))
    }
}
