//! Predicate/argument projections, biaffine pair representations and
//! per-role unary scores.

use rand::Rng;

use crate::config::{ModelConfig, PairPolicy};
use crate::error::{Error, Result};
use crate::nn::Ffn;
use crate::params::{ParamGroup, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{softmax_slice, Graph, Tensor, TensorError, Var};

/// Pair representations of one sentence, 0-based `(p, a)` in policy order.
#[derive(Clone, Debug)]
pub struct PairScores {
    pub pairs: Vec<(usize, usize)>,
    /// `[K × score_dim]`; `None` when the policy admits no pair.
    pub reps: Option<Var>,
}

impl PairScores {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct Scorer {
    pub predicate_ffn: Ffn,
    pub argument_ffn: Ffn,
    /// `[d_r × d_s·d_r]`: entry `(i, c·d_r + j)` is the bilinear weight of
    /// channel `c` between predicate unit `i` and argument unit `j`.
    pub w1: ParamId,
    /// `[2·d_r × d_s]`, predicate rows first.
    pub w2: ParamId,
    pub b: ParamId,
    pub w_pred: ParamId,
    pub w_arg: ParamId,
    pub w_pair: ParamId,
    role_dim: usize,
    score_dim: usize,
    pub policy: PairPolicy,
}

impl Scorer {
    pub fn register<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        cfg: &ModelConfig,
        num_roles: usize,
        rng: &mut R,
    ) -> Self {
        let (d, dr, ds) = (cfg.token_dim(), cfg.role_dim, cfg.score_dim);
        let predicate_ffn = Ffn::register(store, "pred_ffn", ParamGroup::Ffn, (d, cfg.ffn_hidden, dr), rng);
        let argument_ffn = Ffn::register(store, "arg_ffn", ParamGroup::Ffn, (d, cfg.ffn_hidden, dr), rng);
        let mut glorot = |store: &mut ParamStore<T>, name: &str, group, shape: [usize; 2], fans: (usize, usize)| {
            store.add(name, group, Tensor::glorot(&shape, fans.0, fans.1, rng))
        };
        let w1 = glorot(store, "biaffine.w1", ParamGroup::Biaffine, [dr, ds * dr], (dr * dr, ds));
        let w2 = glorot(store, "biaffine.w2", ParamGroup::Biaffine, [2 * dr, ds], (2 * dr, ds));
        let b = store.add("biaffine.b", ParamGroup::Biaffine, Tensor::zeros(&[ds]));
        let w_pred = glorot(store, "role.w_pred", ParamGroup::Role, [dr, num_roles], (dr, num_roles));
        let w_arg = glorot(store, "role.w_arg", ParamGroup::Role, [dr, num_roles], (dr, num_roles));
        let w_pair = glorot(store, "role.w_pair", ParamGroup::Role, [ds, num_roles], (ds, num_roles));
        Scorer {
            predicate_ffn,
            argument_ffn,
            w1,
            w2,
            b,
            w_pred,
            w_arg,
            w_pair,
            role_dim: dr,
            score_dim: ds,
            policy: cfg.policy,
        }
    }

    pub fn score_dim(&self) -> usize {
        self.score_dim
    }

    /// `(V_p, V_a)`, each `[n × d_r]`.
    pub fn project<T: Scalar>(&self, g: &mut Graph<'_, T>, h: Var) -> Result<(Var, Var), TensorError> {
        let vp = self.predicate_ffn.apply(g, h)?;
        let va = self.argument_ffn.apply(g, h)?;
        Ok((vp, va))
    }

    /// `v_s = v_pᵀ·W1·v_a + W2·[v_p; v_a] + b` for one pair of `[1 × d_r]` rows.
    pub fn biaffine<T: Scalar>(&self, g: &mut Graph<'_, T>, vp: Var, va: Var) -> Result<Var, TensorError> {
        let (ds, dr) = (self.score_dim, self.role_dim);
        let (w1, w2, b) = (g.param(self.w1), g.param(self.w2), g.param(self.b));
        let left = g.matmul(vp, w1)?;
        let left = g.reshape(left, &[ds, dr])?;
        let right = g.transpose(va)?;
        let bilinear = g.matmul(left, right)?;
        let bilinear = g.reshape(bilinear, &[1, ds])?;
        let both = g.concat(&[vp, va], 1)?;
        let linear = g.matmul(both, w2)?;
        let sum = g.add(bilinear, linear)?;
        g.add_row(sum, b)
    }

    /// Biaffine representations of every pair admitted by the policy.
    pub fn score_all_pairs<T: Scalar>(&self, g: &mut Graph<'_, T>, vp: Var, va: Var) -> Result<PairScores> {
        let n = g.shape(vp)[0];
        if n == 0 {
            return Err(Error::Contract("score_all_pairs on an empty sentence".into()));
        }
        let pairs = self.policy.enumerate(n);
        if pairs.is_empty() {
            return Ok(PairScores { pairs, reps: None });
        }
        let (ds, dr) = (self.score_dim, self.role_dim);
        let (w1, w2, b) = (g.param(self.w1), g.param(self.w2), g.param(self.b));

        let left = g.matmul(vp, w1)?;
        let va_t = g.transpose(va)?;
        let mut blocks = Vec::with_capacity(n);
        for p in 0..n {
            let row = g.slice_rows(left, p, 1)?;
            let row = g.reshape(row, &[ds, dr])?;
            let block = g.matmul(row, va_t)?;
            blocks.push(g.transpose(block)?);
        }
        // Row p·n + a holds pair (p, a).
        let mut bilinear = g.concat(&blocks, 0)?;
        if self.policy != PairPolicy::OrderedAll {
            let rows: Vec<usize> = pairs.iter().map(|&(p, a)| p * n + a).collect();
            bilinear = g.gather_rows(bilinear, &rows)?;
        }

        let w2_pred = g.slice_rows(w2, 0, dr)?;
        let w2_arg = g.slice_rows(w2, dr, dr)?;
        let lin_p = g.matmul(vp, w2_pred)?;
        let lin_a = g.matmul(va, w2_arg)?;
        let (ps, as_) = split(&pairs);
        let lin_p = g.gather_rows(lin_p, &ps)?;
        let lin_a = g.gather_rows(lin_a, &as_)?;
        let linear = g.add(lin_p, lin_a)?;
        let sum = g.add(bilinear, linear)?;
        let reps = g.add_row(sum, b)?;
        Ok(PairScores { pairs, reps: Some(reps) })
    }

    /// `[K × |R|]` unary scores `W_p·relu(v_p) + W_a·relu(v_a) + W_s·relu(v_s)`.
    /// `None` when there are no pairs.
    pub fn role_scores<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        vp: Var,
        va: Var,
        scores: &PairScores,
    ) -> Result<Option<Var>, TensorError> {
        let Some(reps) = scores.reps else {
            return Ok(None);
        };
        let (wp, wa, ws) = (g.param(self.w_pred), g.param(self.w_arg), g.param(self.w_pair));
        let rp = g.relu(vp);
        let rp = g.matmul(rp, wp)?;
        let ra = g.relu(va);
        let ra = g.matmul(ra, wa)?;
        let rs = g.relu(reps);
        let rs = g.matmul(rs, ws)?;
        let (ps, as_) = split(&scores.pairs);
        let rp = g.gather_rows(rp, &ps)?;
        let ra = g.gather_rows(ra, &as_)?;
        let unary = g.add(rp, ra)?;
        g.add(unary, rs).map(Some)
    }

    /// Unary scores of one pair from `[1 × d_r]`, `[1 × d_r]` and `[1 × d_s]`
    /// rows, as `[1 × |R|]`.
    pub fn role_scores_pair<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        vp: Var,
        va: Var,
        vs: Var,
    ) -> Result<Var, TensorError> {
        let mut total = None;
        for (x, w) in [(vp, self.w_pred), (va, self.w_arg), (vs, self.w_pair)] {
            let w = g.param(w);
            let r = g.relu(x);
            let term = g.matmul(r, w)?;
            total = Some(match total {
                None => term,
                Some(acc) => g.add(acc, term)?,
            });
        }
        Ok(total.expect("three terms"))
    }
}

fn split(pairs: &[(usize, usize)]) -> (Vec<usize>, Vec<usize>) {
    pairs.iter().copied().unzip()
}

/// Softmax over roles; non-finite scores are an error.
pub fn role_distribution<T: Scalar>(scores: &[T]) -> Result<Vec<T>> {
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("role score {i}")));
    }
    if scores.is_empty() {
        return Err(Error::Contract("role_distribution over no roles".into()));
    }
    Ok(softmax_slice(scores))
}
