//! Token representations from word, POS and character inputs: embedding
//! lookups, a character CNN, and a multi-layer BiLSTM.

use rand::Rng;

use crate::config::ModelConfig;
use crate::corpus::{Sentence, Vocabulary, PAD};
use crate::params::{ParamGroup, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, TensorError, Var};

/// Vocabulary ids of one sentence, 0-based positions.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance<T> {
    pub words: Vec<usize>,
    pub pos: Vec<usize>,
    pub chars: Vec<Vec<usize>>,
    /// Optional externally computed features, `[n × external_dim]`.
    pub external: Option<Tensor<T>>,
}

impl<T: Scalar> Instance<T> {
    pub fn from_sentence(sentence: &Sentence, vocab: &Vocabulary) -> Self {
        Instance {
            words: sentence.tokens.iter().map(|t| vocab.word_id(&t.form)).collect(),
            pos: sentence.tokens.iter().map(|t| vocab.pos_id(&t.pos)).collect(),
            chars: sentence
                .tokens
                .iter()
                .map(|t| t.chars.iter().map(|&c| vocab.char_id(c)).collect())
                .collect(),
            external: None,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct CnnBank {
    pub width: usize,
    /// `[width·char_dim × filters]`, window rows flattened in order.
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct LstmDirection {
    /// `[input × 4h]`, gate blocks ordered input, forget, cell, output.
    pub input: ParamId,
    pub recurrent: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub word_emb: ParamId,
    pub pos_emb: ParamId,
    pub char_emb: ParamId,
    pub cnn: Vec<CnnBank>,
    /// `[forward, backward]` per layer.
    pub lstm: Vec<[LstmDirection; 2]>,
    hidden: usize,
    char_dim: usize,
    external_dim: usize,
    dropout: f64,
}

/// Bound of the uniform draw for embedding tables.
const EMBEDDING_BOUND: f64 = 0.05;

impl Encoder {
    pub fn register<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        cfg: &ModelConfig,
        vocab: &Vocabulary,
        rng: &mut R,
    ) -> Self {
        let table = |store: &mut ParamStore<T>, name: &str, rows: usize, dim: usize, rng: &mut R| {
            let mut t = Tensor::uniform(&[rows, dim], EMBEDDING_BOUND, rng);
            t.row_mut(PAD).fill(T::zero());
            let id = store.add(name, ParamGroup::Embeddings, t);
            store.get_mut(id).pad_row = true;
            id
        };
        let word_emb = table(store, "emb.word", vocab.words.len(), cfg.word_dim, rng);
        store.get_mut(word_emb).trainable = !cfg.freeze_words;
        let pos_emb = table(store, "emb.pos", vocab.pos.len(), cfg.pos_dim, rng);
        let char_emb = table(store, "emb.char", vocab.chars.len(), cfg.char_dim, rng);

        let cnn = cfg
            .kernels
            .iter()
            .map(|&width| {
                let fan_in = width * cfg.char_dim;
                CnnBank {
                    width,
                    weight: store.add(
                        format!("cnn.k{width}.w"),
                        ParamGroup::CharCnn,
                        Tensor::glorot(&[fan_in, cfg.filters], fan_in, cfg.filters, rng),
                    ),
                    bias: store.add(format!("cnn.k{width}.b"), ParamGroup::CharCnn, Tensor::zeros(&[cfg.filters])),
                }
            })
            .collect();

        let h = cfg.hidden;
        let mut lstm = Vec::with_capacity(cfg.layers);
        for layer in 0..cfg.layers {
            let input = if layer == 0 { cfg.input_dim() } else { 2 * h };
            let mut direction = |dir: &str| {
                let mut bias = Tensor::zeros(&[4 * h]);
                bias.data_mut()[h..2 * h].fill(T::one());
                LstmDirection {
                    input: store.add(
                        format!("lstm.l{layer}.{dir}.wx"),
                        ParamGroup::Bilstm,
                        Tensor::glorot(&[input, 4 * h], input, 4 * h, rng),
                    ),
                    recurrent: store.add(
                        format!("lstm.l{layer}.{dir}.wh"),
                        ParamGroup::Bilstm,
                        Tensor::glorot(&[h, 4 * h], h, 4 * h, rng),
                    ),
                    bias: store.add(format!("lstm.l{layer}.{dir}.b"), ParamGroup::Bilstm, bias),
                }
            };
            let fw = direction("fw");
            let bw = direction("bw");
            lstm.push([fw, bw]);
        }

        Encoder {
            word_emb,
            pos_emb,
            char_emb,
            cnn,
            lstm,
            hidden: h,
            char_dim: cfg.char_dim,
            external_dim: cfg.external_dim,
            dropout: cfg.dropout,
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }

    /// `[n × filters·|kernels|]`: per kernel width, convolution over the
    /// character embeddings, relu, and max over positions. Words shorter than
    /// a width are right-padded with PAD to that width.
    pub fn char_cnn<T: Scalar>(&self, g: &mut Graph<'_, T>, chars: &[Vec<usize>]) -> Result<Var, TensorError> {
        let table = g.param(self.char_emb);
        let mut per_width = Vec::with_capacity(self.cnn.len());
        for bank in &self.cnn {
            let w = bank.width;
            let mut indices = Vec::new();
            let mut windows = Vec::with_capacity(chars.len());
            for word in chars {
                let mut padded = word.clone();
                if padded.len() < w {
                    padded.resize(w, PAD);
                }
                let count = padded.len() - w + 1;
                for start in 0..count {
                    indices.extend_from_slice(&padded[start..start + w]);
                }
                windows.push(count);
            }
            let total: usize = windows.iter().sum();
            let rows = g.gather_rows(table, &indices)?;
            let rows = g.reshape(rows, &[total, w * self.char_dim])?;
            let (weight, bias) = (g.param(bank.weight), g.param(bank.bias));
            let conv = g.matmul(rows, weight)?;
            let conv = g.add_row(conv, bias)?;
            let conv = g.relu(conv);
            per_width.push(g.segment_max(conv, &windows)?);
        }
        g.concat(&per_width, 1)
    }

    /// `[n × d_in]` rows `[x^w ; x^pos ; x^c]` (plus external features when
    /// configured).
    pub fn embed_tokens<T: Scalar>(&self, g: &mut Graph<'_, T>, inst: &Instance<T>) -> Result<Var, TensorError> {
        let words = g.param(self.word_emb);
        let words = g.gather_rows(words, &inst.words)?;
        let pos = g.param(self.pos_emb);
        let pos = g.gather_rows(pos, &inst.pos)?;
        let chars = self.char_cnn(g, &inst.chars)?;
        let mut parts = vec![words, pos, chars];
        if self.external_dim > 0 {
            let ext = inst.external.clone().ok_or_else(|| {
                TensorError::invalid("embed_tokens", "external features configured but not supplied")
            })?;
            parts.push(g.constant(ext));
        }
        g.concat(&parts, 1)
    }

    fn lstm_direction<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        x: Var,
        params: &LstmDirection,
        reverse: bool,
    ) -> Result<Var, TensorError> {
        let h = self.hidden;
        let n = g.shape(x)[0];
        let (wx, wh, b) = (g.param(params.input), g.param(params.recurrent), g.param(params.bias));
        let projected = g.matmul(x, wx)?;
        let projected = g.add_row(projected, b)?;

        let mut outputs = vec![None; n];
        let mut state: Option<(Var, Var)> = None;
        let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
        for t in order {
            let mut gates = g.slice_rows(projected, t, 1)?;
            if let Some((h_prev, _)) = state {
                let rec = g.matmul(h_prev, wh)?;
                gates = g.add(gates, rec)?;
            }
            let i = g.slice_cols(gates, 0, h)?;
            let i = g.sigmoid(i);
            let f = g.slice_cols(gates, h, h)?;
            let f = g.sigmoid(f);
            let cell = g.slice_cols(gates, 2 * h, h)?;
            let cell = g.tanh(cell);
            let o = g.slice_cols(gates, 3 * h, h)?;
            let o = g.sigmoid(o);
            let mut c = g.mul(i, cell)?;
            if let Some((_, c_prev)) = state {
                let keep = g.mul(f, c_prev)?;
                c = g.add(keep, c)?;
            }
            let squashed = g.tanh(c);
            let h_t = g.mul(o, squashed)?;
            outputs[t] = Some(h_t);
            state = Some((h_t, c));
        }
        let rows: Vec<Var> = outputs.into_iter().flatten().collect();
        g.concat(&rows, 0)
    }

    /// `[n × 2h]`: the top layer's forward and backward outputs side by side.
    /// Initial states are zero.
    pub fn bilstm_encode<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var, TensorError> {
        if g.shape(x)[0] == 0 {
            return Err(TensorError::invalid("bilstm_encode", "empty sentence"));
        }
        let mut layer_input = x;
        for layer in &self.lstm {
            let fw = self.lstm_direction(g, layer_input, &layer[0], false)?;
            let bw = self.lstm_direction(g, layer_input, &layer[1], true)?;
            layer_input = g.concat(&[fw, bw], 1)?;
        }
        Ok(layer_input)
    }

    /// Embeds and encodes one sentence. `dropout_rng` enables input dropout
    /// (training only).
    pub fn encode<T: Scalar, R: Rng>(
        &self,
        g: &mut Graph<'_, T>,
        inst: &Instance<T>,
        dropout_rng: Option<&mut R>,
    ) -> Result<Var, TensorError> {
        let mut x = self.embed_tokens(g, inst)?;
        if let Some(rng) = dropout_rng.filter(|_| self.dropout > 0.0) {
            let keep = 1.0 - self.dropout;
            let shape = g.shape(x).to_vec();
            let n = shape.iter().product();
            let mask = (0..n)
                .map(|_| if rng.gen::<f64>() < keep { T::of(1.0 / keep) } else { T::zero() })
                .collect();
            let mask = g.constant(Tensor::new(&shape, mask)?);
            x = g.mul(x, mask)?;
        }
        self.bilstm_encode(g, x)
    }
}
