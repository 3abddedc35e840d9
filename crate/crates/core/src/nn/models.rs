//! The many-to-one encoder-decoder and the multilingual RNN language model.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::lstm::LstmCell;
use super::Example;
use crate::autograd::{glorot_uniform, Graph, ParamId, ParamStore, Tensor, Var};
use crate::bpe::{BOS_ID, EOS_ID, PAD_ID};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Sizes shared by both model kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub vocab_size: usize,
    pub embed_size: usize,
    pub hidden_size: usize,
}

/// Per-step encoder states for one sentence, time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStates<T> {
    pub hidden: Vec<Vec<T>>,
    pub cell: Vec<Vec<T>>,
}

impl<T> EncoderStates<T> {
    pub fn len(&self) -> usize {
        self.cell.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cell.is_empty()
    }
}

pub(crate) struct Recurrence {
    /// Raw `(h_t, c_t)` per step, valid only for rows active at that step.
    pub steps: Vec<(Var, Var)>,
    pub active: Vec<Vec<bool>>,
    pub last_h: Var,
    pub last_c: Var,
}

/// Runs `cell` over right-padded id sequences, carrying state through padding.
pub(crate) fn run_recurrence<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    cell: &LstmCell,
    embed: ParamId,
    seqs: &[Vec<u32>],
    init: Option<(Var, Var)>,
    mut dropout: Option<(f64, &mut ChaCha8Rng)>,
) -> Result<Recurrence> {
    let batch = seqs.len();
    let max_len = seqs.iter().map(Vec::len).max().unwrap_or(0);
    let table = g.param(store, embed);
    let (mut h, mut c) = match init {
        Some(hc) => hc,
        None => {
            let h = g.constant(Tensor::zeros(&[batch, cell.hidden_size]));
            let c = g.constant(Tensor::zeros(&[batch, cell.hidden_size]));
            (h, c)
        }
    };
    let mut steps = Vec::with_capacity(max_len);
    let mut active = Vec::with_capacity(max_len);
    for t in 0..max_len {
        let ids: Vec<u32> = seqs.iter().map(|s| s.get(t).copied().unwrap_or(PAD_ID)).collect();
        let mask: Vec<bool> = seqs.iter().map(|s| t < s.len()).collect();
        let mut x = g.lookup(table, &ids)?;
        if let Some((rate, rng)) = dropout.as_mut() {
            x = g.dropout(x, *rate, *rng)?;
        }
        let (h_t, c_t) = cell.step(g, store, x, h, c)?;
        if mask.iter().all(|&m| m) {
            h = h_t;
            c = c_t;
        } else {
            h = g.blend(h_t, h, &mask)?;
            c = g.blend(c_t, c, &mask)?;
        }
        steps.push((h_t, c_t));
        active.push(mask);
    }
    Ok(Recurrence {
        steps,
        active,
        last_h: h,
        last_c: c,
    })
}

/// Shared output layer: `logits = h W + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Projection {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Projection {
    fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, prefix: &str, input: usize, output: usize, rng: &mut R) -> Result<Self> {
        Ok(Projection {
            weight: store.add(format!("{prefix}.w"), glorot_uniform(input, output, rng))?,
            bias: store.add(format!("{prefix}.b"), Tensor::zeros(&[1, output]))?,
        })
    }

    fn from_store<T: Scalar>(store: &ParamStore<T>, prefix: &str) -> Option<Self> {
        Some(Projection {
            weight: store.id(&format!("{prefix}.w"))?,
            bias: store.id(&format!("{prefix}.b"))?,
        })
    }

    fn apply<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let z = g.matmul(x, w)?;
        g.add(z, b)
    }
}

/// Common surface for training and evaluation.
pub trait SequenceModel<T: Scalar> {
    fn store(&self) -> &ParamStore<T>;
    fn store_mut(&mut self) -> &mut ParamStore<T>;
    fn dims(&self) -> ModelDims;

    /// Summed token NLL of a batch and the number of scored tokens.
    /// Dropout is applied when `dropout` is given.
    fn batch_nll(&self, g: &mut Graph<T>, batch: &[&Example], dropout: Option<(f64, &mut ChaCha8Rng)>) -> Result<(Var, usize)>;
}

fn check_ids(batch: &[&Example], vocab_size: usize) -> Result<()> {
    for ex in batch {
        if let Some(&bad) = ex.source.iter().chain(&ex.target).chain(std::iter::once(&ex.lang_id)).find(|&&id| id as usize >= vocab_size) {
            return Err(Error::validation(format!("token id {bad} outside vocabulary of {vocab_size}")));
        }
    }
    Ok(())
}

fn split_rng<'a>(d: &'a mut Option<(f64, &mut ChaCha8Rng)>) -> Option<(f64, &'a mut ChaCha8Rng)> {
    d.as_mut().map(|(r, rng)| (*r, &mut **rng))
}

/// Global dot-product attention with a `tanh([h; ctx] Wc + bc)` output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Attention {
    pub combine: Projection,
}

/// Encoder-decoder translating every source language into one target language.
///
/// The source is read as `[<lang>] + source + [EOS]`; the decoder starts from
/// the final encoder `(h, c)`, reads `[BOS] + target` and predicts `target + [EOS]`.
#[derive(Debug, Clone)]
pub struct Seq2Seq<T: Scalar> {
    pub store: ParamStore<T>,
    pub embedding: ParamId,
    pub encoder: LstmCell,
    pub decoder: LstmCell,
    pub output: Projection,
    pub attention: Option<Attention>,
    dims: ModelDims,
}

impl<T: Scalar> Seq2Seq<T> {
    pub fn new<R: Rng>(dims: ModelDims, attention: bool, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new();
        let embedding = store.add("embedding", glorot_uniform(dims.vocab_size, dims.embed_size, rng))?;
        let encoder = LstmCell::new(&mut store, "encoder", dims.embed_size, dims.hidden_size, rng)?;
        let decoder = LstmCell::new(&mut store, "decoder", dims.embed_size, dims.hidden_size, rng)?;
        let attention = if attention {
            Some(Attention {
                combine: Projection::new(&mut store, "attention", 2 * dims.hidden_size, dims.hidden_size, rng)?,
            })
        } else {
            None
        };
        let output = Projection::new(&mut store, "output", dims.hidden_size, dims.vocab_size, rng)?;
        Ok(Seq2Seq {
            store,
            embedding,
            encoder,
            decoder,
            output,
            attention,
            dims,
        })
    }

    /// Rebinds a model to a store holding the expected parameter names.
    pub fn from_store(store: ParamStore<T>) -> Result<Self> {
        let missing = || Error::validation("parameter store is not a translation model");
        let embedding = store.id("embedding").ok_or_else(missing)?;
        let encoder = LstmCell::from_store(&store, "encoder").ok_or_else(missing)?;
        let decoder = LstmCell::from_store(&store, "decoder").ok_or_else(missing)?;
        let output = Projection::from_store(&store, "output").ok_or_else(missing)?;
        let attention = Projection::from_store(&store, "attention").map(|combine| Attention { combine });
        let (vocab_size, embed_size) = store.value(embedding).dims2();
        let dims = ModelDims {
            vocab_size,
            embed_size,
            hidden_size: encoder.hidden_size,
        };
        Ok(Seq2Seq {
            store,
            embedding,
            encoder,
            decoder,
            output,
            attention,
            dims,
        })
    }

    /// Embedding row of a vocabulary id.
    pub fn embedding_row(&self, id: u32) -> Result<Vec<T>> {
        let table = self.store.value(self.embedding);
        if id as usize >= table.rows() {
            return Err(Error::validation(format!("id {id} outside embedding table")));
        }
        Ok(table.row_slice(id as usize).to_vec())
    }

    /// Encoder states for every position of `[<lang>] + source + [EOS]`.
    pub fn encode(&self, lang_id: u32, source: &[u32]) -> Result<EncoderStates<T>> {
        let ex = Example {
            lang_id,
            source: source.to_vec(),
            target: Vec::new(),
        };
        check_ids(&[&ex], self.dims.vocab_size)?;
        let mut g = Graph::new();
        let seq = encoder_input(&ex);
        let run = run_recurrence(&mut g, &self.store, &self.encoder, self.embedding, &[seq], None, None)?;
        let mut states = EncoderStates {
            hidden: Vec::with_capacity(run.steps.len()),
            cell: Vec::with_capacity(run.steps.len()),
        };
        for (h, c) in run.steps {
            states.hidden.push(g.value(h).data().to_vec());
            states.cell.push(g.value(c).data().to_vec());
        }
        Ok(states)
    }
}

pub(crate) fn encoder_input(ex: &Example) -> Vec<u32> {
    let mut seq = Vec::with_capacity(ex.source.len() + 2);
    seq.push(ex.lang_id);
    seq.extend_from_slice(&ex.source);
    seq.push(EOS_ID);
    seq
}

impl<T: Scalar> SequenceModel<T> for Seq2Seq<T> {
    fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    fn dims(&self) -> ModelDims {
        self.dims
    }

    fn batch_nll(&self, g: &mut Graph<T>, batch: &[&Example], mut dropout: Option<(f64, &mut ChaCha8Rng)>) -> Result<(Var, usize)> {
        check_ids(batch, self.dims.vocab_size)?;
        let src: Vec<Vec<u32>> = batch.iter().map(|ex| encoder_input(ex)).collect();
        let enc = run_recurrence(g, &self.store, &self.encoder, self.embedding, &src, None, split_rng(&mut dropout))?;

        let dec_in: Vec<Vec<u32>> = batch
            .iter()
            .map(|ex| std::iter::once(BOS_ID).chain(ex.target.iter().copied()).collect())
            .collect();
        let dec_out: Vec<Vec<u32>> = batch
            .iter()
            .map(|ex| ex.target.iter().copied().chain(std::iter::once(EOS_ID)).collect())
            .collect();
        let dec = run_recurrence(
            g,
            &self.store,
            &self.decoder,
            self.embedding,
            &dec_in,
            Some((enc.last_h, enc.last_c)),
            split_rng(&mut dropout),
        )?;

        // Additive -inf mask per encoder step for attention over padded rows.
        let enc_masks: Vec<Var> = match self.attention {
            Some(_) => enc
                .active
                .iter()
                .map(|m| {
                    let col = m.iter().map(|&a| if a { T::zero() } else { T::neg_infinity() }).collect();
                    g.constant(Tensor::matrix(m.len(), 1, col).expect("column shape"))
                })
                .collect(),
            None => Vec::new(),
        };

        let mut losses = Vec::with_capacity(dec.steps.len());
        let mut tokens = 0;
        for (t, &(h_t, _)) in dec.steps.iter().enumerate() {
            let targets: Vec<Option<u32>> = dec_out.iter().map(|s| s.get(t).copied()).collect();
            tokens += targets.iter().filter(|x| x.is_some()).count();
            let features = match self.attention {
                Some(att) => {
                    let mut scores = Vec::with_capacity(enc.steps.len());
                    for (j, &(eh, _)) in enc.steps.iter().enumerate() {
                        let s = g.row_dot(h_t, eh)?;
                        scores.push(g.add(s, enc_masks[j])?);
                    }
                    let scores = g.concat(&scores)?;
                    let weights = g.masked_softmax(scores);
                    let mut parts = Vec::with_capacity(enc.steps.len());
                    for (j, &(eh, _)) in enc.steps.iter().enumerate() {
                        let w = g.slice(weights, j, j + 1)?;
                        parts.push(g.scale_rows(eh, w)?);
                    }
                    let ctx = g.add_n(&parts)?;
                    let joined = g.concat(&[h_t, ctx])?;
                    let z = att.combine.apply(g, &self.store, joined)?;
                    g.tanh(z)
                }
                None => h_t,
            };
            let logits = self.output.apply(g, &self.store, features)?;
            losses.push(g.softmax_cross_entropy(logits, &targets)?);
        }
        Ok((g.add_n(&losses)?, tokens))
    }
}

/// LSTM language model over `[<lang>] + source`, predicting `source + [EOS]`.
///
/// With `use_lang_token == false` the first input is BOS instead, which removes
/// the per-language signal.
#[derive(Debug, Clone)]
pub struct RnnLm<T: Scalar> {
    pub store: ParamStore<T>,
    pub embedding: ParamId,
    pub cell: LstmCell,
    pub output: Projection,
    pub use_lang_token: bool,
    dims: ModelDims,
}

impl<T: Scalar> RnnLm<T> {
    pub fn new<R: Rng>(dims: ModelDims, use_lang_token: bool, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new();
        let embedding = store.add("embedding", glorot_uniform(dims.vocab_size, dims.embed_size, rng))?;
        let cell = LstmCell::new(&mut store, "lm", dims.embed_size, dims.hidden_size, rng)?;
        let output = Projection::new(&mut store, "output", dims.hidden_size, dims.vocab_size, rng)?;
        Ok(RnnLm {
            store,
            embedding,
            cell,
            output,
            use_lang_token,
            dims,
        })
    }

    pub fn from_store(store: ParamStore<T>, use_lang_token: bool) -> Result<Self> {
        let missing = || Error::validation("parameter store is not a language model");
        let embedding = store.id("embedding").ok_or_else(missing)?;
        let cell = LstmCell::from_store(&store, "lm").ok_or_else(missing)?;
        let output = Projection::from_store(&store, "output").ok_or_else(missing)?;
        let (vocab_size, embed_size) = store.value(embedding).dims2();
        let dims = ModelDims {
            vocab_size,
            embed_size,
            hidden_size: cell.hidden_size,
        };
        Ok(RnnLm {
            store,
            embedding,
            cell,
            output,
            use_lang_token,
            dims,
        })
    }

    pub fn embedding_row(&self, id: u32) -> Result<Vec<T>> {
        let table = self.store.value(self.embedding);
        if id as usize >= table.rows() {
            return Err(Error::validation(format!("id {id} outside embedding table")));
        }
        Ok(table.row_slice(id as usize).to_vec())
    }
}

impl<T: Scalar> SequenceModel<T> for RnnLm<T> {
    fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    fn dims(&self) -> ModelDims {
        self.dims
    }

    fn batch_nll(&self, g: &mut Graph<T>, batch: &[&Example], dropout: Option<(f64, &mut ChaCha8Rng)>) -> Result<(Var, usize)> {
        check_ids(batch, self.dims.vocab_size)?;
        let first = |ex: &Example| if self.use_lang_token { ex.lang_id } else { BOS_ID };
        let inputs: Vec<Vec<u32>> = batch
            .iter()
            .map(|ex| std::iter::once(first(ex)).chain(ex.source.iter().copied()).collect())
            .collect();
        let outputs: Vec<Vec<u32>> = batch
            .iter()
            .map(|ex| ex.source.iter().copied().chain(std::iter::once(EOS_ID)).collect())
            .collect();
        let run = run_recurrence(g, &self.store, &self.cell, self.embedding, &inputs, None, dropout)?;
        let mut losses = Vec::with_capacity(run.steps.len());
        let mut tokens = 0;
        for (t, &(h_t, _)) in run.steps.iter().enumerate() {
            let targets: Vec<Option<u32>> = outputs.iter().map(|s| s.get(t).copied()).collect();
            tokens += targets.iter().filter(|x| x.is_some()).count();
            let logits = self.output.apply(g, &self.store, h_t)?;
            losses.push(g.softmax_cross_entropy(logits, &targets)?);
        }
        Ok((g.add_n(&losses)?, tokens))
    }
}
