use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::models::{ModelDims, RnnLm, Seq2Seq, SequenceModel};
use crate::autograd::{AdamConfig, AdamState, Graph};
use crate::bpe::{EncodedPair, SubwordVocab};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One training sentence: the language token id plus source and target ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub lang_id: u32,
    pub source: Vec<u32>,
    pub target: Vec<u32>,
}

/// Resolves language tokens for encoded corpus pairs.
pub fn examples(pairs: &[EncodedPair], vocab: &SubwordVocab) -> Result<Vec<Example>> {
    pairs
        .iter()
        .map(|p| {
            Ok(Example {
                lang_id: vocab.language_id(&p.lang)?,
                source: p.source.clone(),
                target: p.target.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub embed_size: usize,
    pub hidden_size: usize,
    pub lr: f64,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub clip_norm: f64,
    pub attention: bool,
    /// Language model only: feed `<lang>` rather than BOS as the first input.
    pub use_lang_token: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            embed_size: 512,
            hidden_size: 512,
            lr: 0.001,
            dropout: 0.5,
            epochs: 10,
            batch_size: 32,
            seed: 0,
            clip_norm: 5.0,
            attention: false,
            use_lang_token: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_size == 0 || self.hidden_size == 0 {
            return Err(Error::validation("embedding and hidden sizes must be positive"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::validation(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::validation(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch size must be positive"));
        }
        if !(self.clip_norm.is_finite() && self.clip_norm > 0.0) {
            return Err(Error::validation("clip norm must be positive"));
        }
        Ok(())
    }

    fn dims(&self, vocab_size: usize) -> ModelDims {
        ModelDims {
            vocab_size,
            embed_size: self.embed_size,
            hidden_size: self.hidden_size,
        }
    }
}

/// Length-bucketed batches: examples sorted by `(source len, target len, index)`.
pub fn make_batches(examples: &[Example], batch_size: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.sort_by_key(|&i| (examples[i].source.len(), examples[i].target.len(), i));
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Trains `model` in place and returns the mean per-token NLL of each epoch.
pub fn fit<T: Scalar, M: SequenceModel<T>>(model: &mut M, examples: &[Example], config: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::validation("cannot train on an empty corpus"));
    }
    let batches = make_batches(examples, config.batch_size);
    let mut adam = AdamState::new(model.store(), AdamConfig { lr: config.lr, ..AdamConfig::default() });
    let mut curve = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..batches.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut tokens = 0usize;
        for (step, &b) in order.iter().enumerate() {
            let batch: Vec<&Example> = batches[b].iter().map(|&i| &examples[i]).collect();
            let mut g = Graph::new();
            let dropout = (config.dropout > 0.0).then_some((config.dropout, &mut *rng));
            let (loss, n) = model.batch_nll(&mut g, &batch, dropout)?;
            let value = g.value(loss).item().as_f64();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss at epoch {} step {} (value {value}, {} sentences, lr {})",
                    epoch + 1,
                    step + 1,
                    batch.len(),
                    config.lr
                )));
            }
            let mean = g.scale(loss, T::of(1.0 / n.max(1) as f64));
            let grads = g.backward(mean)?;
            drop(g);
            let store = model.store_mut();
            store.zero_grads();
            store.accumulate(&grads);
            store.clip_grad_norm(T::of(config.clip_norm));
            adam.step(store)?;
            total += value;
            tokens += n;
        }
        curve.push(total / tokens.max(1) as f64);
    }
    Ok(curve)
}

/// Trained model plus its per-epoch loss curve.
#[derive(Debug, Clone)]
pub struct Trained<M> {
    pub model: M,
    pub loss_curve: Vec<f64>,
}

pub fn train_nmt<T: Scalar>(examples: &[Example], vocab_size: usize, config: &TrainConfig) -> Result<Trained<Seq2Seq<T>>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Seq2Seq::new(config.dims(vocab_size), config.attention, &mut rng)?;
    let loss_curve = fit(&mut model, examples, config, &mut rng)?;
    Ok(Trained { model, loss_curve })
}

pub fn train_lm<T: Scalar>(examples: &[Example], vocab_size: usize, config: &TrainConfig) -> Result<Trained<RnnLm<T>>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = RnnLm::new(config.dims(vocab_size), config.use_lang_token, &mut rng)?;
    let loss_curve = fit(&mut model, examples, config, &mut rng)?;
    Ok(Trained { model, loss_curve })
}

/// Total NLL (nats) and scored token count, without dropout.
pub fn corpus_nll<T: Scalar, M: SequenceModel<T>>(model: &M, examples: &[Example], batch_size: usize) -> Result<(f64, usize)> {
    let mut total = 0.0;
    let mut tokens = 0;
    for batch in make_batches(examples, batch_size) {
        let batch: Vec<&Example> = batch.iter().map(|&i| &examples[i]).collect();
        let mut g = Graph::new();
        let (loss, n) = model.batch_nll(&mut g, &batch, None)?;
        total += g.value(loss).item().as_f64();
        tokens += n;
    }
    Ok((total, tokens))
}

/// `exp(total NLL / tokens)`.
pub fn perplexity<T: Scalar, M: SequenceModel<T>>(model: &M, examples: &[Example], batch_size: usize) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::validation("perplexity of an empty corpus"));
    }
    let (total, tokens) = corpus_nll(model, examples, batch_size)?;
    let ppl = (total / tokens as f64).exp();
    if !ppl.is_finite() {
        return Err(Error::NonFinite("perplexity".into()));
    }
    Ok(ppl)
}
