//! LSTM building blocks, the translation and language models, and training.

mod lstm;
mod models;
mod train;

use std::path::Path;

pub use lstm::{lstm_step, LstmCell};
pub use models::{Attention, EncoderStates, ModelDims, Projection, RnnLm, Seq2Seq, SequenceModel};
pub use train::{corpus_nll, examples, fit, make_batches, perplexity, train_lm, train_nmt, Example, TrainConfig, Trained};

use crate::autograd::Checkpoint;
use crate::error::Result;
use crate::scalar::Scalar;

impl<T: Scalar> Seq2Seq<T> {
    pub fn save(&self, path: &Path, seed: u64) -> Result<()> {
        Checkpoint::from_store(&self.store, seed).save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_store(Checkpoint::load(path)?.to_store()?)
    }
}

impl<T: Scalar> RnnLm<T> {
    pub fn save(&self, path: &Path, seed: u64) -> Result<()> {
        Checkpoint::from_store(&self.store, seed).save(path)
    }

    pub fn load(path: &Path, use_lang_token: bool) -> Result<Self> {
        Self::from_store(Checkpoint::load(path)?.to_store()?, use_lang_token)
    }
}
