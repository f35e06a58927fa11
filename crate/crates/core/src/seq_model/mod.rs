//! Bi-LSTM-CRF sequence labeller and its building blocks.

mod batch;
pub mod crf;
mod lstm;
mod tagger;
mod vocab;

pub use batch::{encode_batch, SequenceBatch};
pub use crf::{crf_log_partition, crf_marginals, crf_nll, crf_viterbi, path_score, CrfParams, CrfVars};
pub use lstm::{lstm_sweep, LstmVars};
pub use tagger::{Distribution, Inference, Tagger, TaggerDims};
pub use vocab::{Vocabulary, PAD, PAD_TOKEN, UNK, UNK_TOKEN};
