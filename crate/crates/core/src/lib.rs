//! Fine-grained knowledge fusion for sequence-labeling domain adaptation.
//!
//! A source tagger trained on a large annotated domain teaches a target
//! tagger through distillation. How much each target sentence and each
//! token listens to the teacher is set by learned domain-relevance scores.
//!
//! Layout:
//! - [`numerics`]: arrays, reverse-mode differentiation, SGD.
//! - [`seq_model`]: Bi-LSTM encoder and linear-chain CRF.
//! - [`relevance`]: element- and sample-level domain relevance.
//! - [`fusion`]: fusion weights and the composite losses.
//! - [`trainer`]: the alternating source/target training loop.
//! - [`data`]: column corpora, tag schemes, synthetic two-domain corpora.
//! - [`eval_report`]: span F1, OOV recall, relevance partition and exports.
//! - [`cli`]: run configuration and the experiment commands.

pub mod cli;
pub mod data;
mod error;
mod kv;
pub mod eval_report;
pub mod fusion;
pub mod numerics;
pub mod relevance;
pub mod seq_model;
pub mod trainer;

pub use error::{Error, Result};
