use super::tagger::Tagger;
use crate::error::{Error, Result};
use crate::numerics::{Array, ParamSet};

/// Padded hidden states for a batch of sentences.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch {
    /// `[b, L_max, 2h]`, zero past each sentence's length.
    pub states: Array,
    pub lengths: Vec<usize>,
}

impl SequenceBatch {
    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    pub fn max_len(&self) -> usize {
        self.states.shape()[1]
    }

    /// States of sentence `i` as an `L_i × 2h` array.
    pub fn sentence(&self, i: usize) -> Array {
        let (lmax, d) = (self.states.shape()[1], self.states.shape()[2]);
        let start = i * lmax * d;
        let data = self.states.data()[start..start + self.lengths[i] * d].to_vec();
        Array::matrix(self.lengths[i], d, data).expect("sentence slice")
    }
}

/// Runs the encoder over every sentence and packs the results.
pub fn encode_batch(tagger: &Tagger, params: &ParamSet, batch: &[Vec<usize>]) -> Result<SequenceBatch> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let d = tagger.dims().repr();
    let lengths: Vec<usize> = batch.iter().map(Vec::len).collect();
    let lmax = *lengths.iter().max().unwrap_or(&0);
    let mut data = vec![0.0; batch.len() * lmax * d];
    for (i, s) in batch.iter().enumerate() {
        let h = tagger.infer(params, s)?.hidden;
        let start = i * lmax * d;
        data[start..start + s.len() * d].copy_from_slice(h.data());
    }
    Ok(SequenceBatch {
        states: Array::new(vec![batch.len(), lmax, d], data)?,
        lengths,
    })
}
