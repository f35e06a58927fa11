use rand::RngCore;

use super::crf::{self, CrfParams, CrfVars};
use super::lstm::{lstm_sweep, LstmVars};
use crate::error::{Error, Result};
use crate::numerics::{dropout_mask, Array, ParamSet, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TaggerDims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub tags: usize,
}

impl TaggerDims {
    /// Width of the concatenated forward/backward states.
    pub fn repr(&self) -> usize {
        2 * self.hidden
    }
}

/// Which per-position distribution a tagger exposes for distillation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Distribution {
    /// Forward-backward marginals of the CRF.
    Marginals,
    /// Softmax of the emission scores, ignoring transitions.
    Emissions,
}

/// Bi-LSTM-CRF tagger whose weights live in a shared [`ParamSet`] under a
/// name prefix. The embedding table is referenced by name so two taggers can
/// share one.
#[derive(Clone, Debug, PartialEq)]
pub struct Tagger {
    prefix: String,
    embedding: String,
    dims: TaggerDims,
}

/// Forward-pass outputs for one sentence, detached from any tape.
#[derive(Clone, Debug)]
pub struct Inference {
    /// `L × 2h`
    pub hidden: Array,
    /// `L × K`
    pub emissions: Array,
}

impl Tagger {
    pub fn new(prefix: impl Into<String>, embedding: impl Into<String>, dims: TaggerDims) -> Self {
        Tagger {
            prefix: prefix.into(),
            embedding: embedding.into(),
            dims,
        }
    }

    pub fn dims(&self) -> TaggerDims {
        self.dims
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn embedding_name(&self) -> &str {
        &self.embedding
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{}", self.prefix, part)
    }

    /// Names of the tagger's own (non-embedding) parameters.
    pub fn param_names(&self) -> Vec<String> {
        [
            "lstm.fw.input",
            "lstm.fw.recurrent",
            "lstm.fw.bias",
            "lstm.bw.input",
            "lstm.bw.recurrent",
            "lstm.bw.bias",
            "emit.w",
            "emit.b",
            "crf.trans",
            "crf.start",
            "crf.stop",
        ]
        .iter()
        .map(|p| self.name(p))
        .collect()
    }

    pub fn init_embedding(
        params: &mut ParamSet,
        name: &str,
        vocab: usize,
        dim: usize,
        rng: &mut dyn RngCore,
    ) -> Result<()> {
        let scale = (3.0 / dim as f64).sqrt();
        params.insert_uniform(name, &[vocab, dim], scale, rng)?;
        Ok(())
    }

    /// Registers the LSTM, emission and CRF parameters.
    pub fn init_params(&self, params: &mut ParamSet, rng: &mut dyn RngCore) -> Result<()> {
        let d = self.dims;
        let h = d.hidden;
        let lstm_scale = 1.0 / (h as f64).sqrt();
        for dir in ["fw", "bw"] {
            params.insert_uniform(
                self.name(&format!("lstm.{dir}.input")),
                &[d.embed, 4 * h],
                lstm_scale,
                rng,
            )?;
            params.insert_uniform(
                self.name(&format!("lstm.{dir}.recurrent")),
                &[h, 4 * h],
                lstm_scale,
                rng,
            )?;
            params.insert(self.name(&format!("lstm.{dir}.bias")), Array::zeros(&[1, 4 * h]))?;
        }
        let emit_scale = (6.0 / (d.repr() + d.tags) as f64).sqrt();
        params.insert_uniform(self.name("emit.w"), &[d.repr(), d.tags], emit_scale, rng)?;
        params.insert(self.name("emit.b"), Array::zeros(&[1, d.tags]))?;
        params.insert_uniform(self.name("crf.trans"), &[d.tags, d.tags], 0.1, rng)?;
        params.insert(self.name("crf.start"), Array::zeros(&[1, d.tags]))?;
        params.insert(self.name("crf.stop"), Array::zeros(&[1, d.tags]))?;
        Ok(())
    }

    fn lstm_vars(&self, tape: &mut Tape, dir: &str) -> Result<LstmVars> {
        Ok(LstmVars {
            input: tape.param_named(&self.name(&format!("lstm.{dir}.input")))?,
            recurrent: tape.param_named(&self.name(&format!("lstm.{dir}.recurrent")))?,
            bias: tape.param_named(&self.name(&format!("lstm.{dir}.bias")))?,
        })
    }

    /// Bi-LSTM states for one sentence, `L × 2h`: row `j` is the forward
    /// state at `j` followed by the backward state at `j`.
    pub fn encode(
        &self,
        tape: &mut Tape,
        tokens: &[usize],
        dropout: Option<(f64, &mut dyn RngCore)>,
    ) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::Data("cannot encode an empty sentence".into()));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.dims.vocab) {
            return Err(Error::Data(format!(
                "token id {bad} out of range for vocabulary of {}",
                self.dims.vocab
            )));
        }
        let table = tape.param_named(&self.embedding)?;
        let mut x = tape.gather(table, tokens)?;
        if let Some((rate, rng)) = dropout {
            if rate > 0.0 {
                let mask = dropout_mask(rng, tokens.len() * self.dims.embed, rate);
                x = tape.dropout(x, mask)?;
            }
        }
        let fw = self.lstm_vars(tape, "fw")?;
        let bw = self.lstm_vars(tape, "bw")?;
        let hf = lstm_sweep(tape, x, &fw, false)?;
        let hb = lstm_sweep(tape, x, &bw, true)?;
        tape.concat(&[hf, hb], 1)
    }

    /// Emission scores `L × K` from hidden states.
    pub fn emissions(&self, tape: &mut Tape, hidden: Var) -> Result<Var> {
        let w = tape.param_named(&self.name("emit.w"))?;
        let b = tape.param_named(&self.name("emit.b"))?;
        let e = tape.matmul(hidden, w)?;
        tape.add(e, b)
    }

    pub fn crf_vars(&self, tape: &mut Tape) -> Result<CrfVars> {
        Ok(CrfVars {
            transitions: tape.param_named(&self.name("crf.trans"))?,
            start: tape.param_named(&self.name("crf.start"))?,
            stop: tape.param_named(&self.name("crf.stop"))?,
        })
    }

    pub fn crf_params(&self, params: &ParamSet) -> Result<CrfParams> {
        let get = |p: &str| -> Result<&Array> { Ok(params.value(params.id(&self.name(p))?)) };
        Ok(CrfParams {
            transitions: get("crf.trans")?.clone(),
            start: get("crf.start")?.data().to_vec(),
            stop: get("crf.stop")?.data().to_vec(),
        })
    }

    /// Sequence NLL of `gold` given emissions.
    pub fn nll(&self, tape: &mut Tape, emissions: Var, gold: &[usize]) -> Result<Var> {
        let c = self.crf_vars(tape)?;
        crf::tape_nll(tape, emissions, &c, gold)
    }

    /// Per-position log-distribution `L × K` used for distillation, with
    /// scores divided by `temperature`.
    pub fn log_distribution(
        &self,
        tape: &mut Tape,
        emissions: Var,
        kind: Distribution,
        temperature: f64,
    ) -> Result<Var> {
        let inv = 1.0 / temperature;
        let e = if temperature == 1.0 {
            emissions
        } else {
            tape.scale(emissions, inv)
        };
        match kind {
            Distribution::Emissions => Ok(tape.log_softmax(e)),
            Distribution::Marginals => {
                let mut c = self.crf_vars(tape)?;
                if temperature != 1.0 {
                    c = CrfVars {
                        transitions: tape.scale(c.transitions, inv),
                        start: tape.scale(c.start, inv),
                        stop: tape.scale(c.stop, inv),
                    };
                }
                crf::tape_log_marginals(tape, e, &c)
            }
        }
    }

    /// Dropout-free forward pass for one sentence.
    pub fn infer(&self, params: &ParamSet, tokens: &[usize]) -> Result<Inference> {
        let mut tape = Tape::new(params);
        let h = self.encode(&mut tape, tokens, None)?;
        let e = self.emissions(&mut tape, h)?;
        Ok(Inference {
            hidden: tape.value(h).clone(),
            emissions: tape.value(e).clone(),
        })
    }

    /// Viterbi tags for one sentence.
    pub fn decode(&self, params: &ParamSet, tokens: &[usize]) -> Result<Vec<usize>> {
        let inf = self.infer(params, tokens)?;
        Ok(crf::crf_viterbi(&inf.emissions, &self.crf_params(params)?)?.0)
    }

    /// Per-position distribution (`L × K`, rows sum to 1), dropout disabled.
    pub fn distribution(
        &self,
        params: &ParamSet,
        tokens: &[usize],
        kind: Distribution,
        temperature: f64,
    ) -> Result<Array> {
        let mut tape = Tape::new(params);
        let h = self.encode(&mut tape, tokens, None)?;
        let e = self.emissions(&mut tape, h)?;
        let lp = self.log_distribution(&mut tape, e, kind, temperature)?;
        Ok(tape.value(lp).map(f64::exp))
    }
}
