use rand::RngCore;

use super::config::TrainConfig;
use crate::data::{Corpus, TagScheme};
use crate::error::{Error, Result};
use crate::eval_report::RelevanceRow;
use crate::fusion::{self, AlphaMode};
use crate::numerics::{ParamSet, Tape, Var};
use crate::relevance::{self, RelevanceConfig, RelevanceModel};
use crate::seq_model::{Tagger, TaggerDims, Vocabulary};

pub const SHARED_EMBEDDING: &str = "emb";

/// Which tagger to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
}

/// α for one sentence as tape values.
#[derive(Clone, Copy, Debug)]
pub enum AlphaVar {
    Fixed(f64),
    /// `1 × 1`
    Sample(Var),
    /// `1 × L`
    Element(Var),
}

/// Source and target taggers, the relevance model and the fusion weights,
/// all stored in one parameter set.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: TrainConfig,
    pub params: ParamSet,
    pub vocab: Vocabulary,
    pub scheme: TagScheme,
    pub source: Tagger,
    pub target: Tagger,
    pub relevance: RelevanceModel,
}

impl Model {
    pub fn new(config: &TrainConfig, vocab: Vocabulary, scheme: TagScheme, rng: &mut dyn RngCore) -> Result<Self> {
        config.validate()?;
        let dims = TaggerDims {
            vocab: vocab.len(),
            embed: config.embed_dim,
            hidden: config.hidden_dim,
            tags: scheme.len(),
        };
        let (src_emb, tgt_emb) = if config.share_embedding {
            (SHARED_EMBEDDING, SHARED_EMBEDDING)
        } else {
            ("src.emb", "tgt.emb")
        };
        let source = Tagger::new("src", src_emb, dims);
        let target = Tagger::new("tgt", tgt_emb, dims);
        let relevance = RelevanceModel::new(RelevanceConfig {
            repr: dims.repr(),
            mode: config.query,
            capsules: config.capsules,
            clf_hidden: config.clf_hidden,
        })?;
        let mut params = ParamSet::new();
        Tagger::init_embedding(&mut params, src_emb, dims.vocab, dims.embed, rng)?;
        if !config.share_embedding {
            Tagger::init_embedding(&mut params, tgt_emb, dims.vocab, dims.embed, rng)?;
        }
        source.init_params(&mut params, rng)?;
        target.init_params(&mut params, rng)?;
        relevance.init_params(&mut params, rng)?;
        config.alpha.init_params(&mut params)?;
        Ok(Model {
            config: config.clone(),
            params,
            vocab,
            scheme,
            source,
            target,
            relevance,
        })
    }

    pub fn tagger(&self, side: Side) -> &Tagger {
        match side {
            Side::Source => &self.source,
            Side::Target => &self.target,
        }
    }

    pub fn is_source_private(name: &str) -> bool {
        name.starts_with("src.")
    }

    pub fn is_target_private(name: &str) -> bool {
        name.starts_with("tgt.")
    }

    /// Relevance or fusion parameter used by the configured modes.
    pub fn is_active_shared(&self, name: &str) -> bool {
        self.relevance.is_active_param(name) || self.config.alpha.is_active_param(name)
    }

    /// Copies every source tagger parameter (and a private embedding) onto
    /// the target tagger.
    pub fn copy_source_to_target(&mut self) -> Result<()> {
        for name in self.source.param_names() {
            let dst = name.replacen("src.", "tgt.", 1);
            self.params.copy_value(&name, &dst)?;
        }
        if !self.config.share_embedding {
            self.params.copy_value("src.emb", "tgt.emb")?;
        }
        Ok(())
    }

    pub fn encode_sentences(&self, corpus: &Corpus) -> Vec<Vec<usize>> {
        corpus
            .sentences
            .iter()
            .map(|s| self.vocab.encode(&s.tokens))
            .collect()
    }

    /// Viterbi tags for every sentence.
    pub fn decode_all(&self, side: Side, sentences: &[Vec<usize>]) -> Result<Vec<Vec<usize>>> {
        let t = self.tagger(side);
        sentences.iter().map(|s| t.decode(&self.params, s)).collect()
    }

    /// α for the sentence whose target-side states are `h`.
    pub fn alpha_var(&self, tape: &mut Tape, h: Var) -> Result<AlphaVar> {
        let a = &self.config.alpha;
        if a.mode == AlphaMode::Fixed {
            return Ok(AlphaVar::Fixed(a.fixed));
        }
        let rel = &self.relevance;
        match a.mode {
            AlphaMode::Element => {
                let q = rel.query(tape, h)?;
                let w = rel.elem_relevance(tape, q, h)?;
                Ok(AlphaVar::Element(fusion::alpha_elem(tape, w)?))
            }
            _ => {
                let v = rel.forward(tape, h, None)?;
                let ws = relevance::w_samp(tape, v.log_probs)?;
                let s = fusion::alpha_sample(tape, ws)?;
                if a.mode == AlphaMode::Sample {
                    Ok(AlphaVar::Sample(s))
                } else {
                    let e = fusion::alpha_elem(tape, v.w_elem)?;
                    Ok(AlphaVar::Element(fusion::alpha_multi(tape, s, e)?))
                }
            }
        }
    }

    /// Raw element relevance on the target side for every sentence.
    pub fn element_scores(&self, sentences: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        sentences
            .iter()
            .map(|s| {
                let mut tape = Tape::new(&self.params);
                let h = self.target.encode(&mut tape, s, None)?;
                let q = self.relevance.query(&mut tape, h)?;
                let w = self.relevance.elem_relevance(&mut tape, q, h)?;
                Ok(tape.value(w).data().to_vec())
            })
            .collect()
    }

    /// Per-token relevance and α on the target side.
    pub fn relevance_rows(&self, corpus: &Corpus) -> Result<Vec<RelevanceRow>> {
        let mut rows = Vec::new();
        for (i, s) in corpus.sentences.iter().enumerate() {
            let ids = self.vocab.encode(&s.tokens);
            let mut tape = Tape::new(&self.params);
            let h = self.target.encode(&mut tape, &ids, None)?;
            let v = self.relevance.forward(&mut tape, h, None)?;
            let alpha = match self.alpha_var(&mut tape, h)? {
                AlphaVar::Fixed(a) => vec![a; ids.len()],
                AlphaVar::Sample(a) => vec![tape.value(a).item(); ids.len()],
                AlphaVar::Element(a) => tape.value(a).data().to_vec(),
            };
            let w = tape.value(v.w_elem).data();
            let wh = tape.value(v.w_hat).data();
            for (j, tok) in s.tokens.iter().enumerate() {
                rows.push(RelevanceRow {
                    sentence: i,
                    position: j,
                    token: tok.clone(),
                    w_elem: w[j],
                    w_hat: wh[j],
                    alpha: alpha[j],
                });
            }
        }
        Ok(rows)
    }

    /// Checks that `corpus` only uses tags of this model's scheme.
    pub fn check_corpus(&self, corpus: &Corpus) -> Result<()> {
        corpus.validate(&self.scheme).map_err(|e| {
            Error::Data(format!("corpus does not match the {} scheme: {e}", self.scheme.spec()))
        })
    }
}
