//! Element- and sample-level domain relevance.
//!
//! A query `q` (either a trainable vector or a capsule encoding of the
//! sentence) scores each position by `q B h_j`. The softmax of those scores
//! pools the sentence into `r`, which a two-class classifier maps to the
//! probability that the sentence comes from the source domain.

mod capsule;

use rand::RngCore;

pub use capsule::{capsule_encode, route, CapsuleConfig, Routing};

pub use crate::data::Domain;

use crate::error::{Error, Result};
use crate::numerics::{dropout_mask, softmax, Array, ParamSet, Tape, Var};

pub const Q: &str = "rel.q";
pub const B: &str = "rel.B";
pub const CLF_W1: &str = "rel.clf.w1";
pub const CLF_B1: &str = "rel.clf.b1";
pub const CLF_W2: &str = "rel.clf.w2";
pub const CLF_B2: &str = "rel.clf.b2";

/// Every relevance parameter name starts with this prefix.
pub const PREFIX: &str = "rel.";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QueryMode {
    /// One trainable query shared by every sentence.
    DomainQ,
    /// Query built from the sentence by the capsule encoder.
    SampleQ,
}

impl std::str::FromStr for QueryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "domain-q" => Ok(QueryMode::DomainQ),
            "sample-q" => Ok(QueryMode::SampleQ),
            _ => Err(Error::Config(format!(
                "unknown query mode `{s}` (expected domain-q or sample-q)"
            ))),
        }
    }
}

impl std::fmt::Display for QueryMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            QueryMode::DomainQ => "domain-q",
            QueryMode::SampleQ => "sample-q",
        })
    }
}

fn class(d: Domain) -> usize {
    match d {
        Domain::Source => 0,
        Domain::Target => 1,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelevanceConfig {
    /// Width of the hidden states, `2d_h`.
    pub repr: usize,
    pub mode: QueryMode,
    pub capsules: CapsuleConfig,
    pub clf_hidden: usize,
}

/// Tape handles for one sentence.
#[derive(Clone, Copy, Debug)]
pub struct RelevanceVars {
    /// Raw scores, `1 × L`.
    pub w_elem: Var,
    /// Softmax of `w_elem`, `1 × L`.
    pub w_hat: Var,
    /// Pooled representation, `1 × 2d_h`.
    pub r: Var,
    /// Class log-probabilities, `1 × 2` (source first).
    pub log_probs: Var,
}

/// Detached relevance values for one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct RelevanceOutput {
    pub w_elem: Vec<f64>,
    pub w_hat: Vec<f64>,
    pub r: Vec<f64>,
    pub w_samp: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelevanceModel {
    cfg: RelevanceConfig,
}

impl RelevanceModel {
    pub fn new(cfg: RelevanceConfig) -> Result<Self> {
        if cfg.mode == QueryMode::SampleQ {
            cfg.capsules.validate(cfg.repr)?;
        }
        if cfg.clf_hidden == 0 {
            return Err(Error::Config("classifier hidden size must be positive".into()));
        }
        Ok(RelevanceModel { cfg })
    }

    pub fn config(&self) -> &RelevanceConfig {
        &self.cfg
    }

    /// Registers the parameters of both query modes plus `B` and the
    /// classifier.
    pub fn init_params(&self, params: &mut ParamSet, rng: &mut dyn RngCore) -> Result<()> {
        let d = self.cfg.repr;
        let s = 1.0 / (d as f64).sqrt();
        params.insert_uniform(Q, &[1, d], s, rng)?;
        params.insert_uniform(B, &[d, d], s, rng)?;
        if d % self.cfg.capsules.dim == 0 {
            self.cfg.capsules.init_params(params, d, rng)?;
        }
        let hd = self.cfg.clf_hidden;
        params.insert_uniform(CLF_W1, &[d, hd], (6.0 / (d + hd) as f64).sqrt(), rng)?;
        params.insert(CLF_B1, Array::zeros(&[1, hd]))?;
        params.insert_uniform(CLF_W2, &[hd, 2], (6.0 / (hd + 2) as f64).sqrt(), rng)?;
        params.insert(CLF_B2, Array::zeros(&[1, 2]))?;
        Ok(())
    }

    /// Whether `name` is a relevance parameter used by the active query mode.
    pub fn is_active_param(&self, name: &str) -> bool {
        if !name.starts_with(PREFIX) {
            return false;
        }
        match self.cfg.mode {
            QueryMode::DomainQ => !name.starts_with("rel.caps."),
            QueryMode::SampleQ => name != Q,
        }
    }

    /// Query vector `1 × 2d_h` for the sentence with states `h`.
    pub fn query(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        match self.cfg.mode {
            QueryMode::DomainQ => tape.param_named(Q),
            QueryMode::SampleQ => capsule_encode(tape, h, &self.cfg.capsules),
        }
    }

    /// Raw scores `q B h_jᵀ` as a `1 × L` row.
    pub fn elem_relevance(&self, tape: &mut Tape, q: Var, h: Var) -> Result<Var> {
        let b = tape.param_named(B)?;
        elem_relevance(tape, q, b, h)
    }

    /// Class log-probabilities for a pooled representation.
    pub fn classify(
        &self,
        tape: &mut Tape,
        r: Var,
        dropout: Option<(f64, &mut dyn RngCore)>,
    ) -> Result<Var> {
        let w1 = tape.param_named(CLF_W1)?;
        let b1 = tape.param_named(CLF_B1)?;
        let w2 = tape.param_named(CLF_W2)?;
        let b2 = tape.param_named(CLF_B2)?;
        let z = tape.matmul(r, w1)?;
        let z = tape.add(z, b1)?;
        let mut a = tape.tanh(z);
        if let Some((rate, rng)) = dropout {
            if rate > 0.0 {
                let mask = dropout_mask(rng, self.cfg.clf_hidden, rate);
                a = tape.dropout(a, mask)?;
            }
        }
        let o = tape.matmul(a, w2)?;
        let o = tape.add(o, b2)?;
        Ok(tape.log_softmax(o))
    }

    /// Full relevance pass for one sentence's states `h` (`L × 2d_h`).
    pub fn forward(
        &self,
        tape: &mut Tape,
        h: Var,
        dropout: Option<(f64, &mut dyn RngCore)>,
    ) -> Result<RelevanceVars> {
        let cols = tape.value(h).cols();
        if cols != self.cfg.repr {
            return Err(Error::shape(
                "relevance",
                format!("hidden width {cols}, expected {}", self.cfg.repr),
            ));
        }
        let q = self.query(tape, h)?;
        let w_elem = self.elem_relevance(tape, q, h)?;
        let (w_hat, r) = sample_repr(tape, w_elem, h)?;
        let log_probs = self.classify(tape, r, dropout)?;
        Ok(RelevanceVars {
            w_elem,
            w_hat,
            r,
            log_probs,
        })
    }

    /// Dropout-free relevance values for a detached `L × 2d_h` array.
    pub fn infer(&self, params: &ParamSet, h: &Array) -> Result<RelevanceOutput> {
        let mut tape = Tape::new(params);
        let hv = tape.constant(h.clone());
        let v = self.forward(&mut tape, hv, None)?;
        Ok(RelevanceOutput {
            w_elem: tape.value(v.w_elem).data().to_vec(),
            w_hat: tape.value(v.w_hat).data().to_vec(),
            r: tape.value(v.r).data().to_vec(),
            w_samp: tape.value(v.log_probs).data()[0].exp(),
        })
    }
}

/// `q B h_jᵀ` for every row of `h`, as a `1 × L` row.
pub fn elem_relevance(tape: &mut Tape, q: Var, b: Var, h: Var) -> Result<Var> {
    let qb = tape.matmul(q, b)?;
    let ht = tape.transpose(h);
    tape.matmul(qb, ht)
}

/// Softmax-normalised weights and the weighted sum of rows of `h`.
pub fn sample_repr(tape: &mut Tape, w_elem: Var, h: Var) -> Result<(Var, Var)> {
    let w_hat = tape.softmax(w_elem);
    let r = tape.matmul(w_hat, h)?;
    Ok((w_hat, r))
}

/// Probability of the source class, `1 × 1`.
pub fn w_samp(tape: &mut Tape, log_probs: Var) -> Result<Var> {
    let lp = tape.slice(log_probs, 1, 0, 1)?;
    Ok(tape.exp(lp))
}

/// Mean two-class cross entropy over sentences.
pub fn domain_classification_loss(
    tape: &mut Tape,
    log_probs: &[Var],
    labels: &[Domain],
) -> Result<Var> {
    if log_probs.is_empty() || log_probs.len() != labels.len() {
        return Err(Error::shape(
            "domain_classification_loss",
            format!("{} predictions for {} labels", log_probs.len(), labels.len()),
        ));
    }
    let mut picked = Vec::with_capacity(labels.len());
    for (&lp, &d) in log_probs.iter().zip(labels) {
        let c = class(d);
        picked.push(tape.slice(lp, 1, c, c + 1)?);
    }
    let all = tape.concat(&picked, 0)?;
    let m = tape.mean(all);
    Ok(tape.scale(m, -1.0))
}

/// Raw scores for a padded batch `[b, L_max, 2d_h]` with a fixed query and
/// `B`: real positions get `q B h_j`, padding gets `-inf`.
pub fn elem_relevance_padded(
    q: &[f64],
    b: &Array,
    states: &Array,
    lengths: &[usize],
) -> Result<Array> {
    let sh = states.shape();
    if sh.len() != 3 || sh[0] != lengths.len() || q.len() != sh[2] || b.rows() != sh[2] {
        return Err(Error::shape(
            "elem_relevance_padded",
            format!("states {sh:?}, q {}, B {:?}", q.len(), b.shape()),
        ));
    }
    let (n, lmax, d) = (sh[0], sh[1], sh[2]);
    let qb = Array::row(q.to_vec()).matmul(b)?;
    let mut out = vec![f64::NEG_INFINITY; n * lmax];
    for (i, &len) in lengths.iter().enumerate() {
        for j in 0..len.min(lmax) {
            let hj = &states.data()[(i * lmax + j) * d..(i * lmax + j + 1) * d];
            out[i * lmax + j] = qb.data().iter().zip(hj).map(|(a, b)| a * b).sum();
        }
    }
    Array::new(vec![n, lmax], out)
}

/// Row-wise softmax of padded scores; `-inf` entries receive exactly zero.
pub fn masked_softmax(scores: &Array) -> Array {
    let mut out = Vec::with_capacity(scores.len());
    for r in 0..scores.rows() {
        let row = scores.row_slice(r);
        let real: Vec<f64> = row.iter().copied().filter(|v| v.is_finite()).collect();
        let p = softmax(&real);
        let mut it = p.into_iter();
        out.extend(row.iter().map(|v| if v.is_finite() { it.next().unwrap() } else { 0.0 }));
    }
    Array::new(scores.shape().to_vec(), out).expect("same shape")
}
