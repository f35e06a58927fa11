use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Method, TrainConfig};
use super::history::{EarlyStopper, EpisodeRecord, StopDecision};
use super::model::{AlphaVar, Model, Side};
use crate::data::{build_vocab, Corpus, Domain, SchemeKind, TagScheme};
use crate::error::{Error, Result};
use crate::eval_report::{span_f1, token_accuracy};
use crate::fusion::{self, AlphaMode, Alphas, TargetItem};
use crate::numerics::{sgd_update, Array, Gradients, ParamSet, Tape, Var};
use crate::relevance::domain_classification_loss;
use crate::seq_model::Vocabulary;

/// Tolerance on soft-target row sums.
pub const CACHE_ROW_TOL: f64 = 1e-10;

/// Work done so far.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counters {
    /// SGD applications whose trainable set included source-tagger weights.
    pub source_updates: usize,
    pub target_updates: usize,
    /// Sentences run through the source tagger.
    pub source_forward: usize,
    pub cache_refreshes: usize,
}

/// Source distributions for every target training sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftTargetCache {
    pub episode: usize,
    pub dists: Vec<Array>,
}

impl SoftTargetCache {
    pub fn fingerprint(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for d in &self.dists {
            d.shape().hash(&mut h);
            for v in d.data() {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

/// Means over one target pass.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TargetStats {
    pub loss: f64,
    pub seq: f64,
    pub kd: f64,
    pub mean_alpha: Option<f64>,
}

type Labeled = (Vec<usize>, Vec<usize>);

fn index_corpus(vocab: &Vocabulary, scheme: &TagScheme, c: &Corpus) -> Result<Vec<Labeled>> {
    c.validate(scheme).map_err(|e| {
        Error::Data(format!("corpus does not match the {} scheme: {e}", scheme.spec()))
    })?;
    Ok(c.sentences
        .iter()
        .map(|s| (vocab.encode(&s.tokens), s.tags.clone()))
        .collect())
}

/// Dev score: span F1, or token accuracy for per-token label sets.
pub fn dev_score(scheme: &TagScheme, gold: &[Vec<usize>], pred: &[Vec<usize>]) -> Result<f64> {
    if scheme.kind() == SchemeKind::Plain {
        token_accuracy(gold, pred)
    } else {
        Ok(span_f1(gold, pred, scheme)?.overall.f1)
    }
}

fn diverged(episode: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Numeric(detail) => Error::Diverged { episode, detail },
        other => other,
    }
}

fn backprop<T>(
    model: &Model,
    build: impl FnOnce(&mut Tape) -> Result<(Var, T)>,
) -> Result<(f64, Gradients, T)> {
    let mut tape = Tape::new(&model.params);
    let (loss, extra) = build(&mut tape)?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    Ok((value, grads, extra))
}

/// Alternating source/target training state.
pub struct Trainer {
    pub model: Model,
    cfg: TrainConfig,
    source: Vec<Labeled>,
    target: Vec<Labeled>,
    dev: Vec<Labeled>,
    rng: ChaCha8Rng,
    pub counters: Counters,
    pub cache: Option<SoftTargetCache>,
    episode: usize,
}

/// Result of [`Trainer::train`].
pub struct TrainOutcome {
    /// Parameters restored to the best dev episode.
    pub model: Model,
    pub history: Vec<EpisodeRecord>,
    pub best_episode: usize,
    pub best_score: f64,
    pub counters: Counters,
}

impl Trainer {
    /// The vocabulary covers source and target training tokens.
    pub fn new(
        config: &TrainConfig,
        scheme: TagScheme,
        source: &Corpus,
        target_train: &Corpus,
        target_dev: &Corpus,
    ) -> Result<Self> {
        let vocab = build_vocab(&[source, target_train]);
        Self::with_vocab(config, scheme, vocab, source, target_train, target_dev)
    }

    pub fn with_vocab(
        config: &TrainConfig,
        scheme: TagScheme,
        vocab: Vocabulary,
        source: &Corpus,
        target_train: &Corpus,
        target_dev: &Corpus,
    ) -> Result<Self> {
        let cfg = config.effective();
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let source = index_corpus(&vocab, &scheme, source)?;
        let target = index_corpus(&vocab, &scheme, target_train)?;
        let dev = index_corpus(&vocab, &scheme, target_dev)?;
        if cfg.method != Method::SourceOnly && target.is_empty() {
            return Err(Error::Data("target training corpus is empty".into()));
        }
        if dev.is_empty() {
            return Err(Error::Data("target dev corpus is empty".into()));
        }
        let model = Model::new(&cfg, vocab, scheme, &mut rng)?;
        Ok(Trainer {
            model,
            cfg,
            source,
            target,
            dev,
            rng,
            counters: Counters::default(),
            cache: None,
            episode: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    fn source_trainable(&self) -> impl Fn(&str) -> bool {
        let emb = self.model.source.embedding_name().to_string();
        move |n: &str| Model::is_source_private(n) || n == emb
    }

    fn sgd(&mut self, grads: &Gradients) -> Result<()> {
        sgd_update(&mut self.model.params, grads, self.cfg.lr, self.cfg.l2, self.cfg.clip)?;
        Ok(())
    }

    /// One L^S step on `batch`.
    fn source_step(&mut self, batch: &[usize]) -> Result<f64> {
        let pred = self.source_trainable();
        self.model.params.set_trainable_where(pred);
        let (model, rng, data) = (&self.model, &mut self.rng, &self.source);
        let rate = self.cfg.dropout;
        let (loss, grads, ()) = backprop(model, |tape| {
            let mut nlls = Vec::with_capacity(batch.len());
            for &i in batch {
                let (ids, tags) = &data[i];
                let h = model.source.encode(tape, ids, Some((rate, &mut *rng as &mut dyn RngCore)))?;
                let e = model.source.emissions(tape, h)?;
                nlls.push(model.source.nll(tape, e, tags)?);
            }
            Ok((fusion::source_loss(tape, &nlls)?, ()))
        })?;
        self.counters.source_forward += batch.len();
        self.sgd(&grads)?;
        self.counters.source_updates += 1;
        Ok(loss)
    }

    /// Domain classification step for the tagger on `side`.
    fn classification_step(&mut self, side: Side, batch: &[usize]) -> Result<f64> {
        let own: fn(&str) -> bool = match side {
            Side::Source => Model::is_source_private,
            Side::Target => Model::is_target_private,
        };
        let emb = self.model.tagger(side).embedding_name().to_string();
        let rel = self.model.relevance.clone();
        self.model
            .params
            .set_trainable_where(|n| own(n) || n == emb || rel.is_active_param(n));
        let (model, rng) = (&self.model, &mut self.rng);
        let (data, label) = match side {
            Side::Source => (&self.source, Domain::Source),
            Side::Target => (&self.target, Domain::Target),
        };
        let rate = self.cfg.dropout;
        let tagger = model.tagger(side);
        let (loss, grads, ()) = backprop(model, |tape| {
            let mut lps = Vec::with_capacity(batch.len());
            for &i in batch {
                let h = tagger.encode(tape, &data[i].0, Some((rate, &mut *rng as &mut dyn RngCore)))?;
                lps.push(model.relevance.forward(tape, h, Some((rate, &mut *rng as &mut dyn RngCore)))?.log_probs);
            }
            let labels = vec![label; batch.len()];
            Ok((domain_classification_loss(tape, &lps, &labels)?, ()))
        })?;
        if side == Side::Source {
            self.counters.source_forward += batch.len();
        }
        self.sgd(&grads)?;
        match side {
            Side::Source => self.counters.source_updates += 1,
            Side::Target => self.counters.target_updates += 1,
        }
        Ok(loss)
    }

    /// Pre-trains the source tagger for the configured epochs and copies it
    /// onto the target tagger. No-op when warm-up is off.
    pub fn warmup(&mut self) -> Result<()> {
        if !self.cfg.warmup {
            return Ok(());
        }
        if self.source.is_empty() {
            return Err(Error::Data("warm-up needs a non-empty source corpus".into()));
        }
        for _ in 0..self.cfg.warmup_epochs {
            let mut order: Vec<usize> = (0..self.source.len()).collect();
            order.shuffle(&mut self.rng);
            for batch in order.chunks(self.cfg.batch_size) {
                self.source_step(batch).map_err(diverged(0))?;
            }
        }
        self.model.copy_source_to_target()
    }

    /// `teach_steps` source updates on batches sampled with replacement.
    /// Returns the mean L^S, or `None` when no step ran.
    pub fn source_phase(&mut self) -> Result<Option<f64>> {
        let steps = self.cfg.teach_steps;
        if steps == 0 {
            return Ok(None);
        }
        if self.source.is_empty() {
            return Err(Error::Data("source corpus is empty but teach_steps > 0".into()));
        }
        let relevance = self.cfg.trains_relevance();
        let mut total = 0.0;
        for _ in 0..steps {
            let n = self.source.len();
            let batch: Vec<usize> = (0..self.cfg.batch_size).map(|_| self.rng.gen_range(0..n)).collect();
            total += self.source_step(&batch)?;
            if relevance {
                self.classification_step(Side::Source, &batch)?;
            }
        }
        Ok(Some(total / steps as f64))
    }

    /// Recomputes source distributions for every target training sentence.
    pub fn refresh_cache(&mut self) -> Result<()> {
        if !self.cfg.uses_kd() {
            self.cache = None;
            return Ok(());
        }
        let m = &self.model;
        let dists = self
            .target
            .iter()
            .map(|(ids, _)| {
                let d = m.source.distribution(&m.params, ids, self.cfg.distill, self.cfg.temperature)?;
                for r in 0..d.rows() {
                    let s: f64 = d.row_slice(r).iter().sum();
                    if !((s - 1.0).abs() <= CACHE_ROW_TOL) {
                        return Err(Error::Numeric(format!("soft target row sums to {s}")));
                    }
                }
                Ok(d)
            })
            .collect::<Result<Vec<_>>>()?;
        self.counters.source_forward += dists.len();
        self.counters.cache_refreshes += 1;
        self.cache = Some(SoftTargetCache {
            episode: self.episode,
            dists,
        });
        Ok(())
    }

    /// One shuffled pass over the target training set.
    pub fn target_phase(&mut self) -> Result<TargetStats> {
        let kd = self.cfg.uses_kd();
        let cache = if kd {
            let c = self
                .cache
                .take()
                .ok_or_else(|| Error::Data("soft-target cache has not been computed".into()))?;
            if c.dists.len() != self.target.len() {
                let n = c.dists.len();
                self.cache = Some(c);
                return Err(Error::Data(format!(
                    "soft-target cache holds {n} sentences, target set has {}",
                    self.target.len()
                )));
            }
            Some(c)
        } else {
            None
        };
        let result = self.target_pass(cache.as_ref());
        self.cache = cache;
        result
    }

    fn target_pass(&mut self, cache: Option<&SoftTargetCache>) -> Result<TargetStats> {
        let mut order: Vec<usize> = (0..self.target.len()).collect();
        order.shuffle(&mut self.rng);
        let learn_alpha = self.cfg.alpha.mode != AlphaMode::Fixed;
        let relevance = self.cfg.trains_relevance();
        let emb = self.model.target.embedding_name().to_string();
        let (mut loss_sum, mut seq_sum, mut kd_sum) = (0.0, 0.0, 0.0);
        let (mut alpha_sum, mut alpha_n) = (0.0, 0usize);
        let batches: Vec<Vec<usize>> = order.chunks(self.cfg.batch_size).map(<[usize]>::to_vec).collect();
        for batch in &batches {
            let rel = self.model.relevance.clone();
            let ac = self.cfg.alpha.clone();
            self.model.params.set_trainable_where(|n| {
                Model::is_target_private(n)
                    || n == emb
                    || (learn_alpha && (rel.is_active_param(n) || ac.is_active_param(n)))
            });
            let (model, rng, data) = (&self.model, &mut self.rng, &self.target);
            let cfg = &self.cfg;
            let (loss, grads, (seq, kdv, asum, an)) = backprop(model, |tape| {
                let t = &model.target;
                let mut nlls = Vec::with_capacity(batch.len());
                let mut items = Vec::new();
                let mut alphas = Vec::new();
                for &i in batch {
                    let (ids, tags) = &data[i];
                    let h = t.encode(tape, ids, Some((cfg.dropout, &mut *rng as &mut dyn RngCore)))?;
                    let e = t.emissions(tape, h)?;
                    let nll = t.nll(tape, e, tags)?;
                    nlls.push(nll);
                    if let Some(c) = cache {
                        let log_pt = t.log_distribution(tape, e, cfg.distill, cfg.temperature)?;
                        items.push(TargetItem {
                            log_pt,
                            nll,
                            p_s: &c.dists[i],
                            gold: tags,
                        });
                        alphas.push(model.alpha_var(tape, h)?);
                    }
                }
                if cache.is_none() {
                    let l = fusion::source_loss(tape, &nlls)?;
                    let v = tape.value(l).item();
                    return Ok((l, (v, 0.0, 0.0, batch.len())));
                }
                let mut asum = 0.0;
                let mut an = 0;
                for a in &alphas {
                    match *a {
                        AlphaVar::Fixed(x) => {
                            asum += x;
                            an += 1;
                        }
                        AlphaVar::Sample(v) => {
                            asum += tape.value(v).item();
                            an += 1;
                        }
                        AlphaVar::Element(v) => {
                            let d = tape.value(v).data();
                            asum += d.iter().sum::<f64>() / d.len() as f64;
                            an += 1;
                        }
                    }
                }
                let packed = match alphas[0] {
                    AlphaVar::Fixed(x) => Alphas::Fixed(x),
                    AlphaVar::Sample(_) => Alphas::Sample(
                        alphas.iter().map(|a| if let AlphaVar::Sample(v) = a { *v } else { unreachable!() }).collect(),
                    ),
                    AlphaVar::Element(_) => Alphas::Element(
                        alphas.iter().map(|a| if let AlphaVar::Element(v) = a { *v } else { unreachable!() }).collect(),
                    ),
                };
                let tl = fusion::target_loss(tape, &items, &packed)?;
                let (s, k) = (tape.value(tl.seq).item(), tape.value(tl.kd).item());
                Ok((tl.total, (s, k, asum, an)))
            })?;
            self.sgd(&grads)?;
            self.counters.target_updates += 1;
            loss_sum += loss;
            seq_sum += seq;
            kd_sum += kdv;
            alpha_sum += if cache.is_some() { asum } else { 0.0 };
            alpha_n += an;
            if relevance {
                self.classification_step(Side::Target, batch)?;
            }
        }
        let nb = batches.len() as f64;
        Ok(TargetStats {
            loss: loss_sum / nb,
            seq: seq_sum / nb,
            kd: kd_sum / nb,
            mean_alpha: (alpha_n > 0).then(|| alpha_sum / alpha_n as f64),
        })
    }

    /// Viterbi dev score of the tagger being trained.
    pub fn evaluate_dev(&self) -> Result<f64> {
        let side = if self.cfg.method == Method::SourceOnly {
            Side::Source
        } else {
            Side::Target
        };
        let sents: Vec<Vec<usize>> = self.dev.iter().map(|(s, _)| s.clone()).collect();
        let gold: Vec<Vec<usize>> = self.dev.iter().map(|(_, t)| t.clone()).collect();
        let pred = self.model.decode_all(side, &sents)?;
        dev_score(&self.model.scheme, &gold, &pred)
    }

    /// Source phase, cache refresh, target phase and dev evaluation.
    pub fn run_episode(&mut self) -> Result<EpisodeRecord> {
        self.episode += 1;
        let ep = self.episode;
        let ls = self.source_phase().map_err(diverged(ep))?;
        if self.cfg.method == Method::SourceOnly {
            return Ok(EpisodeRecord {
                episode: ep,
                loss_source: ls,
                loss_target: None,
                loss_seq: None,
                loss_kd: None,
                dev_score: self.evaluate_dev()?,
                mean_alpha: None,
            });
        }
        self.refresh_cache().map_err(diverged(ep))?;
        let t = self.target_phase().map_err(diverged(ep))?;
        let kd = self.cfg.uses_kd();
        Ok(EpisodeRecord {
            episode: ep,
            loss_source: ls,
            loss_target: Some(t.loss),
            loss_seq: Some(t.seq),
            loss_kd: kd.then_some(t.kd),
            dev_score: self.evaluate_dev()?,
            mean_alpha: t.mean_alpha,
        })
    }

    /// Trains until patience runs out or `max_episodes`, then restores the
    /// best dev parameters. Source-only runs end by copying the source
    /// tagger onto the target tagger.
    pub fn train(mut self) -> Result<TrainOutcome> {
        self.warmup()?;
        let mut stopper = EarlyStopper::new(self.cfg.patience);
        let mut history = Vec::new();
        let mut best: Option<ParamSet> = None;
        for _ in 0..self.cfg.max_episodes {
            let rec = self.run_episode()?;
            let d = stopper.update(rec.episode, rec.dev_score);
            history.push(rec);
            match d {
                StopDecision::Improved => best = Some(self.model.params.clone()),
                StopDecision::Continue => {}
                StopDecision::Stop => break,
            }
        }
        if let Some(p) = best {
            self.model.params = p;
        }
        if self.cfg.method == Method::SourceOnly {
            self.model.copy_source_to_target()?;
        }
        self.model.params.set_trainable_where(|_| true);
        Ok(TrainOutcome {
            model: self.model,
            history,
            best_episode: stopper.best_episode,
            best_score: stopper.best,
            counters: self.counters,
        })
    }
}

/// Builds a trainer and runs it to completion.
pub fn train(
    config: &TrainConfig,
    scheme: TagScheme,
    source: &Corpus,
    target_train: &Corpus,
    target_dev: &Corpus,
) -> Result<TrainOutcome> {
    Trainer::new(config, scheme, source, target_train, target_dev)?.train()
}
