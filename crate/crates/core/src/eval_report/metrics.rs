use std::collections::{BTreeMap, BTreeSet};

use crate::data::{sentence_segments, SchemeKind, Segment, TagScheme, TaggedSentence};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub correct: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl Prf {
    /// Precision is 0 with no predictions, recall is 0 with no gold items,
    /// and F1 is 0 when both are 0.
    pub fn from_counts(correct: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(correct, predicted);
        let recall = ratio(correct, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            precision,
            recall,
            f1,
            correct,
            predicted,
            gold,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpanF1 {
    pub overall: Prf,
    /// Per entity type (BIO only).
    pub per_type: BTreeMap<String, Prf>,
}

fn check_lengths(gold: &[Vec<usize>], pred: &[Vec<usize>]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::Data(format!(
            "{} gold sentences but {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::Data(format!(
                "sentence {i}: {} gold tags but {} predicted",
                g.len(),
                p.len()
            )));
        }
    }
    Ok(())
}

/// Exact-match span precision, recall and F1 over a set of sentences.
pub fn span_f1(gold: &[Vec<usize>], pred: &[Vec<usize>], scheme: &TagScheme) -> Result<SpanF1> {
    check_lengths(gold, pred)?;
    let mut counts: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    let (mut c, mut np, mut ng) = (0, 0, 0);
    for (g, p) in gold.iter().zip(pred) {
        let gs: BTreeSet<_> = scheme.spans(g).into_iter().collect();
        let ps: BTreeSet<_> = scheme.spans(p).into_iter().collect();
        for sp in &gs {
            counts.entry(sp.label.clone()).or_default().2 += 1;
            if ps.contains(sp) {
                counts.entry(sp.label.clone()).or_default().0 += 1;
                c += 1;
            }
        }
        for sp in &ps {
            counts.entry(sp.label.clone()).or_default().1 += 1;
        }
        np += ps.len();
        ng += gs.len();
    }
    let per_type = if scheme.kind() == SchemeKind::Bio {
        counts
            .into_iter()
            .map(|(k, (c, p, g))| (k, Prf::from_counts(c, p, g)))
            .collect()
    } else {
        BTreeMap::new()
    };
    Ok(SpanF1 {
        overall: Prf::from_counts(c, np, ng),
        per_type,
    })
}

pub fn token_accuracy(gold: &[Vec<usize>], pred: &[Vec<usize>]) -> Result<f64> {
    check_lengths(gold, pred)?;
    let (mut ok, mut n) = (0usize, 0usize);
    for (g, p) in gold.iter().zip(pred) {
        ok += g.iter().zip(p).filter(|(a, b)| a == b).count();
        n += g.len();
    }
    Ok(if n == 0 { 0.0 } else { ok as f64 / n as f64 })
}

/// Fraction of gold segments listed in `oov` that the prediction recovers
/// exactly. `None` when the test data holds no OOV segment.
pub fn oov_recall(
    gold: &[TaggedSentence],
    pred: &[Vec<usize>],
    oov: &BTreeSet<Segment>,
    scheme: &TagScheme,
) -> Result<Option<f64>> {
    let gold_tags: Vec<Vec<usize>> = gold.iter().map(|s| s.tags.clone()).collect();
    check_lengths(&gold_tags, pred)?;
    let (mut hit, mut total) = (0usize, 0usize);
    for (s, p) in gold.iter().zip(pred) {
        let predicted: BTreeSet<_> = scheme.spans(p).into_iter().collect();
        for (sp, seg) in scheme.spans(&s.tags).into_iter().zip(sentence_segments(s, scheme)) {
            if oov.contains(&seg) {
                total += 1;
                if predicted.contains(&sp) {
                    hit += 1;
                }
            }
        }
    }
    Ok((total > 0).then(|| hit as f64 / total as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strength {
    Strong,
    Weak,
}

/// Mean of all scores; the cut between strong and weak elements.
pub fn relevance_threshold(train_scores: &[Vec<f64>]) -> Result<f64> {
    let n: usize = train_scores.iter().map(Vec::len).sum();
    if n == 0 {
        return Err(Error::Data("no training positions to set a relevance threshold".into()));
    }
    Ok(train_scores.iter().flatten().sum::<f64>() / n as f64)
}

/// Scores at or above `threshold` are strong.
pub fn partition(threshold: f64, scores: &[Vec<f64>]) -> Vec<Vec<Strength>> {
    scores
        .iter()
        .map(|s| {
            s.iter()
                .map(|&w| if w >= threshold { Strength::Strong } else { Strength::Weak })
                .collect()
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassScore {
    pub tokens: usize,
    pub accuracy: f64,
    /// Token-level F1 over non-`O` tags (BIO only).
    pub tag_f1: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassMetrics {
    pub strong: Option<ClassScore>,
    pub weak: Option<ClassScore>,
}

/// Token-level metrics restricted to each class. An empty class is `None`.
pub fn class_metrics(
    gold: &[Vec<usize>],
    pred: &[Vec<usize>],
    classes: &[Vec<Strength>],
    scheme: &TagScheme,
) -> Result<ClassMetrics> {
    check_lengths(gold, pred)?;
    if classes.len() != gold.len() || classes.iter().zip(gold).any(|(c, g)| c.len() != g.len()) {
        return Err(Error::Data("class labels do not align with the sentences".into()));
    }
    let outside = scheme.outside();
    let score = |want: Strength| -> Option<ClassScore> {
        let (mut n, mut ok, mut tp, mut np, mut ng) = (0, 0, 0, 0, 0);
        for ((g, p), c) in gold.iter().zip(pred).zip(classes) {
            for ((&gt, &pt), &cl) in g.iter().zip(p).zip(c) {
                if cl != want {
                    continue;
                }
                n += 1;
                ok += (gt == pt) as usize;
                if let Some(o) = outside {
                    np += (pt != o) as usize;
                    ng += (gt != o) as usize;
                    tp += (gt == pt && gt != o) as usize;
                }
            }
        }
        (n > 0).then(|| ClassScore {
            tokens: n,
            accuracy: ok as f64 / n as f64,
            tag_f1: outside.map(|_| Prf::from_counts(tp, np, ng).f1),
        })
    };
    Ok(ClassMetrics {
        strong: score(Strength::Strong),
        weak: score(Strength::Weak),
    })
}
