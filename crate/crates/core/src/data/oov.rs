use std::collections::BTreeSet;

use super::corpus::{Corpus, TaggedSentence};
use super::scheme::{SchemeKind, TagScheme};
use crate::error::{Error, Result};

/// A gold segment identified by its surface form and label.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Segment {
    /// Tokens of the span joined by single spaces.
    pub surface: String,
    pub label: String,
}

fn check_scheme(scheme: &TagScheme) -> Result<()> {
    if scheme.kind() == SchemeKind::Plain {
        return Err(Error::Config(
            "OOV recall is undefined for the plain scheme".into(),
        ));
    }
    Ok(())
}

/// Segments of one tagged sentence.
pub fn sentence_segments(sentence: &TaggedSentence, scheme: &TagScheme) -> Vec<Segment> {
    scheme
        .spans(&sentence.tags)
        .into_iter()
        .map(|sp| Segment {
            surface: sentence.tokens[sp.start..sp.end].join(" "),
            label: sp.label,
        })
        .collect()
}

/// Gold segments of `test` that occur in none of the `train` corpora.
pub fn oov_lexicon(train: &[&Corpus], test: &Corpus, scheme: &TagScheme) -> Result<BTreeSet<Segment>> {
    check_scheme(scheme)?;
    let mut known = BTreeSet::new();
    for c in train {
        for s in &c.sentences {
            known.extend(sentence_segments(s, scheme));
        }
    }
    let mut oov = BTreeSet::new();
    for s in &test.sentences {
        for seg in sentence_segments(s, scheme) {
            if !known.contains(&seg) {
                oov.insert(seg);
            }
        }
    }
    Ok(oov)
}
