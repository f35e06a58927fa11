use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::scheme::TagScheme;
use crate::error::{Error, Result};
use crate::seq_model::Vocabulary;

/// Domain label; the classifier's first logit is the source class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Source,
    Target,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaggedSentence {
    pub tokens: Vec<String>,
    /// Tag ids in the corpus scheme.
    pub tags: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub sentences: Vec<TaggedSentence>,
    pub domain: Domain,
    pub split: Split,
}

impl Corpus {
    pub fn new(domain: Domain, split: Split) -> Self {
        Corpus {
            sentences: Vec::new(),
            domain,
            split,
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(|s| s.tokens.len()).sum()
    }

    /// Checks every tag id against `scheme` and that no sentence is empty.
    pub fn validate(&self, scheme: &TagScheme) -> Result<()> {
        for (i, s) in self.sentences.iter().enumerate() {
            if s.tokens.is_empty() || s.tokens.len() != s.tags.len() {
                return Err(Error::Data(format!("sentence {i} is empty or misaligned")));
            }
            if let Some(&t) = s.tags.iter().find(|&&t| t >= scheme.len()) {
                return Err(Error::Data(format!(
                    "sentence {i} has tag id {t} outside the {} scheme",
                    scheme.kind()
                )));
            }
        }
        Ok(())
    }
}

/// Illegal tag transition found while loading.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransitionWarning {
    pub line: usize,
    pub message: String,
}

/// Parses column text: `token ... tag` per line, blank lines between
/// sentences. `origin` names the source in error messages.
pub fn parse_column(
    text: &str,
    origin: &Path,
    scheme: &TagScheme,
    domain: Domain,
    split: Split,
) -> Result<(Corpus, Vec<TransitionWarning>)> {
    let mut corpus = Corpus::new(domain, split);
    let mut warnings = Vec::new();
    let mut cur = TaggedSentence {
        tokens: Vec::new(),
        tags: Vec::new(),
    };
    let mut last_line = 0;
    let finish = |cur: &mut TaggedSentence, corpus: &mut Corpus, warnings: &mut Vec<TransitionWarning>, line: usize| {
        if cur.tokens.is_empty() {
            return;
        }
        if let Some(&t) = cur.tags.last() {
            if !scheme.allowed_end(t) {
                warnings.push(TransitionWarning {
                    line,
                    message: format!("sentence ends on `{}`", scheme.label(t)),
                });
            }
        }
        corpus.sentences.push(std::mem::replace(
            cur,
            TaggedSentence {
                tokens: Vec::new(),
                tags: Vec::new(),
            },
        ));
    };
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim_end_matches('\r');
        if l.trim().is_empty() {
            finish(&mut cur, &mut corpus, &mut warnings, line - 1);
            continue;
        }
        last_line = line;
        let fields: Vec<&str> = l.split_whitespace().collect();
        if fields.len() < 2 {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line,
                msg: "expected a token and a tag".into(),
            });
        }
        let label = fields[fields.len() - 1];
        let tag = scheme.id(label).ok_or_else(|| Error::Parse {
            path: origin.to_path_buf(),
            line,
            msg: format!("unknown tag `{label}` for the {} scheme", scheme.kind()),
        })?;
        if !scheme.allowed(cur.tags.last().copied(), tag) {
            let prev = cur.tags.last().map_or("<start>", |&p| scheme.label(p));
            warnings.push(TransitionWarning {
                line,
                message: format!("illegal transition `{prev}` -> `{label}`"),
            });
        }
        cur.tokens.push(fields[0].to_string());
        cur.tags.push(tag);
    }
    finish(&mut cur, &mut corpus, &mut warnings, last_line);
    if corpus.is_empty() {
        return Err(Error::Data(format!("{}: no sentences", origin.display())));
    }
    Ok((corpus, warnings))
}

pub fn load_column_corpus(
    path: &Path,
    scheme: &TagScheme,
    domain: Domain,
    split: Split,
) -> Result<(Corpus, Vec<TransitionWarning>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_column(&text, path, scheme, domain, split)
}

pub fn format_column(corpus: &Corpus, scheme: &TagScheme) -> String {
    let mut out = String::new();
    for s in &corpus.sentences {
        for (tok, &tag) in s.tokens.iter().zip(&s.tags) {
            let _ = writeln!(out, "{tok} {}", scheme.label(tag));
        }
        out.push('\n');
    }
    out
}

pub fn write_column_corpus(path: &Path, corpus: &Corpus, scheme: &TagScheme) -> Result<()> {
    std::fs::write(path, format_column(corpus, scheme)).map_err(|e| Error::io(path, e))
}

/// Vocabulary over all tokens of `corpora`, ordered by descending frequency
/// and then lexicographically.
pub fn build_vocab(corpora: &[&Corpus]) -> Vocabulary {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for c in corpora {
        for s in &c.sentences {
            for t in &s.tokens {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
    }
    let mut entries: Vec<(&str, usize)> = counts.into_iter().collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    Vocabulary::from_tokens(entries.into_iter().map(|(t, _)| t))
}

/// Per-token regime flags kept beside a corpus: `0` for elements drawn from
/// the source generator, `1` for target-specific ones.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RegimeLabels {
    pub flags: Vec<Vec<u8>>,
}

impl RegimeLabels {
    pub fn format(&self) -> String {
        let mut out = String::new();
        for s in &self.flags {
            for f in s {
                let _ = writeln!(out, "{f}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut flags = Vec::new();
        let mut cur = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let l = raw.trim();
            if l.is_empty() {
                if !cur.is_empty() {
                    flags.push(std::mem::take(&mut cur));
                }
                continue;
            }
            cur.push(match l {
                "0" => 0,
                "1" => 1,
                _ => {
                    return Err(Error::Parse {
                        path: origin.to_path_buf(),
                        line: i + 1,
                        msg: format!("regime flag must be 0 or 1, got `{l}`"),
                    })
                }
            });
        }
        if !cur.is_empty() {
            flags.push(cur);
        }
        Ok(RegimeLabels { flags })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.format()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Checks that the flags align token-for-token with `corpus`.
    pub fn check_aligned(&self, corpus: &Corpus) -> Result<()> {
        let ok = self.flags.len() == corpus.len()
            && self
                .flags
                .iter()
                .zip(&corpus.sentences)
                .all(|(f, s)| f.len() == s.tokens.len());
        if ok {
            Ok(())
        } else {
            Err(Error::Data("regime labels do not align with the corpus".into()))
        }
    }
}
