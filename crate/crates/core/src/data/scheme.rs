use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SchemeKind {
    /// Word segmentation: Begin, Middle, End, Single.
    Bmes,
    /// Entity spans: `O`, `B-X`, `I-X`.
    Bio,
    /// One independent label per token.
    Plain,
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SchemeKind::Bmes => "bmes",
            SchemeKind::Bio => "bio",
            SchemeKind::Plain => "plain",
        })
    }
}

/// A labelled segment covering tokens `start..end`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    /// Entity type for BIO, the tag for PLAIN, empty for BMES words.
    pub label: String,
}

/// Tag inventory plus the structural rules of its scheme.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TagScheme {
    kind: SchemeKind,
    labels: Vec<String>,
}

const BMES: [&str; 4] = ["B", "M", "E", "S"];

impl TagScheme {
    pub fn bmes() -> Self {
        TagScheme {
            kind: SchemeKind::Bmes,
            labels: BMES.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// `O` followed by `B-t`, `I-t` for each type in order.
    pub fn bio<S: AsRef<str>>(types: &[S]) -> Result<Self> {
        if types.is_empty() {
            return Err(Error::Config("BIO scheme needs at least one entity type".into()));
        }
        let mut labels = vec!["O".to_string()];
        for t in types {
            let t = t.as_ref();
            if t.is_empty() || t.contains(char::is_whitespace) {
                return Err(Error::Config(format!("invalid entity type `{t}`")));
            }
            labels.push(format!("B-{t}"));
            labels.push(format!("I-{t}"));
        }
        Self::checked(SchemeKind::Bio, labels)
    }

    pub fn plain<S: AsRef<str>>(labels: &[S]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Config("plain scheme needs at least one label".into()));
        }
        Self::checked(SchemeKind::Plain, labels.iter().map(|s| s.as_ref().to_string()).collect())
    }

    fn checked(kind: SchemeKind, labels: Vec<String>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for l in &labels {
            if !seen.insert(l) {
                return Err(Error::Config(format!("duplicate label `{l}`")));
            }
        }
        Ok(TagScheme { kind, labels })
    }

    /// Parses `bmes`, `bio`, `bio:PER,LOC` or `plain:NN,VB,...`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (head, rest) = match spec.split_once(':') {
            Some((h, r)) => (h, Some(r)),
            None => (spec, None),
        };
        let list = |r: &str| -> Vec<String> {
            r.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
        };
        match (head, rest) {
            ("bmes", None) => Ok(Self::bmes()),
            ("bio", None) => Self::bio(&["PER", "LOC", "ORG"]),
            ("bio", Some(r)) => Self::bio(&list(r)),
            ("plain", Some(r)) => Self::plain(&list(r)),
            _ => Err(Error::Config(format!("unknown tag scheme `{spec}`"))),
        }
    }

    /// Inverse of [`TagScheme::parse`].
    pub fn spec(&self) -> String {
        match self.kind {
            SchemeKind::Bmes => "bmes".into(),
            SchemeKind::Bio => {
                let types: Vec<&str> = self.labels[1..]
                    .iter()
                    .step_by(2)
                    .map(|l| &l[2..])
                    .collect();
                format!("bio:{}", types.join(","))
            }
            SchemeKind::Plain => format!("plain:{}", self.labels.join(",")),
        }
    }

    pub fn kind(&self) -> SchemeKind {
        self.kind
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    /// Id of the outside tag for BIO.
    pub fn outside(&self) -> Option<usize> {
        match self.kind {
            SchemeKind::Bio => Some(0),
            _ => None,
        }
    }

    /// Whether `next` may follow `prev` (`None` = sentence start).
    pub fn allowed(&self, prev: Option<usize>, next: usize) -> bool {
        match self.kind {
            SchemeKind::Plain => true,
            SchemeKind::Bmes => {
                let opens = next == 0 || next == 3;
                match prev {
                    None | Some(2) | Some(3) => opens,
                    _ => !opens,
                }
            }
            SchemeKind::Bio => match self.bio_parts(next) {
                Some((false, t)) => match prev.and_then(|p| self.bio_parts(p)) {
                    Some((_, pt)) => pt == t,
                    None => false,
                },
                _ => true,
            },
        }
    }

    /// Whether a sentence may end on `last`.
    pub fn allowed_end(&self, last: usize) -> bool {
        match self.kind {
            SchemeKind::Bmes => last == 2 || last == 3,
            _ => true,
        }
    }

    /// For a BIO tag: `(is_begin, type)`, or `None` for `O`.
    fn bio_parts(&self, id: usize) -> Option<(bool, &str)> {
        let l = self.labels[id].as_str();
        if let Some(t) = l.strip_prefix("B-") {
            Some((true, t))
        } else {
            l.strip_prefix("I-").map(|t| (false, t))
        }
    }

    /// Segments a tag sequence into spans.
    ///
    /// BMES words open at `B`/`S` or after `E`/`S`, so every token belongs to
    /// exactly one word even for ill-formed input. BIO chunks follow the
    /// conlleval rules: an `I-X` after `O` or another type opens a chunk.
    pub fn spans(&self, tags: &[usize]) -> Vec<Span> {
        let mut out = Vec::new();
        match self.kind {
            SchemeKind::Plain => {
                for (i, &t) in tags.iter().enumerate() {
                    out.push(Span {
                        start: i,
                        end: i + 1,
                        label: self.labels[t].clone(),
                    });
                }
            }
            SchemeKind::Bmes => {
                let mut start = 0;
                for (i, &t) in tags.iter().enumerate() {
                    let opens = i > 0 && (t == 0 || t == 3 || tags[i - 1] == 2 || tags[i - 1] == 3);
                    if opens {
                        out.push(Span {
                            start,
                            end: i,
                            label: String::new(),
                        });
                        start = i;
                    }
                }
                if !tags.is_empty() {
                    out.push(Span {
                        start,
                        end: tags.len(),
                        label: String::new(),
                    });
                }
            }
            SchemeKind::Bio => {
                let mut open: Option<(usize, &str)> = None;
                for (i, &t) in tags.iter().enumerate() {
                    let parts = self.bio_parts(t);
                    let continues = matches!((open, parts), (Some((_, ot)), Some((false, nt))) if ot == nt);
                    if continues {
                        continue;
                    }
                    if let Some((s, ot)) = open.take() {
                        out.push(Span {
                            start: s,
                            end: i,
                            label: ot.to_string(),
                        });
                    }
                    if let Some((_, nt)) = parts {
                        open = Some((i, nt));
                    }
                }
                if let Some((s, ot)) = open {
                    out.push(Span {
                        start: s,
                        end: tags.len(),
                        label: ot.to_string(),
                    });
                }
            }
        }
        out
    }

    /// Tag sequence of length `len` for non-overlapping `spans`.
    pub fn linearize(&self, spans: &[Span], len: usize) -> Result<Vec<usize>> {
        let fill = match self.kind {
            SchemeKind::Bio => 0,
            _ => usize::MAX,
        };
        let mut tags = vec![fill; len];
        for sp in spans {
            if sp.start >= sp.end || sp.end > len || tags[sp.start..sp.end].iter().any(|&t| t != fill) {
                return Err(Error::Data(format!("bad span {}..{} for length {len}", sp.start, sp.end)));
            }
            let missing = || Error::Data(format!("label `{}` not in the {} scheme", sp.label, self.kind));
            match self.kind {
                SchemeKind::Plain => {
                    tags[sp.start] = self.id(&sp.label).ok_or_else(missing)?;
                    if sp.end - sp.start != 1 {
                        return Err(Error::Data("plain spans cover one token".into()));
                    }
                }
                SchemeKind::Bmes => {
                    if sp.end - sp.start == 1 {
                        tags[sp.start] = 3;
                    } else {
                        tags[sp.start] = 0;
                        tags[sp.start + 1..sp.end - 1].fill(1);
                        tags[sp.end - 1] = 2;
                    }
                }
                SchemeKind::Bio => {
                    let b = self.id(&format!("B-{}", sp.label)).ok_or_else(missing)?;
                    tags[sp.start] = b;
                    tags[sp.start + 1..sp.end].fill(b + 1);
                }
            }
        }
        if tags.contains(&usize::MAX) {
            return Err(Error::Data("spans do not cover the sentence".into()));
        }
        Ok(tags)
    }
}
