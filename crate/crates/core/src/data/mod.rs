//! Corpora, tag schemes, vocabularies and the synthetic two-domain generator.

mod corpus;
mod oov;
mod scheme;
mod synth;

pub use corpus::{
    build_vocab, format_column, load_column_corpus, parse_column, write_column_corpus, Corpus, Domain,
    RegimeLabels, Split, TaggedSentence, TransitionWarning,
};
pub use oov::{oov_lexicon, sentence_segments, Segment};
pub use scheme::{SchemeKind, Span, TagScheme};
pub use synth::{synth_generate, synth_tables, Hmm, SynthConfig, SynthOutput, SynthTables};
