//! Span F1, token accuracy, OOV recall, strong/weak relevance partitions and
//! the report files built from them.

mod export;
mod metrics;

pub use export::{format_relevance_tsv, write_relevance_tsv, MetricsReport, RelevanceRow, UNDEFINED};
pub use metrics::{
    class_metrics, oov_recall, partition, relevance_threshold, span_f1, token_accuracy, ClassMetrics,
    ClassScore, Prf, SpanF1, Strength,
};

#[cfg(test)]
mod tests;
