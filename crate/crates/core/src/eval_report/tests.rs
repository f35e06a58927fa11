use std::collections::BTreeSet;

use proptest::prelude::*;

use super::*;
use crate::data::{Segment, TagScheme, TaggedSentence};

fn bio() -> TagScheme {
    TagScheme::bio(&["PER", "LOC"]).unwrap()
}

fn tags(s: &TagScheme, t: &[&str]) -> Vec<usize> {
    t.iter().map(|x| s.id(x).unwrap()).collect()
}

#[test]
fn identical_prediction_is_perfect() {
    let s = bio();
    let g = vec![tags(&s, &["B-PER", "I-PER", "O", "B-LOC"])];
    let f = span_f1(&g, &g, &s).unwrap();
    assert_eq!((f.overall.precision, f.overall.recall, f.overall.f1), (1.0, 1.0, 1.0));
    assert_eq!(f.per_type["LOC"].f1, 1.0);
}

#[test]
fn no_predicted_spans() {
    let s = bio();
    let g = vec![tags(&s, &["B-PER", "O"])];
    let p = vec![tags(&s, &["O", "O"])];
    let f = span_f1(&g, &p, &s).unwrap();
    assert_eq!((f.overall.precision, f.overall.recall, f.overall.f1), (0.0, 0.0, 0.0));
}

#[test]
fn half_right_spans() {
    let s = bio();
    let g = vec![tags(&s, &["B-PER", "I-PER", "O", "B-LOC", "I-LOC"])];
    let p = vec![tags(&s, &["B-PER", "I-PER", "O", "B-LOC", "O"])];
    let f = span_f1(&g, &p, &s).unwrap();
    assert_eq!((f.overall.precision, f.overall.recall, f.overall.f1), (0.5, 0.5, 0.5));
    assert_eq!(f.per_type["PER"].f1, 1.0);
    assert_eq!(f.per_type["LOC"].f1, 0.0);
}

#[test]
fn length_mismatch_is_an_error() {
    let s = bio();
    assert!(span_f1(&[vec![0, 0]], &[vec![0]], &s).is_err());
    assert!(span_f1(&[vec![0]], &[], &s).is_err());
    assert!(token_accuracy(&[vec![0, 0]], &[vec![0]]).is_err());
}

fn words(tokens: &[&str], t: &[&str]) -> TaggedSentence {
    let s = TagScheme::bmes();
    TaggedSentence {
        tokens: tokens.iter().map(|x| x.to_string()).collect(),
        tags: tags(&s, t),
    }
}

fn seg(surface: &str) -> Segment {
    Segment {
        surface: surface.into(),
        label: String::new(),
    }
}

#[test]
fn oov_recall_cases() {
    let s = TagScheme::bmes();
    // words: "a b" | "c" | "d e" | "f"
    let gold = vec![words(&["a", "b", "c", "d", "e", "f"], &["B", "E", "S", "B", "E", "S"])];
    let oov: BTreeSet<Segment> = ["a b", "c", "d e"].into_iter().map(seg).collect();
    let all = oov_recall(&gold, &[gold[0].tags.clone()], &oov, &s).unwrap();
    assert_eq!(all, Some(1.0));
    let none = tags(&s, &["S", "S", "B", "E", "B", "E"]);
    assert_eq!(oov_recall(&gold, &[none], &oov, &s).unwrap(), Some(0.0));
    // "a b" and "c" recovered, "d e" split
    let two = tags(&s, &["B", "E", "S", "S", "S", "S"]);
    let r = oov_recall(&gold, &[two], &oov, &s).unwrap().unwrap();
    assert!((r - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(oov_recall(&gold, &[gold[0].tags.clone()], &BTreeSet::new(), &s).unwrap(), None);
}

#[test]
fn partition_rules() {
    let t = relevance_threshold(&[vec![1.0], vec![3.0]]).unwrap();
    assert_eq!(t, 2.0);
    assert_eq!(
        partition(t, &[vec![1.0, 2.0, 3.0]]),
        vec![vec![Strength::Weak, Strength::Strong, Strength::Strong]]
    );
    let t = relevance_threshold(&[vec![0.7, 0.7]]).unwrap();
    assert!(partition(t, &[vec![0.7, 0.7]])[0].iter().all(|&c| c == Strength::Strong));
    assert!(relevance_threshold(&[vec![]]).is_err());
}

#[test]
fn empty_class_is_undefined() {
    let s = TagScheme::bmes();
    let g = vec![vec![3, 3]];
    let m = class_metrics(&g, &g, &[vec![Strength::Strong; 2]], &s).unwrap();
    assert_eq!(m.weak, None);
    assert_eq!(m.strong.unwrap().accuracy, 1.0);
    assert_eq!(m.strong.unwrap().tag_f1, None);
    let mut rep = MetricsReport::default();
    rep.add_classes(&m, Some(0.5));
    let csv = rep.to_csv();
    assert!(csv.contains(&format!("token_accuracy,{UNDEFINED},weak")));
    assert!(csv.starts_with("metric,value,class\n"));
    assert_eq!(rep.get("token_accuracy", "strong"), Some(Some(1.0)));
}

#[test]
fn bio_class_tag_f1() {
    let s = bio();
    let g = vec![tags(&s, &["B-PER", "O", "B-LOC", "O"])];
    let p = vec![tags(&s, &["B-PER", "B-LOC", "O", "O"])];
    let c = vec![vec![Strength::Strong, Strength::Strong, Strength::Weak, Strength::Weak]];
    let m = class_metrics(&g, &p, &c, &s).unwrap();
    // strong: gold {B-PER}, pred {B-PER, B-LOC}: P=1/2, R=1
    assert!((m.strong.unwrap().tag_f1.unwrap() - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(m.weak.unwrap().tag_f1, Some(0.0));
    assert_eq!(m.weak.unwrap().accuracy, 0.5);
}

#[test]
fn tsv_layout() {
    let rows: Vec<RelevanceRow> = (0..3)
        .map(|j| RelevanceRow {
            sentence: 0,
            position: j,
            token: format!("x{j}"),
            w_elem: j as f64 * 0.5,
            w_hat: 1.0 / 3.0,
            alpha: 0.25,
        })
        .collect();
    let text = format_relevance_tsv(&rows);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], "sentence_id\tposition\ttoken\tw_elem\tw_hat\talpha");
    assert_eq!(lines[2], "0\t1\tx1\t0.5\t0.3333333333333333\t0.25");
    let total: f64 = lines[1..]
        .iter()
        .map(|l| l.split('\t').nth(4).unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-9);
}

fn random_tags(raw: &[(usize, bool)], len: usize) -> (Vec<Vec<usize>>, Vec<Vec<usize>>, Vec<Vec<Strength>>) {
    let mut g = Vec::new();
    let mut p = Vec::new();
    let mut c = Vec::new();
    for chunk in raw.chunks(len) {
        g.push(chunk.iter().map(|x| x.0 % 5).collect());
        p.push(chunk.iter().map(|x| (x.0 / 5) % 5).collect());
        c.push(
            chunk
                .iter()
                .map(|x| if x.1 { Strength::Strong } else { Strength::Weak })
                .collect(),
        );
    }
    (g, p, c)
}

proptest! {
    #[test]
    fn class_accuracy_micro_averages(raw in prop::collection::vec((0usize..25, any::<bool>()), 1..80), len in 1usize..7) {
        let (g, p, c) = random_tags(&raw, len);
        let s = bio();
        let m = class_metrics(&g, &p, &c, &s).unwrap();
        let overall = token_accuracy(&g, &p).unwrap();
        let n: usize = g.iter().map(Vec::len).sum();
        let part = |x: Option<ClassScore>| x.map_or(0.0, |s| s.accuracy * s.tokens as f64);
        let combined = (part(m.strong) + part(m.weak)) / n as f64;
        prop_assert!((combined - overall).abs() < 1e-12);
    }

    #[test]
    fn f1_ignores_sentence_order(raw in prop::collection::vec((0usize..25, any::<bool>()), 1..80), len in 1usize..7, rot in 0usize..20) {
        let (g, p, _) = random_tags(&raw, len);
        let s = bio();
        let a = span_f1(&g, &p, &s).unwrap();
        let k = rot % g.len();
        let mut g2 = g.clone();
        let mut p2 = p.clone();
        g2.rotate_left(k);
        p2.rotate_left(k);
        g2.reverse();
        p2.reverse();
        prop_assert_eq!(a, span_f1(&g2, &p2, &s).unwrap());
    }
}
