//! Target-only vs basicKD vs FGKF on the synthetic two-domain corpus.
//!
//! Usage: `cargo run --release --example benchmark -- [key=value ...]`
//! where keys are trainer keys or `synth.`-prefixed generator keys, plus
//! `seeds=N`.

use std::time::Instant;

use fgkf::data::{synth_generate, RegimeLabels, SynthConfig};
use fgkf::eval_report::{class_metrics, span_f1, token_accuracy, Strength};
use fgkf::trainer::{Method, Side, TrainConfig, Trainer};

fn weak_classes(r: &RegimeLabels) -> Vec<Vec<Strength>> {
    r.flags
        .iter()
        .map(|s| s.iter().map(|&f| if f == 0 { Strength::Strong } else { Strength::Weak }).collect())
        .collect()
}

fn main() -> fgkf::Result<()> {
    let mut synth = SynthConfig::default();
    let mut base = TrainConfig::default();
    let mut seeds = 3u64;
    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').expect("key=value");
        if k == "seeds" {
            seeds = v.parse().expect("seeds");
        } else if let Some(s) = k.strip_prefix("synth.") {
            synth.set(s, v)?;
        } else {
            base.set(k, v)?;
        }
    }
    let mut methods = Vec::new();
    let mut only = base.clone();
    only.method = Method::TargetOnly;
    methods.push(("target-only", only));
    let mut kd = base.clone();
    kd.alpha.mode = fgkf::fusion::AlphaMode::Fixed;
    kd.alpha.fixed = 0.5;
    kd.warmup = false;
    methods.push(("basicKD", kd));
    methods.push(("FGKF", base.clone()));
    // per method: (test f1, weak accuracy) for each seed
    let mut results: Vec<Vec<(f64, f64)>> = vec![Vec::new(); methods.len()];
    for seed in 1..=seeds {
        synth.seed = seed;
        let d = synth_generate(&synth)?;
        let classes = weak_classes(&d.regimes_test);
        for (mi, (name, cfg)) in methods.iter().enumerate() {
            let mut cfg = cfg.clone();
            cfg.seed = seed;
            let t0 = Instant::now();
            let out = Trainer::new(&cfg, d.scheme.clone(), &d.source, &d.target_train, &d.target_dev)?.train()?;
            let m = &out.model;
            let sents = m.encode_sentences(&d.target_test);
            let gold: Vec<Vec<usize>> = d.target_test.sentences.iter().map(|s| s.tags.clone()).collect();
            let pred = m.decode_all(Side::Target, &sents)?;
            let f1 = span_f1(&gold, &pred, &d.scheme)?.overall.f1;
            let acc = token_accuracy(&gold, &pred)?;
            let cm = class_metrics(&gold, &pred, &classes, &d.scheme)?;
            results[mi].push((f1, cm.weak.map_or(f64::NAN, |c| c.accuracy)));
            // mean relevance and alpha per ground-truth regime
            let rows = m.relevance_rows(&d.target_test)?;
            let flags: Vec<u8> = d.regimes_test.flags.iter().flatten().copied().collect();
            let by = |f: u8, g: &dyn Fn(&fgkf::eval_report::RelevanceRow) -> f64| {
                let v: Vec<f64> = rows.iter().zip(&flags).filter(|(_, &x)| x == f).map(|(r, _)| g(r)).collect();
                v.iter().sum::<f64>() / v.len() as f64
            };
            println!(
                "    alpha strong {:.3} weak {:.3} | w_elem strong {:.3} weak {:.3}",
                by(0, &|r| r.alpha),
                by(1, &|r| r.alpha),
                by(0, &|r| r.w_elem),
                by(1, &|r| r.w_elem)
            );
            let alpha = out.history.last().and_then(|r| r.mean_alpha).unwrap_or(f64::NAN);
            println!(
                "seed {seed} {name:12} f1 {f1:.4} acc {acc:.4} strong {:.4} weak {:.4} episodes {} best {} alpha {alpha:.3} ({:.1}s)",
                cm.strong.map_or(f64::NAN, |c| c.accuracy),
                cm.weak.map_or(f64::NAN, |c| c.accuracy),
                out.history.len(),
                out.best_episode,
                t0.elapsed().as_secs_f64()
            );
        }
    }
    let mean = |r: &[(f64, f64)]| r.iter().map(|x| x.0).sum::<f64>() / r.len() as f64;
    for ((name, _), r) in methods.iter().zip(&results) {
        println!("{name:12} mean f1 {:.4}", mean(r));
    }
    let below = |i: usize| (0..results[0].len()).filter(|&s| results[i][s].1 < results[0][s].1).count();
    let at_least = |i: usize| (0..results[0].len()).filter(|&s| results[i][s].1 >= results[0][s].1).count();
    println!(
        "basicKD weak < target-only in {} seeds; FGKF weak >= target-only in {} seeds",
        below(1),
        at_least(2)
    );
    Ok(())
}
