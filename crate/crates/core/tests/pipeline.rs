use fgkf::data::{
    format_column, load_column_corpus, parse_column, synth_generate, write_column_corpus, Domain, Split,
    SynthConfig, SynthOutput,
};
use fgkf::eval_report::{span_f1, token_accuracy};
use fgkf::trainer::{load_checkpoint, save_checkpoint, Side, TrainConfig, Trainer};
use proptest::prelude::*;
use std::path::Path;

fn small(seed: u64) -> SynthOutput {
    synth_generate(&SynthConfig {
        shared_vocab: 20,
        source_vocab: 15,
        target_vocab: 10,
        source_size: 80,
        target_train: 20,
        target_dev: 12,
        target_test: 15,
        min_len: 3,
        max_len: 7,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn small_config() -> TrainConfig {
    let mut c = TrainConfig::fgkf();
    c.embed_dim = 6;
    c.hidden_dim = 4;
    c.clf_hidden = 5;
    c.capsules.outputs = 3;
    c.capsules.dim = 4;
    c.batch_size = 5;
    c.teach_steps = 3;
    c.warmup_epochs = 1;
    c.max_episodes = 4;
    c.lr = 0.1;
    c
}

#[test]
fn files_to_checkpoint_to_scores() {
    let d = small(3);
    let dir = tempfile::tempdir().unwrap();
    let mut loaded = Vec::new();
    for (name, c, domain, split) in [
        ("source.txt", &d.source, Domain::Source, Split::Train),
        ("train.txt", &d.target_train, Domain::Target, Split::Train),
        ("dev.txt", &d.target_dev, Domain::Target, Split::Dev),
        ("test.txt", &d.target_test, Domain::Target, Split::Test),
    ] {
        let p = dir.path().join(name);
        write_column_corpus(&p, c, &d.scheme).unwrap();
        let (back, _) = load_column_corpus(&p, &d.scheme, domain, split).unwrap();
        assert_eq!(back.sentences, c.sentences);
        loaded.push(back);
    }
    let [source, train, dev, test] = <[_; 4]>::try_from(loaded).unwrap();

    let out = Trainer::new(&small_config(), d.scheme.clone(), &source, &train, &dev)
        .unwrap()
        .train()
        .unwrap();
    assert!(!out.history.is_empty() && out.history.len() <= 4);
    assert_eq!(out.best_score, out.history[out.best_episode - 1].dev_score);

    let ckpt = dir.path().join("model.txt");
    save_checkpoint(&ckpt, &out.model).unwrap();
    let restored = load_checkpoint(&ckpt).unwrap();
    let sents = out.model.encode_sentences(&test);
    let a = out.model.decode_all(Side::Target, &sents).unwrap();
    let b = restored.decode_all(Side::Target, &restored.encode_sentences(&test)).unwrap();
    assert_eq!(a, b);

    let gold: Vec<Vec<usize>> = test.sentences.iter().map(|s| s.tags.clone()).collect();
    let f1 = span_f1(&gold, &a, &d.scheme).unwrap().overall.f1;
    let acc = token_accuracy(&gold, &a).unwrap();
    assert!((0.0..=1.0).contains(&f1) && (0.0..=1.0).contains(&acc));
}

#[test]
fn relevance_rows_cover_every_token() {
    let d = small(5);
    let out = Trainer::new(&small_config(), d.scheme.clone(), &d.source, &d.target_train, &d.target_dev)
        .unwrap()
        .train()
        .unwrap();
    let rows = out.model.relevance_rows(&d.target_test).unwrap();
    assert_eq!(rows.len(), d.target_test.num_tokens());
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.alpha) && r.w_hat > 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn column_text_round_trips(seed in 0u64..1000) {
        let d = small(seed);
        let text = format_column(&d.target_dev, &d.scheme);
        let (back, warnings) =
            parse_column(&text, Path::new("mem"), &d.scheme, Domain::Target, Split::Dev).unwrap();
        prop_assert!(warnings.is_empty());
        prop_assert_eq!(back.sentences, d.target_dev.sentences.clone());
    }
}
