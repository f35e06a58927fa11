use std::path::Path;
use std::process::{Command, Output};

const TINY_SYNTH: &[&str] = &[
    "synth.source_size=40",
    "synth.target_train=12",
    "synth.target_dev=8",
    "synth.target_test=10",
    "synth.shared_vocab=20",
    "synth.source_vocab=10",
    "synth.target_vocab=8",
    "synth.max_len=6",
];

const TINY_TRAIN: &[&str] = &[
    "embed_dim=6",
    "hidden_dim=4",
    "clf_hidden=5",
    "capsules=3",
    "capsule_dim=4",
    "batch_size=4",
    "teach_steps=2",
    "warmup_epochs=1",
    "max_episodes=2",
];

fn fgkf(args: &[&str], sets: &[&str], env_seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fgkf"));
    cmd.args(args);
    for s in sets {
        cmd.arg("--set").arg(s);
    }
    cmd.env_remove("FGKF_SEED");
    if let Some(s) = env_seed {
        cmd.env("FGKF_SEED", s);
    }
    cmd.output().expect("run fgkf")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, env_seed: Option<&str>) {
    let o = fgkf(&["synth", "--out", dir.to_str().unwrap()], TINY_SYNTH, env_seed);
    assert!(o.status.success(), "{}", stderr(&o));
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn corpus_sets(data: &Path) -> Vec<String> {
    ["source", "target_train", "target_dev", "target_test"]
        .iter()
        .map(|k| format!("{k}={}", data.join(format!("{k}.txt")).display()))
        .collect()
}

#[test]
fn synth_is_deterministic_and_seed_env_applies() {
    let t = tempfile::tempdir().unwrap();
    let (a, b, c) = (t.path().join("a"), t.path().join("b"), t.path().join("c"));
    synth(&a, None);
    synth(&b, None);
    synth(&c, Some("42"));
    for f in ["source.txt", "target_train.txt", "target_test.txt", "regimes_test.txt"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f}");
    }
    assert_ne!(read(a.join("source.txt")), read(c.join("source.txt")));
    assert!(read(c.join("resolved.cfg")).contains("synth.seed = 42"));
}

#[test]
fn unknown_key_exits_with_config_code() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("run.cfg");
    std::fs::write(&cfg, "btach = 64\n").unwrap();
    let o = fgkf(
        &["train", "--config", cfg.to_str().unwrap(), "--out", t.path().to_str().unwrap()],
        &[],
        None,
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("btach"), "{}", stderr(&o));
}

#[test]
fn missing_corpus_path_is_named() {
    let t = tempfile::tempdir().unwrap();
    let o = fgkf(&["train", "--out", t.path().to_str().unwrap()], &[], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("source"), "{}", stderr(&o));
}

#[test]
fn train_evaluate_dump_round_trip() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    synth(&data, None);
    let run1 = t.path().join("run1");
    let mut sets: Vec<String> = TINY_TRAIN.iter().map(|s| s.to_string()).collect();
    sets.extend(corpus_sets(&data));
    sets.push("alpha_mode=fixed".into());
    sets.push("alpha=0.5".into());
    sets.push("warmup=false".into());
    let refs: Vec<&str> = sets.iter().map(String::as_str).collect();
    let o = fgkf(&["train", "--out", run1.to_str().unwrap()], &refs, None);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = run1.join("checkpoint.txt");
    assert!(read(&ckpt).contains("alpha = 0.5"));
    assert!(read(run1.join("history.csv")).starts_with("episode,"));

    // rerunning from the echoed config reproduces the artifacts
    let run2 = t.path().join("run2");
    let o = fgkf(
        &[
            "train",
            "--config",
            run1.join("resolved.cfg").to_str().unwrap(),
            "--out",
            run2.to_str().unwrap(),
        ],
        &[],
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read(&ckpt), read(run2.join("checkpoint.txt")));
    assert_eq!(read(run1.join("history.csv")), read(run2.join("history.csv")));

    let eval = t.path().join("eval");
    let mut esets = corpus_sets(&data);
    esets.push(format!("checkpoint={}", ckpt.display()));
    esets.push(format!("regimes={}", data.join("regimes_test.txt").display()));
    let refs: Vec<&str> = esets.iter().map(String::as_str).collect();
    let o = fgkf(&["evaluate", "--out", eval.to_str().unwrap()], &refs, None);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = read(eval.join("metrics.csv"));
    assert!(metrics.starts_with("metric,value,class\n"));
    for row in ["\nf1,", "\nr_oov,", "\ntoken_accuracy,", ",strong\n", ",regime_target\n"] {
        assert!(metrics.contains(row), "{row} missing from\n{metrics}");
    }

    let dump = t.path().join("dump");
    let sets = [
        format!("checkpoint={}", ckpt.display()),
        format!("input={}", data.join("target_test.txt").display()),
    ];
    let refs: Vec<&str> = sets.iter().map(String::as_str).collect();
    let o = fgkf(&["relevance-dump", "--out", dump.to_str().unwrap()], &refs, None);
    assert!(o.status.success(), "{}", stderr(&o));
    let tsv = read(dump.join("relevance.tsv"));
    let tokens: usize = read(data.join("target_test.txt")).lines().filter(|l| !l.trim().is_empty()).count();
    assert_eq!(tsv.lines().count(), tokens + 1);

    // a BIO corpus cannot be scored by a BMES checkpoint
    let bio = t.path().join("bio.txt");
    std::fs::write(&bio, "John B-PER\nruns O\n").unwrap();
    let sets = [
        format!("checkpoint={}", ckpt.display()),
        format!("target_test={}", bio.display()),
        format!("target_train={}", data.join("target_train.txt").display()),
    ];
    let refs: Vec<&str> = sets.iter().map(String::as_str).collect();
    let o = fgkf(&["evaluate", "--out", t.path().join("bad").to_str().unwrap()], &refs, None);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("bmes"), "{}", stderr(&o));

    let mut sets = sets.to_vec();
    sets.push("scheme=bio:PER".into());
    let refs: Vec<&str> = sets.iter().map(String::as_str).collect();
    let o = fgkf(&["evaluate", "--out", t.path().join("bad2").to_str().unwrap()], &refs, None);
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("bio"), "{}", stderr(&o));
}
