//! Run configuration and the experiment commands behind the `fgkf` binary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::{
    load_column_corpus, oov_lexicon, synth_generate, write_column_corpus, Corpus, Domain, RegimeLabels,
    SchemeKind, Split, SynthConfig, TagScheme,
};
use crate::error::{Error, Result};
use crate::eval_report::{
    class_metrics, oov_recall, partition, relevance_threshold, span_f1, token_accuracy, write_relevance_tsv,
    MetricsReport, Strength,
};
use crate::kv;
use crate::trainer::{history_csv, load_checkpoint, save_checkpoint, Model, Side, TrainConfig, Trainer};

pub const PATH_KEYS: [&str; 7] = [
    "source",
    "target_train",
    "target_dev",
    "target_test",
    "checkpoint",
    "regimes",
    "input",
];
pub const SYNTH_PREFIX: &str = "synth.";
pub const SEED_ENV: &str = "FGKF_SEED";

pub const RESOLVED_CONFIG: &str = "resolved.cfg";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const RELEVANCE_FILE: &str = "relevance.tsv";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Train,
    Evaluate,
    Synth,
    RelevanceDump,
}

impl std::fmt::Display for Command {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Synth => "synth",
            Command::RelevanceDump => "relevance-dump",
        })
    }
}

/// Fully resolved settings for one run.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub command: Command,
    pub out: PathBuf,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    /// Tag scheme of column corpora. `train` defaults to BMES; the other
    /// commands take the checkpoint's scheme and reject a different one.
    pub scheme: Option<TagScheme>,
    pub paths: BTreeMap<String, PathBuf>,
    synth_scheme: Option<String>,
}

/// Splits `key=value`.
pub fn parse_assignment(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("expected key=value, got `{s}`")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

impl RunConfig {
    pub fn new(command: Command, out: impl Into<PathBuf>) -> Self {
        RunConfig {
            command,
            out: out.into(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            scheme: None,
            paths: BTreeMap::new(),
            synth_scheme: None,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if let Some(k) = key.strip_prefix(SYNTH_PREFIX) {
            if k == "scheme" {
                self.synth_scheme = Some(value.to_string());
                return Ok(());
            }
            if !SynthConfig::keys().contains(&k) {
                return Err(Error::Config(format!("unknown key `{key}`")));
            }
            return self.synth.set(k, value);
        }
        if PATH_KEYS.contains(&key) {
            if value.is_empty() {
                return Err(Error::Config(format!("empty path for `{key}`")));
            }
            self.paths.insert(key.to_string(), PathBuf::from(value));
            return Ok(());
        }
        if key == "scheme" {
            self.scheme = Some(
                TagScheme::parse(value).map_err(|e| Error::Config(format!("bad value for `scheme`: {e}")))?,
            );
            return Ok(());
        }
        if !crate::trainer::KEYS.contains(&key) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        self.train.set(key, value)
    }

    /// Defaults, then the seed environment value, then the file, then flags.
    pub fn resolve(
        command: Command,
        out: impl Into<PathBuf>,
        file: Option<(&str, &Path)>,
        flags: &[(String, String)],
        env_seed: Option<&str>,
    ) -> Result<Self> {
        let mut cfg = RunConfig::new(command, out);
        if let Some(s) = env_seed {
            let seed: u64 = s
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("cannot parse `{s}` from {SEED_ENV}")))?;
            cfg.train.seed = seed;
            cfg.synth.seed = seed;
        }
        if let Some((text, origin)) = file {
            for e in kv::parse(text, origin)? {
                cfg.set(&e.key, &e.value).map_err(|err| match err {
                    Error::Config(msg) => Error::Config(format!("{}:{}: {msg}", origin.display(), e.line)),
                    other => other,
                })?;
            }
        }
        for (k, v) in flags {
            cfg.set(k, v)?;
        }
        if let Some(s) = cfg.synth_scheme.take() {
            cfg.synth.set("scheme", &s)?;
        }
        cfg.train.validate()?;
        cfg.synth.validate()?;
        Ok(cfg)
    }

    /// Reads the optional config file and `FGKF_SEED` before resolving.
    pub fn load(command: Command, out: impl Into<PathBuf>, file: Option<&Path>, sets: &[String]) -> Result<Self> {
        let text = match file {
            Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
            None => None,
        };
        let flags = sets.iter().map(|s| parse_assignment(s)).collect::<Result<Vec<_>>>()?;
        let env = std::env::var(SEED_ENV).ok();
        Self::resolve(
            command,
            out,
            text.as_deref().zip(file),
            &flags,
            env.as_deref(),
        )
    }

    /// Every setting as a reloadable `key = value` file.
    pub fn to_kv(&self) -> String {
        let mut out = format!("# fgkf {} run\n", self.command);
        out.push_str(&self.train.to_kv());
        if let Some(s) = &self.scheme {
            let _ = writeln!(out, "scheme = {}", s.spec());
        }
        for line in self.synth.to_kv().lines() {
            if !line.starts_with("scheme ") {
                let _ = writeln!(out, "{SYNTH_PREFIX}{line}");
            }
        }
        for (k, v) in &self.paths {
            let _ = writeln!(out, "{k} = {}", v.display());
        }
        out
    }

    pub fn path(&self, key: &str) -> Result<&Path> {
        self.paths
            .get(key)
            .map(PathBuf::as_path)
            .ok_or_else(|| Error::Config(format!("missing required path `{key}` for {}", self.command)))
    }
}

/// Exit status for an error category.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Parse { .. } | Error::Io { .. } => 3,
        Error::Numeric(_) | Error::Diverged { .. } => 4,
        Error::Shape { .. } => 1,
    }
}

/// What a command did, for display.
#[derive(Clone, Debug, Default)]
pub struct RunSummary {
    pub messages: Vec<String>,
    pub warnings: Vec<String>,
}

fn load_corpus(
    cfg: &RunConfig,
    key: &str,
    scheme: &TagScheme,
    domain: Domain,
    split: Split,
    summary: &mut RunSummary,
) -> Result<Corpus> {
    let path = cfg.path(key)?;
    let (c, warnings) = load_column_corpus(path, scheme, domain, split)?;
    for w in warnings {
        summary
            .warnings
            .push(format!("{}:{}: {}", path.display(), w.line, w.message));
    }
    Ok(c)
}

fn create_out(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let p = cfg.out.join(RESOLVED_CONFIG);
    std::fs::write(&p, cfg.to_kv()).map_err(|e| Error::io(p, e))
}

/// Executes the configured command, writing artifacts under `cfg.out`.
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    create_out(cfg)?;
    match cfg.command {
        Command::Train => run_train(cfg),
        Command::Evaluate => run_evaluate(cfg),
        Command::Synth => run_synth(cfg),
        Command::RelevanceDump => run_relevance_dump(cfg),
    }
}

fn run_train(cfg: &RunConfig) -> Result<RunSummary> {
    let mut s = RunSummary::default();
    let scheme = &cfg.scheme.clone().unwrap_or_else(TagScheme::bmes);
    let source = load_corpus(cfg, "source", scheme, Domain::Source, Split::Train, &mut s)?;
    let train = load_corpus(cfg, "target_train", scheme, Domain::Target, Split::Train, &mut s)?;
    let dev = load_corpus(cfg, "target_dev", scheme, Domain::Target, Split::Dev, &mut s)?;
    let out = Trainer::new(&cfg.train, scheme.clone(), &source, &train, &dev)?.train()?;
    let ckpt = cfg.out.join(CHECKPOINT_FILE);
    save_checkpoint(&ckpt, &out.model)?;
    let hist = cfg.out.join(HISTORY_FILE);
    std::fs::write(&hist, history_csv(&out.history)).map_err(|e| Error::io(&hist, e))?;
    s.messages.push(format!(
        "{} episodes, best dev score {:.4} at episode {}",
        out.history.len(),
        out.best_score,
        out.best_episode
    ));
    s.messages.push(format!("checkpoint: {}", ckpt.display()));
    s.messages.push(format!("history: {}", hist.display()));
    Ok(s)
}

fn model_for(cfg: &RunConfig) -> Result<Model> {
    let model = load_checkpoint(cfg.path("checkpoint")?)?;
    if let Some(s) = cfg.scheme.as_ref().filter(|s| **s != model.scheme) {
        return Err(Error::Data(format!(
            "configured scheme {} differs from the checkpoint's {} scheme",
            s.spec(),
            model.scheme.spec()
        )));
    }
    Ok(model)
}

fn regime_classes(labels: &RegimeLabels) -> Vec<Vec<Strength>> {
    labels
        .flags
        .iter()
        .map(|s| {
            s.iter()
                .map(|&f| if f == 0 { Strength::Strong } else { Strength::Weak })
                .collect()
        })
        .collect()
}

fn run_evaluate(cfg: &RunConfig) -> Result<RunSummary> {
    let mut s = RunSummary::default();
    let model = model_for(cfg)?;
    let scheme = model.scheme.clone();
    let test = load_corpus(cfg, "target_test", &scheme, Domain::Target, Split::Test, &mut s)?;
    let train = load_corpus(cfg, "target_train", &scheme, Domain::Target, Split::Train, &mut s)?;
    let source = if cfg.paths.contains_key("source") {
        Some(load_corpus(cfg, "source", &scheme, Domain::Source, Split::Train, &mut s)?)
    } else {
        None
    };
    let sents = model.encode_sentences(&test);
    let gold: Vec<Vec<usize>> = test.sentences.iter().map(|x| x.tags.clone()).collect();
    let pred = model.decode_all(Side::Target, &sents)?;
    let mut report = MetricsReport::default();
    if scheme.kind() != SchemeKind::Plain {
        report.add_span_f1(&span_f1(&gold, &pred, &scheme)?);
        let mut lex: Vec<&Corpus> = vec![&train];
        if let Some(src) = &source {
            lex.push(src);
        }
        let oov = oov_lexicon(&lex, &test, &scheme)?;
        report.push("r_oov", oov_recall(&test.sentences, &pred, &oov, &scheme)?, "");
    }
    let acc = token_accuracy(&gold, &pred)?;
    report.push("token_accuracy", Some(acc), "");
    let threshold = relevance_threshold(&model.element_scores(&model.encode_sentences(&train))?)?;
    let classes = partition(threshold, &model.element_scores(&sents)?);
    report.add_classes(&class_metrics(&gold, &pred, &classes, &scheme)?, Some(threshold));
    if cfg.paths.contains_key("regimes") {
        let labels = RegimeLabels::load(cfg.path("regimes")?)?;
        labels.check_aligned(&test)?;
        let m = class_metrics(&gold, &pred, &regime_classes(&labels), &scheme)?;
        for (name, c) in [("regime_source", m.strong), ("regime_target", m.weak)] {
            report.push("tokens", c.map(|c| c.tokens as f64), name);
            report.push("token_accuracy", c.map(|c| c.accuracy), name);
        }
    }
    let p = cfg.out.join(METRICS_FILE);
    report.write(&p)?;
    if let Some(Some(f)) = report.get("f1", "") {
        s.messages.push(format!("f1 {f:.4}"));
    }
    s.messages.push(format!("token accuracy {acc:.4}"));
    s.messages.push(format!("metrics: {}", p.display()));
    Ok(s)
}

fn run_synth(cfg: &RunConfig) -> Result<RunSummary> {
    let d = synth_generate(&cfg.synth)?;
    let o = &cfg.out;
    for (name, c) in [
        ("source.txt", &d.source),
        ("target_train.txt", &d.target_train),
        ("target_dev.txt", &d.target_dev),
        ("target_test.txt", &d.target_test),
    ] {
        write_column_corpus(&o.join(name), c, &d.scheme)?;
    }
    for (name, r) in [
        ("regimes_train.txt", &d.regimes_train),
        ("regimes_dev.txt", &d.regimes_dev),
        ("regimes_test.txt", &d.regimes_test),
    ] {
        r.write(&o.join(name))?;
    }
    let p = o.join("synth.cfg");
    std::fs::write(&p, cfg.synth.to_kv()).map_err(|e| Error::io(&p, e))?;
    Ok(RunSummary {
        messages: vec![format!(
            "{} source, {}/{}/{} target sentences ({} scheme) in {}",
            d.source.len(),
            d.target_train.len(),
            d.target_dev.len(),
            d.target_test.len(),
            d.scheme.spec(),
            o.display()
        )],
        warnings: Vec::new(),
    })
}

fn run_relevance_dump(cfg: &RunConfig) -> Result<RunSummary> {
    let mut s = RunSummary::default();
    let model = model_for(cfg)?;
    let scheme = model.scheme.clone();
    let corpus = load_corpus(cfg, "input", &scheme, Domain::Target, Split::Test, &mut s)?;
    let rows = model.relevance_rows(&corpus)?;
    let p = cfg.out.join(RELEVANCE_FILE);
    write_relevance_tsv(&p, &rows)?;
    s.messages.push(format!("{} rows: {}", rows.len(), p.display()));
    Ok(s)
}
