use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::fusion::{AlphaConfig, AlphaMode};
use crate::kv::{parse_bool, parse_value};
use crate::relevance::{CapsuleConfig, QueryMode};
use crate::seq_model::Distribution;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Source tagger only, evaluated on the target domain.
    SourceOnly,
    /// Target tagger on target data only.
    TargetOnly,
    /// Alternating source/target training with distillation.
    Fusion,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source-only" => Ok(Method::SourceOnly),
            "target-only" => Ok(Method::TargetOnly),
            "fusion" => Ok(Method::Fusion),
            _ => Err(Error::Config(format!(
                "unknown method `{s}` (expected source-only, target-only or fusion)"
            ))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::SourceOnly => "source-only",
            Method::TargetOnly => "target-only",
            Method::Fusion => "fusion",
        })
    }
}

/// Whether the domain classifier is co-trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Switch {
    /// On exactly when α depends on relevance.
    Auto,
    On,
    Off,
}

impl std::str::FromStr for Switch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Switch::Auto),
            "on" | "true" => Ok(Switch::On),
            "off" | "false" => Ok(Switch::Off),
            _ => Err(Error::Config(format!("expected auto, on or off, got `{s}`"))),
        }
    }
}

impl std::fmt::Display for Switch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Switch::Auto => "auto",
            Switch::On => "on",
            Switch::Off => "off",
        })
    }
}

fn parse_distribution(key: &str, v: &str) -> Result<Distribution> {
    match v {
        "marginals" => Ok(Distribution::Marginals),
        "emissions" => Ok(Distribution::Emissions),
        _ => Err(Error::Config(format!(
            "cannot parse `{v}` for key `{key}` (expected marginals or emissions)"
        ))),
    }
}

fn distribution_name(d: Distribution) -> &'static str {
    match d {
        Distribution::Marginals => "marginals",
        Distribution::Emissions => "emissions",
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub batch_size: usize,
    pub lr: f64,
    pub dropout: f64,
    pub l2: f64,
    pub clip: f64,
    pub teach_steps: usize,
    pub warmup: bool,
    pub warmup_epochs: usize,
    pub patience: usize,
    pub max_episodes: usize,
    pub seed: u64,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub clf_hidden: usize,
    pub share_embedding: bool,
    pub alpha: AlphaConfig,
    pub query: QueryMode,
    pub capsules: CapsuleConfig,
    pub distill: Distribution,
    pub temperature: f64,
    pub relevance_training: Switch,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::Fusion,
            batch_size: 64,
            lr: 0.01,
            dropout: 0.2,
            l2: 0.1,
            clip: 5.0,
            teach_steps: 100,
            warmup: true,
            warmup_epochs: 3,
            patience: 5,
            max_episodes: 100,
            seed: 1,
            embed_dim: 100,
            hidden_dim: 100,
            clf_hidden: 100,
            share_embedding: true,
            alpha: AlphaConfig::default(),
            query: QueryMode::SampleQ,
            capsules: CapsuleConfig::default(),
            distill: Distribution::Marginals,
            temperature: 1.0,
            relevance_training: Switch::Auto,
        }
    }
}

pub const KEYS: [&str; 29] = [
    "method",
    "batch_size",
    "lr",
    "dropout",
    "l2",
    "clip",
    "teach_steps",
    "warmup",
    "warmup_epochs",
    "patience",
    "max_episodes",
    "seed",
    "embed_dim",
    "hidden_dim",
    "clf_hidden",
    "share_embedding",
    "alpha_mode",
    "alpha",
    "tau",
    "gamma",
    "w_alpha",
    "b_alpha",
    "query",
    "capsules",
    "capsule_dim",
    "routing_iters",
    "distill",
    "temperature",
    "relevance_training",
];

impl TrainConfig {
    /// Multi-level fusion with sample-level queries and warm-up.
    pub fn fgkf() -> Self {
        Self::default()
    }

    /// Fixed α = 0.5 distillation without relevance or warm-up.
    pub fn basic_kd() -> Self {
        let mut c = Self::default();
        c.alpha.mode = AlphaMode::Fixed;
        c.alpha.fixed = 0.5;
        c.warmup = false;
        c
    }

    pub fn target_only() -> Self {
        TrainConfig {
            method: Method::TargetOnly,
            ..Self::default()
        }
        .effective()
    }

    pub fn source_only() -> Self {
        TrainConfig {
            method: Method::SourceOnly,
            ..Self::default()
        }
        .effective()
    }

    /// Applies the reductions implied by `method`.
    pub fn effective(&self) -> Self {
        let mut c = self.clone();
        match c.method {
            Method::TargetOnly => {
                c.teach_steps = 0;
                c.warmup = false;
                c.alpha.mode = AlphaMode::Fixed;
                c.alpha.fixed = 0.0;
                c.relevance_training = Switch::Off;
            }
            Method::SourceOnly => {
                c.warmup = false;
                c.relevance_training = Switch::Off;
            }
            Method::Fusion => {}
        }
        c
    }

    pub fn trains_relevance(&self) -> bool {
        match self.relevance_training {
            Switch::On => true,
            Switch::Off => false,
            Switch::Auto => self.alpha.mode != AlphaMode::Fixed,
        }
    }

    /// Whether the distillation term can carry weight.
    pub fn uses_kd(&self) -> bool {
        self.method == Method::Fusion && !(self.alpha.mode == AlphaMode::Fixed && self.alpha.fixed == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |k: &str, v: usize| {
            if v == 0 {
                Err(Error::Config(format!("`{k}` must be positive")))
            } else {
                Ok(())
            }
        };
        pos("batch_size", self.batch_size)?;
        pos("max_episodes", self.max_episodes)?;
        pos("embed_dim", self.embed_dim)?;
        pos("hidden_dim", self.hidden_dim)?;
        pos("clf_hidden", self.clf_hidden)?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("`lr` must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("`dropout` must be in [0, 1)".into()));
        }
        if !(self.l2 >= 0.0 && self.clip > 0.0 && self.temperature > 0.0) {
            return Err(Error::Config("`l2` must be >= 0, `clip` and `temperature` > 0".into()));
        }
        self.alpha.validate()?;
        if self.query == QueryMode::SampleQ {
            self.capsules.validate(2 * self.hidden_dim)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "method" => self.method = v.parse()?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "lr" => self.lr = parse_value(key, v)?,
            "dropout" => self.dropout = parse_value(key, v)?,
            "l2" => self.l2 = parse_value(key, v)?,
            "clip" => self.clip = parse_value(key, v)?,
            "teach_steps" => self.teach_steps = parse_value(key, v)?,
            "warmup" => self.warmup = parse_bool(key, v)?,
            "warmup_epochs" => self.warmup_epochs = parse_value(key, v)?,
            "patience" => self.patience = parse_value(key, v)?,
            "max_episodes" => self.max_episodes = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "embed_dim" => self.embed_dim = parse_value(key, v)?,
            "hidden_dim" => self.hidden_dim = parse_value(key, v)?,
            "clf_hidden" => self.clf_hidden = parse_value(key, v)?,
            "share_embedding" => self.share_embedding = parse_bool(key, v)?,
            "alpha_mode" => self.alpha.mode = v.parse()?,
            "alpha" => self.alpha.fixed = parse_value(key, v)?,
            "tau" => self.alpha.tau = parse_value(key, v)?,
            "gamma" => self.alpha.gamma = parse_value(key, v)?,
            "w_alpha" => self.alpha.w_alpha = parse_value(key, v)?,
            "b_alpha" => self.alpha.b_alpha = parse_value(key, v)?,
            "query" => self.query = v.parse()?,
            "capsules" => self.capsules.outputs = parse_value(key, v)?,
            "capsule_dim" => self.capsules.dim = parse_value(key, v)?,
            "routing_iters" => self.capsules.iterations = parse_value(key, v)?,
            "distill" => self.distill = parse_distribution(key, v)?,
            "temperature" => self.temperature = parse_value(key, v)?,
            "relevance_training" => self.relevance_training = v.parse()?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "method" => self.method.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "lr" => self.lr.to_string(),
            "dropout" => self.dropout.to_string(),
            "l2" => self.l2.to_string(),
            "clip" => self.clip.to_string(),
            "teach_steps" => self.teach_steps.to_string(),
            "warmup" => self.warmup.to_string(),
            "warmup_epochs" => self.warmup_epochs.to_string(),
            "patience" => self.patience.to_string(),
            "max_episodes" => self.max_episodes.to_string(),
            "seed" => self.seed.to_string(),
            "embed_dim" => self.embed_dim.to_string(),
            "hidden_dim" => self.hidden_dim.to_string(),
            "clf_hidden" => self.clf_hidden.to_string(),
            "share_embedding" => self.share_embedding.to_string(),
            "alpha_mode" => self.alpha.mode.to_string(),
            "alpha" => self.alpha.fixed.to_string(),
            "tau" => self.alpha.tau.to_string(),
            "gamma" => self.alpha.gamma.to_string(),
            "w_alpha" => self.alpha.w_alpha.to_string(),
            "b_alpha" => self.alpha.b_alpha.to_string(),
            "query" => self.query.to_string(),
            "capsules" => self.capsules.outputs.to_string(),
            "capsule_dim" => self.capsules.dim.to_string(),
            "routing_iters" => self.capsules.iterations.to_string(),
            "distill" => distribution_name(self.distill).to_string(),
            "temperature" => self.temperature.to_string(),
            "relevance_training" => self.relevance_training.to_string(),
            _ => return None,
        })
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for k in KEYS {
            let _ = writeln!(out, "{k} = {}", self.get(k).expect("listed key"));
        }
        out
    }
}
