//! Alternating source/target training with soft-target distillation.

mod checkpoint;
mod config;
mod history;
mod model;
mod train;


pub use checkpoint::{format_checkpoint, load_checkpoint, parse_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use config::{Method, Switch, TrainConfig, KEYS};
pub use history::{history_csv, EarlyStopper, EpisodeRecord, StopDecision, HISTORY_HEADER};
pub use model::{AlphaVar, Model, Side, SHARED_EMBEDDING};
pub use train::{dev_score, train, Counters, SoftTargetCache, TargetStats, TrainOutcome, Trainer, CACHE_ROW_TOL};
