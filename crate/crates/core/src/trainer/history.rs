use std::fmt::Write as _;

/// Losses and dev score of one episode. Losses that did not occur are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub loss_source: Option<f64>,
    pub loss_target: Option<f64>,
    pub loss_seq: Option<f64>,
    pub loss_kd: Option<f64>,
    pub dev_score: f64,
    pub mean_alpha: Option<f64>,
}

pub const HISTORY_HEADER: &str = "episode,loss_source,loss_target,loss_seq,loss_kd,dev_f1,mean_alpha";

pub fn history_csv(records: &[EpisodeRecord]) -> String {
    let f = |v: Option<f64>| v.map_or("NA".to_string(), |x| x.to_string());
    let mut out = format!("{HISTORY_HEADER}\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.episode,
            f(r.loss_source),
            f(r.loss_target),
            f(r.loss_seq),
            f(r.loss_kd),
            r.dev_score,
            f(r.mean_alpha)
        );
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience-based early stopping on a score to maximise.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopper {
    pub patience: usize,
    pub best: f64,
    pub best_episode: usize,
    pub bad_episodes: usize,
    /// Best score after each update.
    pub best_history: Vec<f64>,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: f64::NEG_INFINITY,
            best_episode: 0,
            bad_episodes: 0,
            best_history: Vec::new(),
        }
    }

    /// Only a strict improvement resets the counter.
    pub fn update(&mut self, episode: usize, score: f64) -> StopDecision {
        let d = if score > self.best {
            self.best = score;
            self.best_episode = episode;
            self.bad_episodes = 0;
            StopDecision::Improved
        } else {
            self.bad_episodes += 1;
            if self.bad_episodes > self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        };
        self.best_history.push(self.best);
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_patience_stops_on_first_miss() {
        let mut s = EarlyStopper::new(0);
        assert_eq!(s.update(1, 0.5), StopDecision::Improved);
        assert_eq!(s.update(2, 0.5), StopDecision::Stop);
    }

    #[test]
    fn improvement_resets_counter() {
        let mut s = EarlyStopper::new(1);
        s.update(1, 0.5);
        assert_eq!(s.update(2, 0.4), StopDecision::Continue);
        assert_eq!(s.update(3, 0.6), StopDecision::Improved);
        assert_eq!(s.bad_episodes, 0);
        assert_eq!(s.update(4, 0.6), StopDecision::Continue);
        assert_eq!(s.update(5, 0.1), StopDecision::Stop);
        assert_eq!(s.best_episode, 3);
    }

    #[test]
    fn csv_layout() {
        let r = EpisodeRecord {
            episode: 1,
            loss_source: None,
            loss_target: Some(1.5),
            loss_seq: Some(1.5),
            loss_kd: Some(0.0),
            dev_score: 0.25,
            mean_alpha: Some(0.0),
        };
        assert_eq!(history_csv(&[r]), format!("{HISTORY_HEADER}\n1,NA,1.5,1.5,0,0.25,0\n"));
    }

    proptest! {
        #[test]
        fn best_never_decreases(scores in prop::collection::vec(0.0f64..1.0, 1..40)) {
            let mut s = EarlyStopper::new(3);
            for (i, &x) in scores.iter().enumerate() {
                s.update(i + 1, x);
            }
            prop_assert!(s.best_history.windows(2).all(|w| w[1] >= w[0]));
        }
    }
}
