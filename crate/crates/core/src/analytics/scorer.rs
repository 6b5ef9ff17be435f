use std::collections::HashSet;

use crate::model::Session;
use crate::text::tokenize;

/// Per-dialog automatic quality metric.
///
/// Implementations must be deterministic for a fixed session and return
/// `None` when they cannot score it.
pub trait QualityScorer: Send + Sync {
    fn name(&self) -> &str;

    /// Inclusive range of scores this scorer can produce.
    fn range(&self) -> (f64, f64);

    fn score(&self, session: &Session) -> Option<f64>;
}

/// Scores nothing. The default until a real metric is plugged in.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullScorer;

impl QualityScorer for NullScorer {
    fn name(&self) -> &str {
        "null"
    }

    fn range(&self) -> (f64, f64) {
        (0.0, 0.0)
    }

    fn score(&self, _session: &Session) -> Option<f64> {
        None
    }
}

/// Mean Jaccard overlap between each user utterance and the reply to it.
/// A crude topicality signal in `[0, 1]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct TokenOverlapScorer;

impl QualityScorer for TokenOverlapScorer {
    fn name(&self) -> &str {
        "token-overlap"
    }

    fn range(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    fn score(&self, session: &Session) -> Option<f64> {
        if session.turns.is_empty() {
            return None;
        }
        let total: f64 = session
            .turns
            .iter()
            .map(|t| {
                let user: HashSet<String> = tokenize(&t.user.text).into_iter().collect();
                let system: HashSet<String> = tokenize(&t.system.text).into_iter().collect();
                let union = user.union(&system).count();
                if union == 0 {
                    0.0
                } else {
                    user.intersection(&system).count() as f64 / union as f64
                }
            })
            .sum();
        Some(total / session.turns.len() as f64)
    }
}
