use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::AnalyticsError;
use crate::model::{FeedbackKind, Session, Side, SystemId};
use crate::text::tokenize;

/// Lower bound on a count: `count > value` when strict, else `count >= value`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountBound {
    pub value: usize,
    pub strict: bool,
}

impl CountBound {
    pub fn more_than(value: usize) -> Self {
        Self { value, strict: true }
    }

    pub fn at_least(value: usize) -> Self {
        Self { value, strict: false }
    }

    pub fn admits(&self, count: usize) -> bool {
        if self.strict {
            count > self.value
        } else {
            count >= self.value
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseFilter {
    pub phrase: String,
    /// Restrict to one side of the conversation; `None` searches both.
    #[serde(default)]
    pub side: Option<Side>,
}

/// Conjunction of optional predicates. The empty filter admits everything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DialogFilter {
    pub system_id: Option<SystemId>,
    pub turns: Option<CountBound>,
    pub utterances: Option<CountBound>,
    pub min_likes: Option<usize>,
    pub max_likes: Option<usize>,
    pub contains_phrase: Option<PhraseFilter>,
    /// Inclusive lower bound on `created_at`.
    pub created_from: Option<DateTime<Utc>>,
    /// Exclusive upper bound on `created_at`.
    pub created_to: Option<DateTime<Utc>>,
}

impl DialogFilter {
    pub fn validate(&self) -> Result<(), AnalyticsError> {
        if let (Some(lo), Some(hi)) = (self.min_likes, self.max_likes) {
            if lo > hi {
                return Err(AnalyticsError::InvalidFilter(format!("min_likes {lo} exceeds max_likes {hi}")));
            }
        }
        if let (Some(from), Some(to)) = (self.created_from, self.created_to) {
            if from > to {
                return Err(AnalyticsError::InvalidFilter("created_from is after created_to".into()));
            }
        }
        if let Some(p) = &self.contains_phrase {
            if tokenize(&p.phrase).is_empty() {
                return Err(AnalyticsError::InvalidFilter("phrase has no words".into()));
            }
        }
        Ok(())
    }

    pub fn matches(&self, session: &Session) -> bool {
        let counts = session.count_units();
        let likes = session.feedback_count(FeedbackKind::Like);
        self.system_id.as_ref().is_none_or(|id| session.involves(id))
            && self.turns.is_none_or(|b| b.admits(counts.turns))
            && self.utterances.is_none_or(|b| b.admits(counts.utterances))
            && self.min_likes.is_none_or(|m| likes >= m)
            && self.max_likes.is_none_or(|m| likes <= m)
            && self.created_from.is_none_or(|t| session.created_at >= t)
            && self.created_to.is_none_or(|t| session.created_at < t)
            && self.contains_phrase.as_ref().is_none_or(|p| contains_phrase(session, p))
    }

    /// Parses and applies one `attribute op value` predicate such as
    /// `utterances>3`, `turns>=4`, `likes<=2` or `system=cmu-weather`.
    pub fn with_predicate(mut self, expr: &str) -> Result<Self, AnalyticsError> {
        let bad = || AnalyticsError::InvalidFilter(format!("cannot parse predicate {expr:?}"));
        let (attr, op, value) = split_predicate(expr).ok_or_else(bad)?;
        match (attr, op) {
            ("system" | "system_id", "=") => self.system_id = Some(SystemId::new(value)),
            ("phrase", "=") => self.contains_phrase = Some(PhraseFilter { phrase: value.into(), side: None }),
            ("user_phrase", "=") => {
                self.contains_phrase = Some(PhraseFilter { phrase: value.into(), side: Some(Side::User) })
            }
            ("system_phrase", "=") => {
                self.contains_phrase = Some(PhraseFilter { phrase: value.into(), side: Some(Side::System) })
            }
            ("turns" | "utterances", ">" | ">=") => {
                let n: usize = value.parse().map_err(|_| bad())?;
                let bound = CountBound { value: n, strict: op == ">" };
                if attr == "turns" {
                    self.turns = Some(bound);
                } else {
                    self.utterances = Some(bound);
                }
            }
            ("likes", ">=" | ">" | "<=" | "<") => {
                let n: usize = value.parse().map_err(|_| bad())?;
                match op {
                    ">=" => self.min_likes = Some(n),
                    ">" => self.min_likes = Some(n + 1),
                    "<=" => self.max_likes = Some(n),
                    _ => self.max_likes = Some(n.checked_sub(1).ok_or_else(bad)?),
                }
            }
            ("from", "=") => self.created_from = Some(value.parse().map_err(|_| bad())?),
            ("to", "=") => self.created_to = Some(value.parse().map_err(|_| bad())?),
            _ => return Err(bad()),
        }
        Ok(self)
    }
}

fn split_predicate(expr: &str) -> Option<(&str, &str, &str)> {
    let at = expr.find(['>', '<', '='])?;
    let attr = expr[..at].trim();
    let rest = &expr[at..];
    let op_len = if rest.starts_with(">=") || rest.starts_with("<=") { 2 } else { 1 };
    let value = rest[op_len..].trim();
    (!attr.is_empty() && !value.is_empty()).then_some((attr, &rest[..op_len], value))
}

impl FromStr for DialogFilter {
    type Err = AnalyticsError;

    /// Comma-separated predicates, e.g. `system=cmu,utterances>3`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .try_fold(DialogFilter::default(), |f, p| f.with_predicate(p))
    }
}

fn contains_phrase(session: &Session, filter: &PhraseFilter) -> bool {
    let needle = tokenize(&filter.phrase);
    session
        .turns
        .iter()
        .flat_map(|t| [&t.user, &t.system])
        .filter(|u| filter.side.is_none_or(|side| u.side == side))
        .any(|u| tokenize(&u.text).windows(needle.len()).any(|w| w == needle.as_slice()))
}
