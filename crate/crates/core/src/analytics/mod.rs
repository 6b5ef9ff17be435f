//! Dashboard computations over a store snapshot: per-system summaries,
//! filtering and ranking, n-gram counts, collection progress and cost per
//! usable dialog.
//!
//! Everything here is a pure function of a [`StoreSnapshot`]; nothing is
//! cached between calls.

mod filter;
mod scorer;

pub use filter::{CountBound, DialogFilter, PhraseFilter};
pub use scorer::{NullScorer, QualityScorer, TokenOverlapScorer};

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Duration, DurationRound, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{FeedbackKind, Session, Side, SystemId};
use crate::money::Money;
use crate::store::StoreSnapshot;
use crate::text::tokenize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalyticsError {
    #[error("unknown system {0}")]
    UnknownSystem(SystemId),
    #[error("invalid filter: {0}")]
    InvalidFilter(String),
    #[error("unknown rank attribute {0:?}")]
    UnknownRankAttribute(String),
    #[error("n-gram size must be 1, 2 or 3, got {0}")]
    InvalidNgramSize(usize),
    #[error("budget must not be negative")]
    NegativeBudget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSummary {
    pub system_id: SystemId,
    pub dialog_count: usize,
    pub utterance_count: usize,
    pub likes: usize,
    pub dislikes: usize,
    /// Free-text `FEEDBACK` events.
    pub comments: usize,
    /// `IMPROVE_RESPONSE` events.
    pub corrections: usize,
    pub avg_quality: Option<f64>,
    pub avg_human_rating: Option<f64>,
}

fn ensure_known(system_id: &SystemId, snapshot: &StoreSnapshot) -> Result<(), AnalyticsError> {
    if snapshot.systems.contains(system_id) {
        Ok(())
    } else {
        Err(AnalyticsError::UnknownSystem(system_id.clone()))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Counts over the turns `system_id` answered and the feedback left on them.
/// A dialog counts toward the system if it was matched to it or the system
/// answered any of its turns.
pub fn system_summary(
    system_id: &SystemId,
    snapshot: &StoreSnapshot,
    scorer: &dyn QualityScorer,
) -> Result<SystemSummary, AnalyticsError> {
    ensure_known(system_id, snapshot)?;
    let mut summary = SystemSummary {
        system_id: system_id.clone(),
        dialog_count: 0,
        utterance_count: 0,
        likes: 0,
        dislikes: 0,
        comments: 0,
        corrections: 0,
        avg_quality: None,
        avg_human_rating: None,
    };
    let involved: Vec<&Session> = snapshot.sessions.iter().filter(|s| s.involves(system_id)).collect();
    for session in &involved {
        summary.dialog_count += 1;
        summary.utterance_count += 2 * session.turns.iter().filter(|t| &t.responder == system_id).count();
        for event in &session.feedback {
            let on_system = session.turns.get(event.turn_index).is_some_and(|t| &t.responder == system_id);
            if !on_system {
                continue;
            }
            match event.kind {
                FeedbackKind::Like => summary.likes += 1,
                FeedbackKind::Dislike => summary.dislikes += 1,
                FeedbackKind::Feedback => summary.comments += 1,
                FeedbackKind::ImproveResponse => summary.corrections += 1,
                FeedbackKind::EndConversation => {}
            }
        }
    }
    summary.avg_quality = mean(involved.iter().filter_map(|s| scorer.score(s)));
    summary.avg_human_rating = mean(involved.iter().filter_map(|s| s.human_rating));
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankAttribute {
    Turns,
    Utterances,
    Likes,
    Dislikes,
    CreatedAt,
    Quality,
}

impl FromStr for RankAttribute {
    type Err = AnalyticsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "turns" => Self::Turns,
            "utterances" => Self::Utterances,
            "likes" => Self::Likes,
            "dislikes" => Self::Dislikes,
            "created_at" => Self::CreatedAt,
            "quality" => Self::Quality,
            _ => return Err(AnalyticsError::UnknownRankAttribute(s.to_owned())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Asc,
    #[default]
    Desc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankBy {
    pub attribute: RankAttribute,
    #[serde(default)]
    pub direction: Direction,
}

impl FromStr for RankBy {
    type Err = AnalyticsError;

    /// `likes`, `likes:desc` or `turns:asc`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (attr, dir) = s.split_once(':').unwrap_or((s, "desc"));
        let direction = match dir.trim().to_ascii_lowercase().as_str() {
            "asc" => Direction::Asc,
            "desc" => Direction::Desc,
            _ => return Err(AnalyticsError::UnknownRankAttribute(s.to_owned())),
        };
        Ok(RankBy { attribute: attr.parse()?, direction })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
enum RankKey {
    Count(usize),
    Time(DateTime<Utc>),
    Score(Option<f64>),
}

fn rank_key(session: &Session, attribute: RankAttribute, scorer: &dyn QualityScorer) -> RankKey {
    match attribute {
        RankAttribute::Turns => RankKey::Count(session.count_units().turns),
        RankAttribute::Utterances => RankKey::Count(session.count_units().utterances),
        RankAttribute::Likes => RankKey::Count(session.feedback_count(FeedbackKind::Like)),
        RankAttribute::Dislikes => RankKey::Count(session.feedback_count(FeedbackKind::Dislike)),
        RankAttribute::CreatedAt => RankKey::Time(session.created_at),
        RankAttribute::Quality => RankKey::Score(scorer.score(session)),
    }
}

fn compare_keys(a: RankKey, b: RankKey, direction: Direction) -> Ordering {
    let directed = |o: Ordering| if direction == Direction::Desc { o.reverse() } else { o };
    match (a, b) {
        // Unscored dialogs always sink to the bottom.
        (RankKey::Score(None), RankKey::Score(None)) => Ordering::Equal,
        (RankKey::Score(None), RankKey::Score(Some(_))) => Ordering::Greater,
        (RankKey::Score(Some(_)), RankKey::Score(None)) => Ordering::Less,
        (RankKey::Score(Some(x)), RankKey::Score(Some(y))) => directed(x.total_cmp(&y)),
        (a, b) => directed(a.partial_cmp(&b).unwrap_or(Ordering::Equal)),
    }
}

/// Dialogs matching `filter`, ordered by `rank_by` with ties broken by
/// `created_at` descending, then session id. Without `rank_by` the order is
/// newest first.
pub fn filter_and_rank(
    filter: &DialogFilter,
    rank_by: Option<RankBy>,
    snapshot: &StoreSnapshot,
    scorer: &dyn QualityScorer,
) -> Result<Vec<Session>, AnalyticsError> {
    filter.validate()?;
    let mut keyed: Vec<(RankKey, &Session)> = snapshot
        .sessions
        .iter()
        .filter(|s| filter.matches(s))
        .map(|s| (rank_by.map_or(RankKey::Count(0), |r| rank_key(s, r.attribute, scorer)), s))
        .collect();
    let direction = rank_by.map_or(Direction::Desc, |r| r.direction);
    keyed.sort_by(|(ka, a), (kb, b)| {
        compare_keys(*ka, *kb, direction)
            .then_with(|| b.created_at.cmp(&a.created_at))
            .then_with(|| a.session_id.cmp(&b.session_id))
    });
    Ok(keyed.into_iter().map(|(_, s)| s.clone()).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NgramCount {
    pub ngram: String,
    pub count: usize,
}

/// Word n-gram counts over the turns `system_id` answered, from one side of
/// the conversation (`None` for both). N-grams never cross utterance
/// boundaries. Sorted by count descending, then lexicographically.
pub fn ngram_frequencies(
    system_id: &SystemId,
    side: Option<Side>,
    n: usize,
    min_count: usize,
    snapshot: &StoreSnapshot,
) -> Result<Vec<NgramCount>, AnalyticsError> {
    if !(1..=3).contains(&n) {
        return Err(AnalyticsError::InvalidNgramSize(n));
    }
    ensure_known(system_id, snapshot)?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let utterances = snapshot
        .sessions
        .iter()
        .flat_map(|s| s.turns.iter())
        .filter(|t| &t.responder == system_id)
        .flat_map(|t| [&t.user, &t.system])
        .filter(|u| side.is_none_or(|want| u.side == want));
    for utterance in utterances {
        let tokens = tokenize(&utterance.text);
        for gram in tokens.windows(n) {
            *counts.entry(gram.join(" ")).or_insert(0) += 1;
        }
    }
    let mut out: Vec<NgramCount> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_count)
        .map(|(ngram, count)| NgramCount { ngram, count })
        .collect();
    out.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.ngram.cmp(&b.ngram)));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Bucket {
    Hour,
    Day,
    Week,
}

impl FromStr for Bucket {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "HOUR" => Ok(Bucket::Hour),
            "DAY" => Ok(Bucket::Day),
            "WEEK" => Ok(Bucket::Week),
            _ => Err(format!("unknown bucket {s:?}; expected HOUR, DAY or WEEK")),
        }
    }
}

impl Bucket {
    /// Start of the bucket containing `t`. Weeks start Monday 00:00 UTC.
    pub fn floor(self, t: DateTime<Utc>) -> DateTime<Utc> {
        match self {
            Bucket::Hour => t.duration_trunc(Duration::hours(1)).expect("hour truncation"),
            Bucket::Day => Utc.from_utc_datetime(&t.date_naive().and_hms_opt(0, 0, 0).expect("midnight")),
            Bucket::Week => {
                let day = Bucket::Day.floor(t);
                day - Duration::days(i64::from(t.weekday().num_days_from_monday()))
            }
        }
    }

    pub fn step(self) -> Duration {
        match self {
            Bucket::Hour => Duration::hours(1),
            Bucket::Day => Duration::days(1),
            Bucket::Week => Duration::weeks(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgressPoint {
    pub bucket_start: DateTime<Utc>,
    pub new_dialogs: usize,
}

/// New dialogs per bucket for `system_id`, with empty buckets between the
/// first and last filled in as zero.
pub fn progress_series(
    system_id: &SystemId,
    bucket: Bucket,
    snapshot: &StoreSnapshot,
) -> Result<Vec<ProgressPoint>, AnalyticsError> {
    ensure_known(system_id, snapshot)?;
    let mut counts: BTreeMap<DateTime<Utc>, usize> = BTreeMap::new();
    for s in snapshot.sessions.iter().filter(|s| s.involves(system_id)) {
        *counts.entry(bucket.floor(s.created_at)).or_insert(0) += 1;
    }
    let (Some(first), Some(last)) = (counts.keys().next().copied(), counts.keys().next_back().copied()) else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    let mut at = first;
    while at <= last {
        out.push(ProgressPoint { bucket_start: at, new_dialogs: counts.get(&at).copied().unwrap_or(0) });
        at += bucket.step();
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub total_dialogs: usize,
    pub usable_dialogs: usize,
    /// `budget / usable_dialogs`, rounded half-up to the cent; absent when nothing is usable.
    pub cost_per_usable: Option<Money>,
}

pub fn collection_cost(budget: Money, sessions: &[Session], min_turns: usize) -> Result<CostReport, AnalyticsError> {
    if budget < Money::ZERO {
        return Err(AnalyticsError::NegativeBudget);
    }
    let usable = sessions.iter().filter(|s| s.is_usable(min_turns)).count();
    Ok(CostReport {
        total_dialogs: sessions.len(),
        usable_dialogs: usable,
        cost_per_usable: budget.div_round_half_up(usable as u64),
    })
}
