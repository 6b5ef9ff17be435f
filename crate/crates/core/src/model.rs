//! Domain types shared across the gateway: utterances, turns, feedback,
//! shared slot state and sessions.
//!
//! A [`Turn`] is one user utterance paired with one system utterance, so a
//! session's utterance count is always twice its turn count. A user message
//! still waiting on a reply is never stored as a turn.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

/// Default number of completed turns for a dialog to count as usable.
pub const DEFAULT_MIN_TURNS: usize = 4;

/// Current time truncated to millisecond precision.
pub fn now_millis() -> DateTime<Utc> {
    Utc::now().trunc_subsecs(3)
}

/// Identifier of a registered remote dialog system.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SystemId(String);

impl SystemId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SystemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SystemId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

/// Internal session identifier. Never handed to chat clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(Uuid);

impl SessionId {
    pub fn random() -> Self {
        Self(Uuid::new_v4())
    }

    pub fn from_uuid(id: Uuid) -> Self {
        Self(id)
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl std::str::FromStr for SessionId {
    type Err = uuid::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Uuid::parse_str(s).map(Self)
    }
}

/// Client-facing session handle: 128 random bits, unrelated to [`SessionId`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionToken(String);

impl SessionToken {
    pub fn random() -> Self {
        Self(format!("{:032x}", rand::random::<u128>()))
    }

    pub fn new(token: impl Into<String>) -> Self {
        Self(token.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SessionToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Side {
    User,
    System,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub side: Side,
    pub text: String,
    pub timestamp: DateTime<Utc>,
}

impl Utterance {
    pub fn user(text: impl Into<String>, timestamp: DateTime<Utc>) -> Self {
        Self { side: Side::User, text: text.into(), timestamp }
    }

    pub fn system(text: impl Into<String>, timestamp: DateTime<Utc>) -> Self {
        Self { side: Side::System, text: text.into(), timestamp }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub user: Utterance,
    pub system: Utterance,
    pub responder: SystemId,
    pub latency_ms: u64,
}

impl Turn {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.user.side != Side::User || self.system.side != Side::System {
            return Err(ModelError::MisorderedTurn);
        }
        if self.user.text.is_empty() {
            return Err(ModelError::EmptyUserUtterance);
        }
        if self.system.timestamp < self.user.timestamp {
            return Err(ModelError::NonMonotoneTimestamp);
        }
        Ok(())
    }
}

/// The five user actions offered under every system reply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FeedbackKind {
    Like,
    Dislike,
    Feedback,
    ImproveResponse,
    EndConversation,
}

impl FeedbackKind {
    pub const ALL: [FeedbackKind; 5] = [
        FeedbackKind::Like,
        FeedbackKind::Dislike,
        FeedbackKind::Feedback,
        FeedbackKind::ImproveResponse,
        FeedbackKind::EndConversation,
    ];

    /// Free-text kinds carry the user's comment or corrected response.
    pub fn requires_payload(self) -> bool {
        matches!(self, FeedbackKind::Feedback | FeedbackKind::ImproveResponse)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub kind: FeedbackKind,
    pub turn_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
    pub timestamp: DateTime<Utc>,
}

impl FeedbackEvent {
    pub fn new(kind: FeedbackKind, turn_index: usize, payload: Option<String>) -> Self {
        Self { kind, turn_index, payload, timestamp: now_millis() }
    }

    pub fn validate(&self, turn_count: usize) -> Result<(), ModelError> {
        if self.turn_index >= turn_count {
            return Err(ModelError::InvalidTurnIndex { turn_index: self.turn_index, turn_count });
        }
        let has_text = self.payload.as_deref().is_some_and(|p| !p.trim().is_empty());
        if self.kind.requires_payload() && !has_text {
            return Err(ModelError::MissingPayload(self.kind));
        }
        if !self.kind.requires_payload() && self.payload.is_some() {
            return Err(ModelError::UnexpectedPayload(self.kind));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotValue {
    pub value: String,
    pub source_system: SystemId,
    pub set_at_turn: usize,
}

/// Slot map carried across system hand-offs within one session.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharedDialogState {
    pub slots: BTreeMap<String, SlotValue>,
}

impl SharedDialogState {
    pub fn get(&self, slot: &str) -> Option<&str> {
        self.slots.get(slot).map(|v| v.value.as_str())
    }

    pub fn latest_turn(&self) -> Option<usize> {
        self.slots.values().map(|v| v.set_at_turn).max()
    }

    /// Slot values without provenance.
    pub fn values(&self) -> BTreeMap<String, String> {
        self.slots.iter().map(|(k, v)| (k.clone(), v.value.clone())).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SessionStatus {
    Open,
    Ended,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: SessionId,
    pub session_token: SessionToken,
    /// System the session was randomly matched with at start.
    pub matched_system: SystemId,
    pub active_system: SystemId,
    pub turns: Vec<Turn>,
    pub state: SharedDialogState,
    pub feedback: Vec<FeedbackEvent>,
    pub status: SessionStatus,
    pub created_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "HashMap::is_empty")]
    pub user_meta: HashMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_rating: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitCounts {
    pub turns: usize,
    pub utterances: usize,
}

impl Session {
    pub fn new(system: SystemId, created_at: DateTime<Utc>) -> Self {
        Self {
            session_id: SessionId::random(),
            session_token: SessionToken::random(),
            matched_system: system.clone(),
            active_system: system,
            turns: Vec::new(),
            state: SharedDialogState::default(),
            feedback: Vec::new(),
            status: SessionStatus::Open,
            created_at,
            user_meta: HashMap::new(),
            human_rating: None,
        }
    }

    pub fn is_open(&self) -> bool {
        self.status == SessionStatus::Open
    }

    pub fn count_units(&self) -> UnitCounts {
        let turns = self.turns.len();
        UnitCounts { turns, utterances: 2 * turns }
    }

    /// At least `min_turns` completed turns (equivalently `2 * min_turns` utterances).
    pub fn is_usable(&self, min_turns: usize) -> bool {
        self.count_units().turns >= min_turns
    }

    /// Whether `system` was matched to this session or answered any of its turns.
    pub fn involves(&self, system: &SystemId) -> bool {
        &self.matched_system == system || self.turns.iter().any(|t| &t.responder == system)
    }

    pub fn feedback_count(&self, kind: FeedbackKind) -> usize {
        self.feedback.iter().filter(|f| f.kind == kind).count()
    }

    /// Latest timestamp recorded in the session, used to keep timestamps monotone.
    pub fn last_timestamp(&self) -> DateTime<Utc> {
        self.turns.last().map(|t| t.system.timestamp).unwrap_or(self.created_at)
    }

    pub fn push_turn(&mut self, turn: Turn) -> Result<(), ModelError> {
        if !self.is_open() {
            return Err(ModelError::SessionEnded);
        }
        turn.validate()?;
        if turn.user.timestamp < self.last_timestamp() {
            return Err(ModelError::NonMonotoneTimestamp);
        }
        self.turns.push(turn);
        Ok(())
    }

    /// Records a feedback event. `END_CONVERSATION` also closes the session.
    pub fn apply_feedback(&mut self, event: FeedbackEvent) -> Result<(), ModelError> {
        event.validate(self.turns.len())?;
        if event.kind == FeedbackKind::EndConversation {
            self.status = SessionStatus::Ended;
        }
        self.feedback.push(event);
        Ok(())
    }

    /// Blanks every utterance and feedback text while keeping all counts.
    pub fn redact(&mut self) {
        for turn in &mut self.turns {
            turn.user.text.clear();
            turn.system.text.clear();
        }
        for event in &mut self.feedback {
            if event.payload.is_some() {
                event.payload = Some(String::new());
            }
        }
        self.user_meta.clear();
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("turn must pair a USER utterance with a SYSTEM utterance")]
    MisorderedTurn,
    #[error("user utterance is empty")]
    EmptyUserUtterance,
    #[error("timestamps must be non-decreasing within a session")]
    NonMonotoneTimestamp,
    #[error("session has ended")]
    SessionEnded,
    #[error("turn index {turn_index} out of range for {turn_count} turns")]
    InvalidTurnIndex { turn_index: usize, turn_count: usize },
    #[error("{0:?} feedback requires a non-empty payload")]
    MissingPayload(FeedbackKind),
    #[error("{0:?} feedback takes no payload")]
    UnexpectedPayload(FeedbackKind),
}
