//! Append-only event log of sessions, turns, feedback and system changes.
//!
//! Every event is one JSON line `{offset, kind, written_at, payload}` in a
//! per-day file `events-YYYY-MM-DD.jsonl`. Sessions are never stored as
//! rows: they are rebuilt by folding their events in offset order, both on
//! startup and while appending.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, NaiveDate, SecondsFormat, Utc};
use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;
use tracing::warn;

use crate::analytics::{AnalyticsError, DialogFilter};
use crate::model::{
    now_millis, FeedbackEvent, ModelError, Session, SessionId, SessionStatus, SharedDialogState, SystemId, Turn,
};
use crate::registry::{Health, SystemDescriptor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    SessionStarted,
    TurnCompleted,
    Feedback,
    SessionEnded,
    SystemRegistered,
    HealthChanged,
    HumanRating,
    Redacted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub session_id: SessionId,
    pub turn_index: usize,
    pub turn: Turn,
    /// Shared state after the turn, including any updates from the responder.
    pub state: SharedDialogState,
    pub active_system: SystemId,
    pub handed_off: bool,
    pub failover_used: bool,
    pub topic_changed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub session_id: SessionId,
    pub event: FeedbackEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EndReason {
    Client,
    System,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEndRecord {
    pub session_id: SessionId,
    pub reason: EndReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthRecord {
    pub system_id: SystemId,
    pub previous: Health,
    pub current: Health,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub session_id: SessionId,
    pub rating: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedactionRecord {
    pub session_id: SessionId,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventPayload {
    SessionStarted(Box<Session>),
    TurnCompleted(Box<TurnRecord>),
    Feedback(FeedbackRecord),
    SessionEnded(SessionEndRecord),
    SystemRegistered(Box<SystemDescriptor>),
    HealthChanged(HealthRecord),
    HumanRating(RatingRecord),
    Redacted(RedactionRecord),
}

impl EventPayload {
    pub fn kind(&self) -> EventKind {
        match self {
            EventPayload::SessionStarted(_) => EventKind::SessionStarted,
            EventPayload::TurnCompleted(_) => EventKind::TurnCompleted,
            EventPayload::Feedback(_) => EventKind::Feedback,
            EventPayload::SessionEnded(_) => EventKind::SessionEnded,
            EventPayload::SystemRegistered(_) => EventKind::SystemRegistered,
            EventPayload::HealthChanged(_) => EventKind::HealthChanged,
            EventPayload::HumanRating(_) => EventKind::HumanRating,
            EventPayload::Redacted(_) => EventKind::Redacted,
        }
    }

    pub fn session_id(&self) -> Option<SessionId> {
        match self {
            EventPayload::SessionStarted(s) => Some(s.session_id),
            EventPayload::TurnCompleted(t) => Some(t.session_id),
            EventPayload::Feedback(f) => Some(f.session_id),
            EventPayload::SessionEnded(e) => Some(e.session_id),
            EventPayload::HumanRating(r) => Some(r.session_id),
            EventPayload::Redacted(r) => Some(r.session_id),
            EventPayload::SystemRegistered(_) | EventPayload::HealthChanged(_) => None,
        }
    }

    fn to_value(&self) -> serde_json::Result<serde_json::Value> {
        match self {
            EventPayload::SessionStarted(v) => serde_json::to_value(v),
            EventPayload::TurnCompleted(v) => serde_json::to_value(v),
            EventPayload::Feedback(v) => serde_json::to_value(v),
            EventPayload::SessionEnded(v) => serde_json::to_value(v),
            EventPayload::SystemRegistered(v) => serde_json::to_value(v),
            EventPayload::HealthChanged(v) => serde_json::to_value(v),
            EventPayload::HumanRating(v) => serde_json::to_value(v),
            EventPayload::Redacted(v) => serde_json::to_value(v),
        }
    }

    fn from_value(kind: EventKind, value: serde_json::Value) -> serde_json::Result<Self> {
        use serde_json::from_value;
        Ok(match kind {
            EventKind::SessionStarted => EventPayload::SessionStarted(from_value(value)?),
            EventKind::TurnCompleted => EventPayload::TurnCompleted(from_value(value)?),
            EventKind::Feedback => EventPayload::Feedback(from_value(value)?),
            EventKind::SessionEnded => EventPayload::SessionEnded(from_value(value)?),
            EventKind::SystemRegistered => EventPayload::SystemRegistered(from_value(value)?),
            EventKind::HealthChanged => EventPayload::HealthChanged(from_value(value)?),
            EventKind::HumanRating => EventPayload::HumanRating(from_value(value)?),
            EventKind::Redacted => EventPayload::Redacted(from_value(value)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoreEvent {
    pub offset: u64,
    pub written_at: DateTime<Utc>,
    pub payload: EventPayload,
}

impl StoreEvent {
    pub fn kind(&self) -> EventKind {
        self.payload.kind()
    }

    /// The exact log line for this event, without the trailing newline.
    pub fn to_line(&self) -> Result<String, StoreError> {
        serde_json::to_string(self).map_err(|e| StoreError::Serialization(e.to_string()))
    }

    pub fn from_line(line: &str) -> Result<Self, String> {
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let written_at = DateTime::parse_from_rfc3339(&raw.written_at)
            .map_err(|e| format!("written_at: {e}"))?
            .with_timezone(&Utc);
        let payload = EventPayload::from_value(raw.kind, raw.payload).map_err(|e| e.to_string())?;
        Ok(StoreEvent { offset: raw.offset, written_at, payload })
    }
}

impl Serialize for StoreEvent {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let payload = self.payload.to_value().map_err(serde::ser::Error::custom)?;
        let mut st = serializer.serialize_struct("StoreEvent", 4)?;
        st.serialize_field("offset", &self.offset)?;
        st.serialize_field("kind", &self.kind())?;
        st.serialize_field("written_at", &self.written_at.to_rfc3339_opts(SecondsFormat::Millis, true))?;
        st.serialize_field("payload", &payload)?;
        st.end()
    }
}

#[derive(Deserialize)]
struct RawRecord {
    offset: u64,
    kind: EventKind,
    written_at: String,
    payload: serde_json::Value,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage failure: {0}")]
    Storage(#[from] io::Error),
    #[error("serialization failure: {0}")]
    Serialization(String),
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("event rejected: {0}")]
    InvalidEvent(String),
    #[error("corrupt log {file}:{line}: {reason}")]
    Corrupt { file: String, line: usize, reason: String },
}

impl From<ModelError> for StoreError {
    fn from(e: ModelError) -> Self {
        StoreError::InvalidEvent(e.to_string())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StoreOptions {
    /// `fsync` every append before acknowledging it.
    pub sync: bool,
}

impl Default for StoreOptions {
    fn default() -> Self {
        Self { sync: true }
    }
}

/// Sessions and systems as of some offset.
#[derive(Debug, Clone, Default)]
pub struct StoreSnapshot {
    /// Ordered by `created_at` descending, then session id.
    pub sessions: Vec<Session>,
    /// Systems that registered or took part in any session.
    pub systems: BTreeSet<SystemId>,
}

impl StoreSnapshot {
    pub fn from_sessions(mut sessions: Vec<Session>) -> Self {
        sort_newest_first(&mut sessions);
        let mut systems = BTreeSet::new();
        for s in &sessions {
            systems.insert(s.matched_system.clone());
            systems.extend(s.turns.iter().map(|t| t.responder.clone()));
        }
        Self { sessions, systems }
    }
}

pub(crate) fn sort_newest_first(sessions: &mut [Session]) {
    sessions.sort_by(|a, b| b.created_at.cmp(&a.created_at).then_with(|| a.session_id.cmp(&b.session_id)));
}

#[derive(Debug, Default)]
struct Index {
    events: Vec<StoreEvent>,
    sessions: HashMap<SessionId, Session>,
    systems: BTreeMap<SystemId, SystemDescriptor>,
}

enum Change {
    Session(Box<Session>),
    System(Box<SystemDescriptor>),
    HealthOf(SystemId, Health),
}

impl Index {
    /// What applying `payload` would change, without mutating the index.
    fn plan(&self, payload: &EventPayload) -> Result<Change, StoreError> {
        let existing = |id: &SessionId| self.sessions.get(id).cloned().ok_or(StoreError::UnknownSession(*id));
        let change = match payload {
            EventPayload::SessionStarted(s) => {
                if self.sessions.contains_key(&s.session_id) {
                    return Err(StoreError::InvalidEvent(format!("session {} already started", s.session_id)));
                }
                if !s.turns.is_empty() || !s.feedback.is_empty() {
                    return Err(StoreError::InvalidEvent("session must start empty".into()));
                }
                Change::Session(s.clone())
            }
            EventPayload::TurnCompleted(rec) => {
                let mut s = existing(&rec.session_id)?;
                if rec.turn_index != s.turns.len() {
                    return Err(StoreError::InvalidEvent(format!(
                        "turn index {} but session has {} turns",
                        rec.turn_index,
                        s.turns.len()
                    )));
                }
                s.push_turn(rec.turn.clone())?;
                s.state = rec.state.clone();
                s.active_system = rec.active_system.clone();
                Change::Session(Box::new(s))
            }
            EventPayload::Feedback(rec) => {
                let mut s = existing(&rec.session_id)?;
                s.apply_feedback(rec.event.clone())?;
                Change::Session(Box::new(s))
            }
            EventPayload::SessionEnded(rec) => {
                let mut s = existing(&rec.session_id)?;
                s.status = SessionStatus::Ended;
                Change::Session(Box::new(s))
            }
            EventPayload::HumanRating(rec) => {
                if !rec.rating.is_finite() {
                    return Err(StoreError::InvalidEvent("rating must be finite".into()));
                }
                let mut s = existing(&rec.session_id)?;
                s.human_rating = Some(rec.rating);
                Change::Session(Box::new(s))
            }
            EventPayload::Redacted(rec) => {
                let mut s = existing(&rec.session_id)?;
                s.redact();
                Change::Session(Box::new(s))
            }
            EventPayload::SystemRegistered(d) => Change::System(d.clone()),
            EventPayload::HealthChanged(h) => Change::HealthOf(h.system_id.clone(), h.current),
        };
        Ok(change)
    }

    fn commit(&mut self, event: StoreEvent, change: Change) {
        match change {
            Change::Session(s) => {
                self.sessions.insert(s.session_id, *s);
            }
            Change::System(d) => {
                self.systems.insert(d.system_id.clone(), *d);
            }
            Change::HealthOf(id, health) => {
                if let Some(d) = self.systems.get_mut(&id) {
                    d.health = health;
                }
            }
        }
        self.events.push(event);
    }

    fn apply(&mut self, event: StoreEvent) -> Result<(), StoreError> {
        let change = self.plan(&event.payload)?;
        self.commit(event, change);
        Ok(())
    }

    fn next_offset(&self) -> u64 {
        self.events.last().map_or(0, |e| e.offset + 1)
    }
}

#[derive(Debug)]
struct LogWriter {
    dir: PathBuf,
    sync: bool,
    current: Option<(NaiveDate, File)>,
}

impl LogWriter {
    fn write_line(&mut self, at: DateTime<Utc>, line: &str) -> io::Result<()> {
        let day = at.date_naive();
        if self.current.as_ref().is_none_or(|(d, _)| *d != day) {
            let file = OpenOptions::new().create(true).append(true).open(self.dir.join(day_file_name(day)))?;
            self.current = Some((day, file));
        }
        let (_, file) = self.current.as_mut().expect("file opened above");
        let mut buf = Vec::with_capacity(line.len() + 1);
        buf.extend_from_slice(line.as_bytes());
        buf.push(b'\n');
        file.write_all(&buf)?;
        if self.sync {
            file.sync_data()?;
        }
        Ok(())
    }
}

fn day_file_name(day: NaiveDate) -> String {
    format!("events-{}.jsonl", day.format("%Y-%m-%d"))
}

/// List the day files of a store directory in chronological order.
pub fn log_files(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("events-") && n.ends_with(".jsonl"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Single writer, many readers. Readers take short read locks and work on
/// cloned sessions.
#[derive(Debug)]
pub struct DialogStore {
    index: RwLock<Index>,
    writer: Mutex<Option<LogWriter>>,
}

impl Default for DialogStore {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl DialogStore {
    /// A store that keeps events in memory only.
    pub fn in_memory() -> Self {
        Self { index: RwLock::new(Index::default()), writer: Mutex::new(None) }
    }

    /// Opens (or creates) a store directory and replays its log. A torn final
    /// line in the newest file is truncated away.
    pub fn open(dir: impl AsRef<Path>, options: StoreOptions) -> Result<Self, StoreError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let files = log_files(dir)?;
        let mut index = Index::default();
        for (i, path) in files.iter().enumerate() {
            let is_last = i + 1 == files.len();
            replay_file(&mut index, path, is_last)?;
        }
        let writer = LogWriter { dir: dir.to_path_buf(), sync: options.sync, current: None };
        Ok(Self { index: RwLock::new(index), writer: Mutex::new(Some(writer)) })
    }

    /// Loads an exported log (any reader of log lines) into an in-memory store.
    pub fn from_reader(reader: impl Read) -> Result<Self, StoreError> {
        let mut index = Index::default();
        for (n, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let corrupt = |reason: String| StoreError::Corrupt { file: "<input>".into(), line: n + 1, reason };
            let event = StoreEvent::from_line(&line).map_err(corrupt)?;
            if event.offset != index.next_offset() {
                return Err(corrupt(format!("expected offset {}, found {}", index.next_offset(), event.offset)));
            }
            index.apply(event).map_err(|e| corrupt(e.to_string()))?;
        }
        Ok(Self { index: RwLock::new(index), writer: Mutex::new(None) })
    }

    pub fn from_log_file(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::from_reader(File::open(path)?)
    }

    /// Appends an event, durably when file-backed, and returns its offset.
    pub fn append(&self, payload: EventPayload) -> Result<u64, StoreError> {
        self.append_at(payload, now_millis())
    }

    pub fn append_at(&self, payload: EventPayload, written_at: DateTime<Utc>) -> Result<u64, StoreError> {
        let mut writer = self.writer.lock().expect("store writer poisoned");
        let (event, change) = {
            let index = self.index.read().expect("store index poisoned");
            let change = index.plan(&payload)?;
            (StoreEvent { offset: index.next_offset(), written_at, payload }, change)
        };
        if let Some(w) = writer.as_mut() {
            w.write_line(written_at, &event.to_line()?)?;
        }
        let offset = event.offset;
        self.index.write().expect("store index poisoned").commit(event, change);
        Ok(offset)
    }

    pub fn get_session(&self, session_id: &SessionId) -> Result<Session, StoreError> {
        let index = self.index.read().expect("store index poisoned");
        index.sessions.get(session_id).cloned().ok_or(StoreError::UnknownSession(*session_id))
    }

    pub fn session_count(&self) -> usize {
        self.index.read().expect("store index poisoned").sessions.len()
    }

    pub fn event_count(&self) -> usize {
        self.index.read().expect("store index poisoned").events.len()
    }

    pub fn events(&self) -> Vec<StoreEvent> {
        self.index.read().expect("store index poisoned").events.clone()
    }

    pub fn registered_systems(&self) -> Vec<SystemDescriptor> {
        self.index.read().expect("store index poisoned").systems.values().cloned().collect()
    }

    pub fn sessions(&self) -> Vec<Session> {
        let index = self.index.read().expect("store index poisoned");
        let mut sessions: Vec<Session> = index.sessions.values().cloned().collect();
        drop(index);
        sort_newest_first(&mut sessions);
        sessions
    }

    pub fn snapshot(&self) -> StoreSnapshot {
        let index = self.index.read().expect("store index poisoned");
        let sessions: Vec<Session> = index.sessions.values().cloned().collect();
        let registered: Vec<SystemId> = index.systems.keys().cloned().collect();
        drop(index);
        let mut snap = StoreSnapshot::from_sessions(sessions);
        snap.systems.extend(registered);
        snap
    }

    /// Sessions matching every predicate of `filter`, newest first.
    pub fn query(&self, filter: &DialogFilter) -> Result<Vec<Session>, AnalyticsError> {
        filter.validate()?;
        Ok(self.sessions().into_iter().filter(|s| filter.matches(s)).collect())
    }

    /// Writes the full log. For file-backed stores this is the concatenation
    /// of the day files, byte for byte.
    pub fn export(&self, out: &mut impl Write) -> Result<(), StoreError> {
        let writer = self.writer.lock().expect("store writer poisoned");
        match writer.as_ref() {
            Some(w) => {
                for path in log_files(&w.dir)? {
                    io::copy(&mut File::open(path)?, out)?;
                }
            }
            None => {
                for event in self.events() {
                    out.write_all(event.to_line()?.as_bytes())?;
                    out.write_all(b"\n")?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn replay_file(index: &mut Index, path: &Path, is_last: bool) -> Result<(), StoreError> {
    let file_name = path.display().to_string();
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let mut line_no = 0usize;
    while pos < bytes.len() {
        line_no += 1;
        let (line, next, terminated) = match bytes[pos..].iter().position(|b| *b == b'\n') {
            Some(i) => (&bytes[pos..pos + i], pos + i + 1, true),
            None => (&bytes[pos..], bytes.len(), false),
        };
        let parsed = std::str::from_utf8(line)
            .map_err(|e| e.to_string())
            .and_then(StoreEvent::from_line)
            .and_then(|event| {
                if event.offset == index.next_offset() {
                    Ok(event)
                } else {
                    Err(format!("expected offset {}, found {}", index.next_offset(), event.offset))
                }
            });
        match parsed {
            Ok(_) | Err(_) if is_last && !terminated => {
                warn!(file = %file_name, line = line_no, "truncating torn final log line");
                let file = OpenOptions::new().write(true).open(path)?;
                file.set_len(pos as u64)?;
                file.sync_all()?;
                break;
            }
            Ok(event) => {
                index.apply(event).map_err(|e| StoreError::Corrupt {
                    file: file_name.clone(),
                    line: line_no,
                    reason: e.to_string(),
                })?;
            }
            Err(reason) => {
                return Err(StoreError::Corrupt { file: file_name, line: line_no, reason });
            }
        }
        pos = next;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::{session_with_turns, turn};
    use crate::model::{FeedbackKind, Session};
    use chrono::Duration;

    fn t0() -> DateTime<Utc> {
        "2021-06-01T12:00:00Z".parse().unwrap()
    }

    fn start(store: &DialogStore, system: &str, at: DateTime<Utc>) -> Session {
        let s = Session::new(system.into(), at);
        store.append_at(EventPayload::SessionStarted(Box::new(s.clone())), at).unwrap();
        s
    }

    fn add_turn(store: &DialogStore, s: &Session, idx: usize, at: DateTime<Utc>) {
        let rec = TurnRecord {
            session_id: s.session_id,
            turn_index: idx,
            turn: turn(s.active_system.as_str(), &format!("u{idx}"), &format!("s{idx}"), at),
            state: SharedDialogState::default(),
            active_system: s.active_system.clone(),
            handed_off: false,
            failover_used: false,
            topic_changed: false,
        };
        store.append_at(EventPayload::TurnCompleted(Box::new(rec)), at).unwrap();
    }

    #[test]
    fn offsets_start_at_zero_and_increase() {
        let store = DialogStore::in_memory();
        let a = Session::new("x".into(), t0());
        let b = Session::new("x".into(), t0());
        assert_eq!(store.append(EventPayload::SessionStarted(Box::new(a))).unwrap(), 0);
        assert_eq!(store.append(EventPayload::SessionStarted(Box::new(b))).unwrap(), 1);
    }

    #[test]
    fn fold_reconstructs_sessions() {
        let store = DialogStore::in_memory();
        let s = start(&store, "x", t0());
        assert_eq!(store.get_session(&s.session_id).unwrap().turns.len(), 0);
        assert!(store.get_session(&s.session_id).unwrap().is_open());
        add_turn(&store, &s, 0, t0() + Duration::seconds(1));
        add_turn(&store, &s, 1, t0() + Duration::seconds(2));
        store
            .append(EventPayload::SessionEnded(SessionEndRecord { session_id: s.session_id, reason: EndReason::Client }))
            .unwrap();
        let got = store.get_session(&s.session_id).unwrap();
        assert_eq!(got.turns.len(), 2);
        assert_eq!(got.status, SessionStatus::Ended);
        assert!(matches!(store.get_session(&SessionId::random()), Err(StoreError::UnknownSession(_))));
    }

    #[test]
    fn invalid_events_are_rejected_without_writing() {
        let store = DialogStore::in_memory();
        let s = start(&store, "x", t0());
        let bad = FeedbackRecord { session_id: s.session_id, event: FeedbackEvent::new(FeedbackKind::Like, 0, None) };
        assert!(matches!(store.append(EventPayload::Feedback(bad)), Err(StoreError::InvalidEvent(_))));
        let orphan = FeedbackRecord { session_id: SessionId::random(), event: FeedbackEvent::new(FeedbackKind::Like, 0, None) };
        assert!(matches!(store.append(EventPayload::Feedback(orphan)), Err(StoreError::UnknownSession(_))));
        assert_eq!(store.event_count(), 1);
        assert!(matches!(
            store.append(EventPayload::SessionStarted(Box::new(s))),
            Err(StoreError::InvalidEvent(_))
        ));
    }

    #[test]
    fn line_format_field_order() {
        let s = session_with_turns("x", 0, t0());
        let e = StoreEvent { offset: 3, written_at: t0(), payload: EventPayload::SessionStarted(Box::new(s)) };
        let line = e.to_line().unwrap();
        assert!(line.starts_with(r#"{"offset":3,"kind":"SESSION_STARTED","written_at":"2021-06-01T12:00:00.000Z","payload":{"#));
        assert_eq!(StoreEvent::from_line(&line).unwrap(), e);
    }

    #[test]
    fn file_store_reopens_and_splits_days() {
        let dir = tempfile::tempdir().unwrap();
        let (id, ids);
        {
            let store = DialogStore::open(dir.path(), StoreOptions { sync: false }).unwrap();
            let s = start(&store, "x", t0());
            add_turn(&store, &s, 0, t0() + Duration::days(1));
            let other = start(&store, "y", t0() + Duration::days(1));
            id = s.session_id;
            ids = other.session_id;
        }
        assert_eq!(log_files(dir.path()).unwrap().len(), 2);
        let store = DialogStore::open(dir.path(), StoreOptions::default()).unwrap();
        assert_eq!(store.get_session(&id).unwrap().turns.len(), 1);
        assert!(store.get_session(&ids).is_ok());
        assert_eq!(store.event_count(), 3);
        let s = store.get_session(&id).unwrap();
        add_turn(&store, &s, 1, t0() + Duration::days(1) + Duration::seconds(5));
        assert_eq!(store.events().last().unwrap().offset, 3);
    }

    #[test]
    fn export_is_byte_identical_to_log() {
        let dir = tempfile::tempdir().unwrap();
        let store = DialogStore::open(dir.path(), StoreOptions { sync: false }).unwrap();
        let s = start(&store, "x", t0());
        add_turn(&store, &s, 0, t0() + Duration::seconds(3));
        let mut exported = Vec::new();
        store.export(&mut exported).unwrap();
        let on_disk: Vec<u8> = log_files(dir.path()).unwrap().iter().flat_map(|p| fs::read(p).unwrap()).collect();
        assert_eq!(exported, on_disk);

        let offline = DialogStore::from_reader(exported.as_slice()).unwrap();
        assert_eq!(offline.get_session(&s.session_id).unwrap(), store.get_session(&s.session_id).unwrap());
        let mut again = Vec::new();
        offline.export(&mut again).unwrap();
        assert_eq!(again, exported);
    }

    #[test]
    fn torn_tail_is_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let id;
        {
            let store = DialogStore::open(dir.path(), StoreOptions { sync: false }).unwrap();
            let s = start(&store, "x", t0());
            add_turn(&store, &s, 0, t0() + Duration::seconds(1));
            id = s.session_id;
        }
        let path = log_files(dir.path()).unwrap().pop().unwrap();
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(br#"{"offset":2,"kind":"FEED"#).unwrap();
        drop(f);
        let store = DialogStore::open(dir.path(), StoreOptions { sync: false }).unwrap();
        assert_eq!(store.event_count(), 2);
        assert!(fs::read_to_string(&path).unwrap().ends_with('\n'));
        let s = store.get_session(&id).unwrap();
        add_turn(&store, &s, 1, t0() + Duration::seconds(2));
        drop(store);
        let store = DialogStore::open(dir.path(), StoreOptions { sync: false }).unwrap();
        assert_eq!(store.get_session(&id).unwrap().turns.len(), 2);
    }

    #[test]
    fn corruption_mid_log_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("events-2021-06-01.jsonl"), "not json\n").unwrap();
        assert!(matches!(
            DialogStore::open(dir.path(), StoreOptions::default()),
            Err(StoreError::Corrupt { line: 1, .. })
        ));
    }

    #[test]
    fn redaction_and_ratings() {
        let store = DialogStore::in_memory();
        let s = start(&store, "x", t0());
        add_turn(&store, &s, 0, t0() + Duration::seconds(1));
        store.append(EventPayload::HumanRating(RatingRecord { session_id: s.session_id, rating: 4.0 })).unwrap();
        store.append(EventPayload::Redacted(RedactionRecord { session_id: s.session_id })).unwrap();
        let got = store.get_session(&s.session_id).unwrap();
        assert_eq!(got.human_rating, Some(4.0));
        assert_eq!(got.turns.len(), 1);
        assert!(got.turns[0].user.text.is_empty());
        // The turn event itself is untouched.
        let first_turn = store.events().into_iter().find(|e| e.kind() == EventKind::TurnCompleted).unwrap();
        let EventPayload::TurnCompleted(rec) = first_turn.payload else { unreachable!() };
        assert_eq!(rec.turn.user.text, "u0");
    }
}
