//! Session lifecycle: random matching, per-turn routing with shared state,
//! failover to equivalent systems, topic changes and feedback.

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, info, warn};

use crate::dialog_state::{
    default_domain_rules, detect_domain, merge_state, DomainRule, SchemaError, SlotExtractor, SlotSchema,
};
use crate::model::{now_millis, FeedbackEvent, ModelError, Session, SessionId, SessionToken, SystemId, Turn, Utterance};
use crate::protocol::{Connector, ConnectorError, ConnectorRequest, ConnectorResponse};
use crate::registry::{ProbeResult, Registry, RegistryError, SystemDescriptor};
use crate::selection::SelectionPolicy;
use crate::store::{
    DialogStore, EndReason, EventPayload, FeedbackRecord, HealthRecord, SessionEndRecord, StoreError, TurnRecord,
};

pub const DEFAULT_CONNECTOR_TIMEOUT: Duration = Duration::from_secs(10);

pub const DEFAULT_TOPIC_PROMPTS: [&str; 3] = [
    "Let's talk about something else. Would you like a restaurant recommendation?",
    "How about a change of topic? I can tell you the weather somewhere.",
    "Let's try something different. Do you want to play a quick game?",
];

#[derive(Debug, Clone)]
pub struct OrchestratorConfig {
    pub slot_schema: SlotSchema,
    pub domain_rules: Vec<DomainRule>,
    /// Used in rotation when a failed system has no working equivalent.
    pub topic_prompts: Vec<String>,
    pub connector_timeout: Duration,
    pub selection_seed: Option<u64>,
    pub greeting: Option<String>,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self {
            slot_schema: SlotSchema::default(),
            domain_rules: default_domain_rules(),
            topic_prompts: DEFAULT_TOPIC_PROMPTS.iter().map(|p| p.to_string()).collect(),
            connector_timeout: DEFAULT_CONNECTOR_TIMEOUT,
            selection_seed: None,
            greeting: Some("Hi! What can I help you with?".into()),
        }
    }
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("unknown session")]
    UnknownSession,
    #[error("session has ended")]
    SessionEnded,
    #[error("no dialog systems are available")]
    NoSystemsAvailable,
    #[error("every candidate system failed to respond")]
    AllSystemsFailed,
    #[error("utterance is empty")]
    EmptyUtterance,
    #[error("turn index {turn_index} is out of range for {turn_count} turns")]
    InvalidTurnIndex { turn_index: usize, turn_count: usize },
    #[error("feedback of this kind needs a non-empty payload")]
    MissingPayload,
    #[error("feedback of this kind takes no payload")]
    UnexpectedPayload,
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("storage failure: {0}")]
    Storage(String),
}

impl OrchestratorError {
    /// Stable machine-readable code used in client error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            Self::UnknownSession => "UNKNOWN_SESSION",
            Self::SessionEnded => "SESSION_ENDED",
            Self::NoSystemsAvailable => "NO_SYSTEMS_AVAILABLE",
            Self::AllSystemsFailed => "ALL_SYSTEMS_FAILED",
            Self::EmptyUtterance => "EMPTY_UTTERANCE",
            Self::InvalidTurnIndex { .. } => "INVALID_TURN_INDEX",
            Self::MissingPayload => "MISSING_PAYLOAD",
            Self::UnexpectedPayload => "UNEXPECTED_PAYLOAD",
            Self::Registry(RegistryError::DuplicateId(_)) => "DUPLICATE_ID",
            Self::Registry(RegistryError::InvalidEndpoint(_)) => "INVALID_ENDPOINT",
            Self::Registry(RegistryError::EmptyDomains(_)) => "EMPTY_DOMAINS",
            Self::Registry(RegistryError::UnknownSystem(_)) => "UNKNOWN_SYSTEM",
            Self::InvalidConfig(_) => "INVALID_CONFIG",
            Self::Storage(_) => "STORAGE_FAILURE",
        }
    }
}

impl From<ModelError> for OrchestratorError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::SessionEnded => Self::SessionEnded,
            ModelError::InvalidTurnIndex { turn_index, turn_count } => Self::InvalidTurnIndex { turn_index, turn_count },
            ModelError::MissingPayload(_) => Self::MissingPayload,
            ModelError::UnexpectedPayload(_) => Self::UnexpectedPayload,
            ModelError::EmptyUserUtterance => Self::EmptyUtterance,
            other => Self::Storage(other.to_string()),
        }
    }
}

impl From<StoreError> for OrchestratorError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownSession(_) => Self::UnknownSession,
            other => Self::Storage(other.to_string()),
        }
    }
}

impl From<SchemaError> for OrchestratorError {
    fn from(e: SchemaError) -> Self {
        Self::InvalidConfig(e.to_string())
    }
}

/// Result of one routed turn. `responder` is internal and must not reach chat clients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingOutcome {
    pub turn_index: usize,
    pub response_text: String,
    pub responder: SystemId,
    pub handed_off: bool,
    pub failover_used: bool,
    pub topic_changed: bool,
    pub session_ended: bool,
}

/// What a caller gets back from [`Orchestrator::start_session`].
#[derive(Debug, Clone)]
pub struct StartedSession {
    pub session_id: SessionId,
    pub session_token: SessionToken,
    pub greeting: Option<String>,
}

struct Reply {
    responder: SystemId,
    response: ConnectorResponse,
    failover_used: bool,
    topic_changed: bool,
}

pub struct Orchestrator {
    registry: Arc<Registry>,
    store: Arc<DialogStore>,
    connector: Arc<dyn Connector>,
    policy: Mutex<SelectionPolicy>,
    extractor: SlotExtractor,
    slot_names: BTreeSet<String>,
    config: OrchestratorConfig,
    next_prompt: AtomicUsize,
    tokens: RwLock<HashMap<SessionToken, SessionId>>,
    locks: Mutex<HashMap<SessionId, Arc<tokio::sync::Mutex<()>>>>,
}

impl std::fmt::Debug for Orchestrator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Orchestrator").field("config", &self.config).finish_non_exhaustive()
    }
}

impl Orchestrator {
    /// Builds an orchestrator over `store`, re-registering every system the
    /// store knows about and restoring session tokens and assignment counts.
    pub fn new(
        config: OrchestratorConfig,
        registry: Arc<Registry>,
        store: Arc<DialogStore>,
        connector: Arc<dyn Connector>,
    ) -> Result<Self, OrchestratorError> {
        if config.topic_prompts.iter().all(|p| p.trim().is_empty()) {
            return Err(OrchestratorError::InvalidConfig("at least one topic prompt is required".into()));
        }
        for rule in &config.domain_rules {
            rule.validate()?;
        }
        let extractor = config.slot_schema.compile()?;
        let slot_names = config.slot_schema.slot_names();

        for d in store.registered_systems() {
            if !registry.contains(&d.system_id) {
                registry.register(d)?;
            }
        }
        let sessions = store.sessions();
        let mut counts: HashMap<SystemId, u64> = HashMap::new();
        for s in &sessions {
            *counts.entry(s.matched_system.clone()).or_default() += 1;
        }
        let tokens = sessions.iter().map(|s| (s.session_token.clone(), s.session_id)).collect();
        let policy = SelectionPolicy::new(config.selection_seed).with_counts(counts);
        info!(seed = policy.seed(), sessions = sessions.len(), "orchestrator ready");

        Ok(Self {
            registry,
            store,
            connector,
            policy: Mutex::new(policy),
            extractor,
            slot_names,
            config,
            next_prompt: AtomicUsize::new(0),
            tokens: RwLock::new(tokens),
            locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn store(&self) -> &Arc<DialogStore> {
        &self.store
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.config
    }

    pub fn assignment_counts(&self) -> Vec<(SystemId, u64)> {
        let policy = self.policy.lock().expect("policy lock poisoned");
        policy.assignment_counts().iter().map(|(k, v)| (k.clone(), *v)).collect()
    }

    fn session_lock(&self, id: SessionId) -> Arc<tokio::sync::Mutex<()>> {
        let mut locks = self.locks.lock().expect("session lock table poisoned");
        locks.entry(id).or_default().clone()
    }

    pub fn resolve_token(&self, token: &SessionToken) -> Result<SessionId, OrchestratorError> {
        let tokens = self.tokens.read().expect("token table poisoned");
        tokens.get(token).copied().ok_or(OrchestratorError::UnknownSession)
    }

    pub fn session(&self, id: &SessionId) -> Result<Session, OrchestratorError> {
        Ok(self.store.get_session(id)?)
    }

    pub fn register_system(&self, descriptor: SystemDescriptor) -> Result<SystemId, OrchestratorError> {
        let id = self.registry.register(descriptor)?;
        let stored = self.registry.get(&id).ok_or_else(|| RegistryError::UnknownSystem(id.clone()))?;
        self.store.append(EventPayload::SystemRegistered(Box::new(stored)))?;
        info!(system = %id, "system registered");
        Ok(id)
    }

    /// Feeds a probe result into the registry and logs any health change.
    pub fn record_probe(&self, system: &SystemId, result: ProbeResult) -> Result<(), OrchestratorError> {
        let t = self.registry.record_probe(system, result)?;
        if t.changed() {
            info!(system = %system, from = ?t.previous, to = ?t.current, "health changed");
            self.store.append(EventPayload::HealthChanged(HealthRecord {
                system_id: system.clone(),
                previous: t.previous,
                current: t.current,
            }))?;
        }
        Ok(())
    }

    /// Pings every registered system once.
    pub async fn probe_all(&self) {
        for d in self.registry.list() {
            let result = match tokio::time::timeout(self.config.connector_timeout, self.connector.ping(&d)).await {
                Ok(Ok(())) => ProbeResult::Ok,
                Ok(Err(e)) => e.as_probe(),
                Err(_) => ProbeResult::Timeout,
            };
            if let Err(e) = self.record_probe(&d.system_id, result) {
                warn!(system = %d.system_id, error = %e, "could not record probe");
            }
        }
    }

    pub fn start_session(&self, user_meta: HashMap<String, String>) -> Result<StartedSession, OrchestratorError> {
        let candidates = self.registry.selectable();
        let system = {
            let mut policy = self.policy.lock().expect("policy lock poisoned");
            policy.select(&candidates).map_err(|_| OrchestratorError::NoSystemsAvailable)?
        };
        let mut session = Session::new(system, now_millis());
        session.user_meta = user_meta;
        let started = StartedSession {
            session_id: session.session_id,
            session_token: session.session_token.clone(),
            greeting: self.config.greeting.clone(),
        };
        self.store.append(EventPayload::SessionStarted(Box::new(session)))?;
        self.tokens
            .write()
            .expect("token table poisoned")
            .insert(started.session_token.clone(), started.session_id);
        debug!(session = %started.session_id, "session started");
        Ok(started)
    }

    pub async fn handle_utterance(&self, id: SessionId, text: &str) -> Result<RoutingOutcome, OrchestratorError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(OrchestratorError::EmptyUtterance);
        }
        let lock = self.session_lock(id);
        let _guard = lock.lock().await;

        let session = self.store.get_session(&id)?;
        if !session.is_open() {
            return Err(OrchestratorError::SessionEnded);
        }
        let turn_index = session.turns.len();
        let user_at = now_millis().max(session.last_timestamp());
        let previous = session.active_system.clone();

        // (1) Slots mentioned by the user are attributed to the system they were talking to.
        let extracted = self.extractor.extract(text);
        let state = merge_state(&session.state, &extracted, &previous, turn_index)
            .map_err(|e| OrchestratorError::Storage(e.to_string()))?;

        // (2) Pre-route to a system serving the detected domain.
        let domain = detect_domain(text, &self.config.domain_rules);
        let mut target = previous.clone();
        if let Some(d) = &domain {
            let serves = self.registry.get(&previous).is_some_and(|s| s.serves(d));
            if !serves {
                let equivalents = self.registry.equivalents(d, None);
                if !equivalents.is_empty() {
                    let mut policy = self.policy.lock().expect("policy lock poisoned");
                    target = policy.select(&equivalents).map_err(|_| OrchestratorError::AllSystemsFailed)?;
                }
            }
        }

        // (3, 4) Call the responder, failing over if it does not answer.
        let request = ConnectorRequest {
            session_token: session.session_token.clone(),
            user_utterance: text.to_string(),
            dialog_state: state.clone(),
        };
        let started = Instant::now();
        let reply = self.route(&target, domain.as_deref(), &request).await?;
        let latency_ms = u64::try_from(started.elapsed().as_millis()).unwrap_or(u64::MAX);

        // (5, 6) Record the turn with the responder's state updates merged in.
        let responder = reply.responder.clone();
        let updates = reply.response.state_updates.clone().unwrap_or_default();
        let state = merge_state(&state, &updates, &responder, turn_index)
            .map_err(|e| OrchestratorError::Storage(e.to_string()))?;
        let system_at = now_millis().max(user_at);
        let handed_off = target != previous && responder != previous;
        let turn = Turn {
            user: Utterance::user(text, user_at),
            system: Utterance::system(reply.response.response_text.clone(), system_at),
            responder: responder.clone(),
            latency_ms,
        };
        self.store.append(EventPayload::TurnCompleted(Box::new(TurnRecord {
            session_id: id,
            turn_index,
            turn,
            state,
            active_system: responder.clone(),
            handed_off,
            failover_used: reply.failover_used,
            topic_changed: reply.topic_changed,
        })))?;

        let session_ended = reply.response.ends_session();
        if session_ended {
            self.store.append(EventPayload::SessionEnded(SessionEndRecord { session_id: id, reason: EndReason::System }))?;
        }
        if handed_off || reply.failover_used {
            info!(session = %id, from = %previous, to = %responder, handed_off, failover = reply.failover_used,
                topic_changed = reply.topic_changed, "session re-routed");
        }
        Ok(RoutingOutcome {
            turn_index,
            response_text: reply.response.response_text,
            responder,
            handed_off,
            failover_used: reply.failover_used,
            topic_changed: reply.topic_changed,
            session_ended,
        })
    }

    /// One attempt against `system`, bounded by the connector timeout. The
    /// outcome also counts as a health probe.
    async fn attempt(&self, system: &SystemId, request: &ConnectorRequest) -> Result<ConnectorResponse, ConnectorError> {
        let Some(descriptor) = self.registry.get(system) else {
            return Err(ConnectorError::Transport(format!("{system} is not registered")));
        };
        let result = match tokio::time::timeout(self.config.connector_timeout, self.connector.call(&descriptor, request)).await {
            Ok(Ok(response)) => response.validate(&self.slot_names).map(|()| response),
            Ok(Err(e)) => Err(e),
            Err(_) => Err(ConnectorError::Timeout),
        };
        let probe = match &result {
            Ok(_) => ProbeResult::Ok,
            Err(e) => {
                warn!(system = %system, error = %e, "connector call failed");
                e.as_probe()
            }
        };
        if let Err(e) = self.record_probe(system, probe) {
            warn!(system = %system, error = %e, "could not record probe");
        }
        result
    }

    async fn route(
        &self,
        target: &SystemId,
        domain: Option<&str>,
        request: &ConnectorRequest,
    ) -> Result<Reply, OrchestratorError> {
        let target_up = self.registry.get(target).is_some_and(|d| d.health != crate::registry::Health::Down);
        if target_up {
            if let Ok(response) = self.attempt(target, request).await {
                return Ok(Reply { responder: target.clone(), response, failover_used: false, topic_changed: false });
            }
        }
        self.failover(target, domain, request).await
    }

    /// Tries each working equivalent of `failed` once, in selection-policy
    /// order, replaying the user's utterance. With none left it moves the
    /// session to a live system in another domain and answers with a topic
    /// change prompt.
    async fn failover(
        &self,
        failed: &SystemId,
        domain: Option<&str>,
        request: &ConnectorRequest,
    ) -> Result<Reply, OrchestratorError> {
        let failed_domains: BTreeSet<String> = self.registry.get(failed).map(|d| d.domains).unwrap_or_default();
        let domains: Vec<String> = match domain {
            Some(d) if failed_domains.contains(d) => vec![d.to_string()],
            _ => failed_domains.iter().cloned().collect(),
        };
        let mut equivalents: Vec<SystemId> = Vec::new();
        for d in &domains {
            for id in self.registry.equivalents(d, Some(failed)) {
                if !equivalents.contains(&id) {
                    equivalents.push(id);
                }
            }
        }
        equivalents.sort();
        let order = self.policy.lock().expect("policy lock poisoned").ordering(&equivalents);
        for candidate in &order {
            if let Ok(response) = self.attempt(candidate, request).await {
                return Ok(Reply { responder: candidate.clone(), response, failover_used: true, topic_changed: false });
            }
        }

        let others: Vec<SystemId> = self
            .registry
            .selectable()
            .into_iter()
            .filter(|id| id != failed && !order.contains(id))
            .filter(|id| self.registry.get(id).is_some_and(|d| d.domains.is_disjoint(&failed_domains)))
            .collect();
        let order = self.policy.lock().expect("policy lock poisoned").ordering(&others);
        for candidate in order {
            let Some(descriptor) = self.registry.get(&candidate) else { continue };
            let alive = matches!(
                tokio::time::timeout(self.config.connector_timeout, self.connector.ping(&descriptor)).await,
                Ok(Ok(()))
            );
            let probe = if alive { ProbeResult::Ok } else { ProbeResult::Error };
            if let Err(e) = self.record_probe(&candidate, probe) {
                warn!(system = %candidate, error = %e, "could not record probe");
            }
            if alive {
                return Ok(Reply {
                    responder: candidate,
                    response: ConnectorResponse::text(self.next_topic_prompt()),
                    failover_used: true,
                    topic_changed: true,
                });
            }
        }
        Err(OrchestratorError::AllSystemsFailed)
    }

    fn next_topic_prompt(&self) -> String {
        let prompts: Vec<&String> = self.config.topic_prompts.iter().filter(|p| !p.trim().is_empty()).collect();
        let i = self.next_prompt.fetch_add(1, Ordering::Relaxed);
        prompts[i % prompts.len()].clone()
    }

    pub async fn record_feedback(&self, id: SessionId, event: FeedbackEvent) -> Result<(), OrchestratorError> {
        let lock = self.session_lock(id);
        let _guard = lock.lock().await;
        let session = self.store.get_session(&id)?;
        event.validate(session.turns.len())?;
        self.store.append(EventPayload::Feedback(FeedbackRecord { session_id: id, event }))?;
        Ok(())
    }

    /// Ends a session at the client's request. Ending twice is a no-op.
    pub async fn end_session(&self, id: SessionId) -> Result<(), OrchestratorError> {
        let lock = self.session_lock(id);
        let _guard = lock.lock().await;
        let session = self.store.get_session(&id)?;
        if session.is_open() {
            self.store.append(EventPayload::SessionEnded(SessionEndRecord { session_id: id, reason: EndReason::Client }))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FeedbackKind;
    use crate::registry::Health;
    use async_trait::async_trait;
    use std::collections::BTreeMap;
    use url::Url;

    #[derive(Clone, Copy, PartialEq, Eq)]
    enum Behavior {
        Echo,
        Hang,
        Fail,
    }

    #[derive(Default)]
    struct Script {
        behavior: Mutex<HashMap<SystemId, Behavior>>,
        calls: Mutex<Vec<(SystemId, ConnectorRequest)>>,
    }

    impl Script {
        fn set(&self, id: &str, b: Behavior) {
            self.behavior.lock().unwrap().insert(SystemId::new(id), b);
        }
        fn behavior(&self, id: &SystemId) -> Behavior {
            self.behavior.lock().unwrap().get(id).copied().unwrap_or(Behavior::Echo)
        }
        fn calls(&self) -> Vec<(SystemId, ConnectorRequest)> {
            self.calls.lock().unwrap().clone()
        }
    }

    #[async_trait]
    impl Connector for Script {
        async fn call(&self, s: &SystemDescriptor, r: &ConnectorRequest) -> Result<ConnectorResponse, ConnectorError> {
            self.calls.lock().unwrap().push((s.system_id.clone(), r.clone()));
            match self.behavior(&s.system_id) {
                Behavior::Echo => Ok(ConnectorResponse::text(format!("{}: {}", s.system_id, r.user_utterance))),
                Behavior::Hang => {
                    tokio::time::sleep(Duration::from_secs(3600)).await;
                    unreachable!()
                }
                Behavior::Fail => Err(ConnectorError::Transport("refused".into())),
            }
        }

        async fn ping(&self, s: &SystemDescriptor) -> Result<(), ConnectorError> {
            match self.behavior(&s.system_id) {
                Behavior::Echo => Ok(()),
                _ => Err(ConnectorError::Transport("refused".into())),
            }
        }
    }

    fn descriptor(id: &str, domain: &str) -> SystemDescriptor {
        SystemDescriptor::new(id, format!("{id} bot"), Url::parse(&format!("http://{id}.test/")).unwrap(), &[domain])
    }

    fn setup(systems: &[(&str, &str)]) -> (Orchestrator, Arc<Script>) {
        let script = Arc::new(Script::default());
        let config = OrchestratorConfig {
            connector_timeout: Duration::from_millis(200),
            selection_seed: Some(7),
            ..OrchestratorConfig::default()
        };
        let orch = Orchestrator::new(config, Arc::new(Registry::default()), Arc::new(DialogStore::in_memory()), script.clone())
            .unwrap();
        for (id, domain) in systems {
            orch.register_system(descriptor(id, domain)).unwrap();
        }
        (orch, script)
    }

    #[test]
    fn no_systems_available() {
        let (orch, _) = setup(&[]);
        assert!(matches!(orch.start_session(HashMap::new()), Err(OrchestratorError::NoSystemsAvailable)));
    }

    #[tokio::test]
    async fn hand_off_carries_city() {
        let (orch, script) = setup(&[("wx", "weather"), ("food", "restaurant")]);
        let s = orch.start_session(HashMap::new()).unwrap();
        let first = orch.handle_utterance(s.session_id, "What's the weather in Pittsburgh today?").await.unwrap();
        assert_eq!(first.responder, SystemId::new("wx"));
        let second = orch.handle_utterance(s.session_id, "find me a restaurant").await.unwrap();
        assert!(second.handed_off);
        assert!(!second.failover_used);
        assert_eq!(second.responder, SystemId::new("food"));
        let calls = script.calls();
        let (to, req) = calls.last().unwrap();
        assert_eq!(to, &SystemId::new("food"));
        assert_eq!(req.dialog_state.get("city"), Some("Pittsburgh"));
        let session = orch.session(&s.session_id).unwrap();
        assert_eq!(session.turns.len(), 2);
        assert_eq!(session.active_system, SystemId::new("food"));
    }

    #[tokio::test]
    async fn failover_to_equivalent_then_topic_change_then_exhaustion() {
        let (orch, script) = setup(&[("wx-a", "weather"), ("wx-b", "weather"), ("chat", "chitchat")]);
        let s = orch.start_session(HashMap::new()).unwrap();
        orch.handle_utterance(s.session_id, "is it going to rain").await.unwrap();
        let active = orch.session(&s.session_id).unwrap().active_system;
        let other = if active.as_str() == "wx-a" { "wx-b" } else { "wx-a" };

        script.set(active.as_str(), Behavior::Hang);
        let out = orch.handle_utterance(s.session_id, "and the forecast?").await.unwrap();
        assert!(out.failover_used && !out.topic_changed);
        assert_eq!(out.responder.as_str(), other);
        // The failed system was sent the same utterance as the equivalent.
        let calls = script.calls();
        assert_eq!(calls[calls.len() - 1].1.user_utterance, calls[calls.len() - 2].1.user_utterance);

        script.set(other, Behavior::Fail);
        let out = orch.handle_utterance(s.session_id, "weather please").await.unwrap();
        assert!(out.topic_changed);
        assert_eq!(out.responder.as_str(), "chat");
        assert!(DEFAULT_TOPIC_PROMPTS.contains(&out.response_text.as_str()));
        assert_eq!(orch.session(&s.session_id).unwrap().active_system.as_str(), "chat");

        script.set("chat", Behavior::Fail);
        let before = orch.session(&s.session_id).unwrap().turns.len();
        assert!(matches!(
            orch.handle_utterance(s.session_id, "hello?").await,
            Err(OrchestratorError::AllSystemsFailed)
        ));
        assert_eq!(orch.session(&s.session_id).unwrap().turns.len(), before);
    }

    #[tokio::test]
    async fn down_systems_are_skipped() {
        let (orch, script) = setup(&[("wx-a", "weather"), ("wx-b", "weather")]);
        for _ in 0..3 {
            orch.record_probe(&SystemId::new("wx-b"), ProbeResult::Error).unwrap();
        }
        assert_eq!(orch.registry().health(&SystemId::new("wx-b")), Some(Health::Down));
        let s = orch.start_session(HashMap::new()).unwrap();
        script.set("wx-a", Behavior::Fail);
        assert!(matches!(
            orch.handle_utterance(s.session_id, "weather").await,
            Err(OrchestratorError::AllSystemsFailed)
        ));
        assert!(script.calls().iter().all(|(id, _)| id.as_str() == "wx-a"));
    }

    #[tokio::test]
    async fn feedback_and_ending() {
        let (orch, _) = setup(&[("wx", "weather")]);
        let s = orch.start_session(HashMap::new()).unwrap();
        for text in ["hi", "weather in Boston", "thanks"] {
            orch.handle_utterance(s.session_id, text).await.unwrap();
        }
        orch.record_feedback(s.session_id, FeedbackEvent::new(FeedbackKind::Like, 2, None)).await.unwrap();
        assert_eq!(orch.session(&s.session_id).unwrap().feedback_count(FeedbackKind::Like), 1);
        let err = orch
            .record_feedback(s.session_id, FeedbackEvent::new(FeedbackKind::Feedback, 0, Some(String::new())))
            .await
            .unwrap_err();
        assert_eq!(err.code(), "MISSING_PAYLOAD");
        let err = orch.record_feedback(s.session_id, FeedbackEvent::new(FeedbackKind::Like, 3, None)).await.unwrap_err();
        assert_eq!(err.code(), "INVALID_TURN_INDEX");
        orch.record_feedback(s.session_id, FeedbackEvent::new(FeedbackKind::EndConversation, 2, None)).await.unwrap();
        let err = orch.handle_utterance(s.session_id, "one more").await.unwrap_err();
        assert_eq!(err.code(), "SESSION_ENDED");
        assert_eq!(orch.handle_utterance(SessionId::random(), "x").await.unwrap_err().code(), "UNKNOWN_SESSION");
    }

    #[tokio::test]
    async fn restart_restores_tokens_and_systems() {
        let (orch, script) = setup(&[("wx", "weather")]);
        let s = orch.start_session(HashMap::new()).unwrap();
        orch.handle_utterance(s.session_id, "hello").await.unwrap();
        let store = orch.store().clone();
        let again = Orchestrator::new(OrchestratorConfig::default(), Arc::new(Registry::default()), store, script).unwrap();
        assert_eq!(again.resolve_token(&s.session_token).unwrap(), s.session_id);
        assert!(again.registry().contains(&SystemId::new("wx")));
        assert_eq!(again.assignment_counts(), vec![(SystemId::new("wx"), 1)]);
    }

    #[tokio::test]
    async fn state_updates_from_system_are_merged() {
        struct Updater;
        #[async_trait]
        impl Connector for Updater {
            async fn call(&self, _: &SystemDescriptor, _: &ConnectorRequest) -> Result<ConnectorResponse, ConnectorError> {
                Ok(ConnectorResponse {
                    response_text: "noted".into(),
                    state_updates: Some(BTreeMap::from([("date".to_string(), "tomorrow".to_string())])),
                    end_session: Some(true),
                })
            }
            async fn ping(&self, _: &SystemDescriptor) -> Result<(), ConnectorError> {
                Ok(())
            }
        }
        let orch = Orchestrator::new(
            OrchestratorConfig::default(),
            Arc::new(Registry::default()),
            Arc::new(DialogStore::in_memory()),
            Arc::new(Updater),
        )
        .unwrap();
        orch.register_system(descriptor("wx", "weather")).unwrap();
        let s = orch.start_session(HashMap::new()).unwrap();
        let out = orch.handle_utterance(s.session_id, "hello").await.unwrap();
        assert!(out.session_ended);
        let session = orch.session(&s.session_id).unwrap();
        assert_eq!(session.state.get("date"), Some("tomorrow"));
        assert_eq!(session.state.slots["date"].source_system, SystemId::new("wx"));
        assert!(!session.is_open());
    }
}
