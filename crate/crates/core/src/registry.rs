//! Registered dialog systems, their health, and domain equivalence groups.
//!
//! Two systems are equivalent when they declare the same domain. Groups are
//! derived from the descriptors on demand and never stored.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::RwLock;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::model::{now_millis, SystemId};

/// Consecutive failed probes before a system is taken out of rotation.
pub const DEFAULT_FAILURE_THRESHOLD: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Health {
    Up,
    Degraded,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProbeResult {
    Ok,
    Timeout,
    Error,
}

/// Health as a pure function of the consecutive-failure counter.
pub fn health_for_failures(consecutive_failures: u32, threshold: u32) -> Health {
    match consecutive_failures {
        0 => Health::Up,
        n if n >= threshold.max(1) => Health::Down,
        _ => Health::Degraded,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemDescriptor {
    pub system_id: SystemId,
    pub name: String,
    pub endpoint: Url,
    pub domains: BTreeSet<String>,
    #[serde(default = "default_health")]
    pub health: Health,
    #[serde(default = "now_millis")]
    pub registered_at: DateTime<Utc>,
    /// Bearer token sent on every connector call to this system.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_token: Option<String>,
}

fn default_health() -> Health {
    Health::Up
}

impl SystemDescriptor {
    pub fn new(system_id: impl Into<String>, name: impl Into<String>, endpoint: Url, domains: &[&str]) -> Self {
        Self {
            system_id: SystemId::new(system_id),
            name: name.into(),
            endpoint,
            domains: domains.iter().map(|d| d.to_string()).collect(),
            health: Health::Up,
            registered_at: now_millis(),
            auth_token: None,
        }
    }

    pub fn serves(&self, domain: &str) -> bool {
        self.domains.contains(domain)
    }

    pub fn validate(&self) -> Result<(), RegistryError> {
        if self.domains.is_empty() || self.domains.iter().any(|d| d.trim().is_empty()) {
            return Err(RegistryError::EmptyDomains(self.system_id.clone()));
        }
        let scheme_ok = matches!(self.endpoint.scheme(), "http" | "https");
        if !scheme_ok || self.endpoint.host_str().is_none() {
            return Err(RegistryError::InvalidEndpoint(self.endpoint.to_string()));
        }
        if self.system_id.as_str().trim().is_empty() {
            return Err(RegistryError::InvalidEndpoint("empty system id".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivalenceGroup {
    pub domain: String,
    pub members: BTreeSet<SystemId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("system {0} is already registered")]
    DuplicateId(SystemId),
    #[error("invalid endpoint: {0}")]
    InvalidEndpoint(String),
    #[error("system {0} declares no domains")]
    EmptyDomains(SystemId),
    #[error("unknown system {0}")]
    UnknownSystem(SystemId),
}

#[derive(Debug, Clone)]
struct Entry {
    descriptor: SystemDescriptor,
    consecutive_failures: u32,
}

/// Health before and after a probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HealthTransition {
    pub previous: Health,
    pub current: Health,
}

impl HealthTransition {
    pub fn changed(&self) -> bool {
        self.previous != self.current
    }
}

/// Read-mostly table of systems. Writers hold the lock for the whole update,
/// so readers never see a half-registered system.
#[derive(Debug)]
pub struct Registry {
    failure_threshold: u32,
    entries: RwLock<BTreeMap<SystemId, Entry>>,
}

impl Default for Registry {
    fn default() -> Self {
        Self::new(DEFAULT_FAILURE_THRESHOLD)
    }
}

impl Registry {
    pub fn new(failure_threshold: u32) -> Self {
        Self { failure_threshold: failure_threshold.max(1), entries: RwLock::new(BTreeMap::new()) }
    }

    pub fn failure_threshold(&self) -> u32 {
        self.failure_threshold
    }

    pub fn register(&self, mut descriptor: SystemDescriptor) -> Result<SystemId, RegistryError> {
        descriptor.validate()?;
        let mut entries = self.entries.write().expect("registry lock poisoned");
        if entries.contains_key(&descriptor.system_id) {
            return Err(RegistryError::DuplicateId(descriptor.system_id));
        }
        descriptor.health = Health::Up;
        let id = descriptor.system_id.clone();
        entries.insert(id.clone(), Entry { descriptor, consecutive_failures: 0 });
        Ok(id)
    }

    pub fn record_probe(&self, system_id: &SystemId, result: ProbeResult) -> Result<HealthTransition, RegistryError> {
        let mut entries = self.entries.write().expect("registry lock poisoned");
        let entry = entries.get_mut(system_id).ok_or_else(|| RegistryError::UnknownSystem(system_id.clone()))?;
        let previous = entry.descriptor.health;
        entry.consecutive_failures = match result {
            ProbeResult::Ok => 0,
            ProbeResult::Timeout | ProbeResult::Error => entry.consecutive_failures.saturating_add(1),
        };
        let current = health_for_failures(entry.consecutive_failures, self.failure_threshold);
        entry.descriptor.health = current;
        Ok(HealthTransition { previous, current })
    }

    pub fn get(&self, system_id: &SystemId) -> Option<SystemDescriptor> {
        let entries = self.entries.read().expect("registry lock poisoned");
        entries.get(system_id).map(|e| e.descriptor.clone())
    }

    pub fn contains(&self, system_id: &SystemId) -> bool {
        self.entries.read().expect("registry lock poisoned").contains_key(system_id)
    }

    pub fn health(&self, system_id: &SystemId) -> Option<Health> {
        self.get(system_id).map(|d| d.health)
    }

    pub fn list(&self) -> Vec<SystemDescriptor> {
        let entries = self.entries.read().expect("registry lock poisoned");
        entries.values().map(|e| e.descriptor.clone()).collect()
    }

    /// Non-DOWN systems declaring `domain`, ordered by id.
    pub fn equivalents(&self, domain: &str, exclude: Option<&SystemId>) -> Vec<SystemId> {
        let entries = self.entries.read().expect("registry lock poisoned");
        entries
            .values()
            .map(|e| &e.descriptor)
            .filter(|d| d.serves(domain) && d.health != Health::Down && Some(&d.system_id) != exclude)
            .map(|d| d.system_id.clone())
            .collect()
    }

    /// Every non-DOWN system, ordered by id.
    pub fn selectable(&self) -> Vec<SystemId> {
        let entries = self.entries.read().expect("registry lock poisoned");
        entries
            .values()
            .filter(|e| e.descriptor.health != Health::Down)
            .map(|e| e.descriptor.system_id.clone())
            .collect()
    }

    pub fn groups(&self) -> Vec<EquivalenceGroup> {
        let entries = self.entries.read().expect("registry lock poisoned");
        let mut by_domain: BTreeMap<String, BTreeSet<SystemId>> = BTreeMap::new();
        for d in entries.values().map(|e| &e.descriptor) {
            for domain in &d.domains {
                by_domain.entry(domain.clone()).or_default().insert(d.system_id.clone());
            }
        }
        by_domain.into_iter().map(|(domain, members)| EquivalenceGroup { domain, members }).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn desc(id: &str, domains: &[&str]) -> SystemDescriptor {
        SystemDescriptor::new(id, id, Url::parse(&format!("http://{id}.example.org/bot")).unwrap(), domains)
    }

    #[test]
    fn register_makes_system_selectable() {
        let reg = Registry::default();
        let id = reg.register(desc("cmu-weather", &["weather"])).unwrap();
        assert_eq!(reg.equivalents("weather", None), vec![id.clone()]);
        assert_eq!(reg.health(&id), Some(Health::Up));
    }

    #[test]
    fn duplicate_and_invalid_registrations() {
        let reg = Registry::default();
        reg.register(desc("a", &["chat"])).unwrap();
        assert_eq!(reg.register(desc("a", &["chat"])), Err(RegistryError::DuplicateId("a".into())));
        assert_eq!(reg.register(desc("b", &[])), Err(RegistryError::EmptyDomains("b".into())));
        let mut bad = desc("c", &["chat"]);
        bad.endpoint = Url::parse("ftp://files.example.org").unwrap();
        assert!(matches!(reg.register(bad), Err(RegistryError::InvalidEndpoint(_))));
        let mut hostless = desc("d", &["chat"]);
        hostless.endpoint = Url::parse("mailto:bot@example.org").unwrap();
        assert!(matches!(reg.register(hostless), Err(RegistryError::InvalidEndpoint(_))));
        assert_eq!(reg.list().len(), 1);
    }

    #[test]
    fn probe_transitions() {
        let reg = Registry::default();
        let id = reg.register(desc("w", &["weather"])).unwrap();
        assert_eq!(reg.record_probe(&id, ProbeResult::Ok).unwrap().current, Health::Up);

        // Hand-enumerated: UP -(T)-> DEGRADED -(T)-> DEGRADED -(T)-> DOWN.
        let expected = [Health::Degraded, Health::Degraded, Health::Down];
        for want in expected {
            assert_eq!(reg.record_probe(&id, ProbeResult::Timeout).unwrap().current, want);
        }
        let t = reg.record_probe(&id, ProbeResult::Ok).unwrap();
        assert_eq!((t.previous, t.current), (Health::Down, Health::Up));
        assert!(t.changed());
        assert_eq!(
            reg.record_probe(&"nope".into(), ProbeResult::Ok),
            Err(RegistryError::UnknownSystem("nope".into()))
        );
    }

    #[test]
    fn equivalents_filter_and_order() {
        let reg = Registry::default();
        reg.register(desc("rest-b", &["restaurant"])).unwrap();
        reg.register(desc("rest-a", &["restaurant"])).unwrap();
        reg.register(desc("w-up", &["weather"])).unwrap();
        reg.register(desc("w-down", &["weather"])).unwrap();
        for _ in 0..3 {
            reg.record_probe(&"w-down".into(), ProbeResult::Error).unwrap();
        }
        assert_eq!(reg.equivalents("restaurant", Some(&"rest-a".into())), vec![SystemId::from("rest-b")]);
        assert_eq!(reg.equivalents("restaurant", None), vec![SystemId::from("rest-a"), "rest-b".into()]);
        assert!(reg.equivalents("game", None).is_empty());
        assert_eq!(reg.equivalents("weather", None), vec![SystemId::from("w-up")]);
        assert_eq!(reg.groups().len(), 2);
    }

    #[test]
    fn degraded_systems_stay_selectable() {
        let reg = Registry::default();
        reg.register(desc("w", &["weather"])).unwrap();
        reg.record_probe(&"w".into(), ProbeResult::Timeout).unwrap();
        assert_eq!(reg.health(&"w".into()), Some(Health::Degraded));
        assert_eq!(reg.equivalents("weather", None).len(), 1);
    }

    fn probe_strategy() -> impl Strategy<Value = ProbeResult> {
        prop_oneof![Just(ProbeResult::Ok), Just(ProbeResult::Timeout), Just(ProbeResult::Error)]
    }

    proptest! {
        #[test]
        fn health_replays_from_failure_counter(seq in proptest::collection::vec(probe_strategy(), 0..40)) {
            let reg = Registry::default();
            let id = reg.register(desc("s", &["chat"])).unwrap();
            for p in &seq {
                reg.record_probe(&id, *p).unwrap();
            }
            let trailing_failures = seq.iter().rev().take_while(|p| **p != ProbeResult::Ok).count() as u32;
            prop_assert_eq!(reg.health(&id).unwrap(), health_for_failures(trailing_failures, DEFAULT_FAILURE_THRESHOLD));
        }

        #[test]
        fn equivalents_match_brute_force(
            systems in proptest::collection::vec((0usize..4, 0usize..3, 0u32..4), 1..12),
            domain in 0usize..4,
        ) {
            let names = ["weather", "restaurant", "game", "chat"];
            let reg = Registry::default();
            let mut all = Vec::new();
            for (i, (d1, d2, fails)) in systems.iter().enumerate() {
                let d = desc(&format!("s{i:02}"), &[names[*d1], names[*d2]]);
                all.push(d.clone());
                reg.register(d).unwrap();
                for _ in 0..*fails {
                    reg.record_probe(&all[i].system_id, ProbeResult::Timeout).unwrap();
                }
            }
            let got = reg.equivalents(names[domain], None);
            let want: Vec<SystemId> = reg
                .list()
                .into_iter()
                .filter(|d| d.domains.contains(names[domain]) && d.health != Health::Down)
                .map(|d| d.system_id)
                .collect();
            prop_assert_eq!(got, want);
        }
    }
}
