//! Service configuration, read from a TOML file.
//!
//! Every key is optional. A missing `[[slots]]` or `[[domains]]` table falls
//! back to the built-in city/date schema and weather/restaurant/game rules.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use dialhub_core::dialog_state::{default_domain_rules, DomainRule, ExtractorRule, SlotSchema, SlotSpec};
use dialhub_core::orchestrator::{OrchestratorConfig, DEFAULT_TOPIC_PROMPTS};
use dialhub_core::registry::DEFAULT_FAILURE_THRESHOLD;
use dialhub_core::SystemDescriptor;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}:{line}:{column}: {message}")]
    Syntax { path: String, line: usize, column: usize, message: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSection {
    pub bind: String,
    pub data_dir: PathBuf,
    /// Required as a bearer token on admin endpoints when set.
    pub admin_token: Option<String>,
    pub probe_interval_secs: u64,
    /// `fsync` every event before acknowledging it.
    pub sync_writes: bool,
}

impl Default for ServerSection {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("data"),
            admin_token: None,
            probe_interval_secs: 30,
            sync_writes: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoutingSection {
    pub connector_timeout_secs: f64,
    pub selection_seed: Option<u64>,
    pub failure_threshold: u32,
    pub topic_prompts: Vec<String>,
    pub greeting: Option<String>,
}

impl Default for RoutingSection {
    fn default() -> Self {
        Self {
            connector_timeout_secs: 10.0,
            selection_seed: None,
            failure_threshold: DEFAULT_FAILURE_THRESHOLD,
            topic_prompts: DEFAULT_TOPIC_PROMPTS.iter().map(|p| p.to_string()).collect(),
            greeting: OrchestratorConfig::default().greeting,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlotEntry {
    pub name: String,
    #[serde(default)]
    pub gazetteer: Option<Vec<String>>,
    #[serde(default)]
    pub pattern: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainEntry {
    pub name: String,
    pub keywords: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemEntry {
    pub id: String,
    pub name: String,
    pub endpoint: String,
    pub domains: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_token: Option<String>,
}

impl SystemEntry {
    pub fn to_descriptor(&self) -> Result<SystemDescriptor, String> {
        let endpoint = Url::parse(&self.endpoint).map_err(|e| format!("system {:?}: bad endpoint: {e}", self.id))?;
        let domains: Vec<&str> = self.domains.iter().map(String::as_str).collect();
        let mut d = SystemDescriptor::new(&self.id, &self.name, endpoint, &domains);
        d.auth_token = self.auth_token.clone();
        d.validate().map_err(|e| format!("system {:?}: {e}", self.id))?;
        Ok(d)
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub server: ServerSection,
    pub routing: RoutingSection,
    pub slots: Vec<SlotEntry>,
    pub domains: Vec<DomainEntry>,
    pub systems: Vec<SystemEntry>,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |nl| before.len() - nl - 1) + 1;
    (line, column)
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses and validates config text. `origin` names the source in diagnostics.
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let config: Config = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((1, 1), |span| line_col(text, span.start));
            ConfigError::Syntax { path: origin.into(), line, column, message: e.message().to_string() }
        })?;
        config.validate().map_err(|message| ConfigError::Invalid { path: origin.into(), message })?;
        Ok(config)
    }

    pub fn bind_addr(&self) -> Result<SocketAddr, String> {
        self.server.bind.parse().map_err(|e| format!("server.bind {:?}: {e}", self.server.bind))
    }

    pub fn connector_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.routing.connector_timeout_secs)
    }

    pub fn slot_schema(&self) -> Result<SlotSchema, String> {
        if self.slots.is_empty() {
            return Ok(SlotSchema::default());
        }
        let slots = self
            .slots
            .iter()
            .map(|s| {
                let extractor = match (&s.gazetteer, &s.pattern) {
                    (Some(g), None) => ExtractorRule::Gazetteer(g.clone()),
                    (None, Some(p)) => ExtractorRule::Pattern(p.clone()),
                    _ => return Err(format!("slot {:?} needs exactly one of gazetteer or pattern", s.name)),
                };
                Ok(SlotSpec { name: s.name.clone(), extractor })
            })
            .collect::<Result<_, _>>()?;
        Ok(SlotSchema { slots })
    }

    pub fn domain_rules(&self) -> Vec<DomainRule> {
        if self.domains.is_empty() {
            return default_domain_rules();
        }
        self.domains
            .iter()
            .map(|d| DomainRule { domain: d.name.clone(), trigger_keywords: d.keywords.iter().cloned().collect() })
            .collect()
    }

    pub fn orchestrator_config(&self) -> Result<OrchestratorConfig, String> {
        Ok(OrchestratorConfig {
            slot_schema: self.slot_schema()?,
            domain_rules: self.domain_rules(),
            topic_prompts: self.routing.topic_prompts.clone(),
            connector_timeout: self.connector_timeout(),
            selection_seed: self.routing.selection_seed,
            greeting: self.routing.greeting.clone(),
        })
    }

    pub fn validate(&self) -> Result<(), String> {
        self.bind_addr()?;
        let t = self.routing.connector_timeout_secs;
        if !(t.is_finite() && t > 0.0) {
            return Err(format!("routing.connector_timeout_secs must be positive, got {t}"));
        }
        if self.server.probe_interval_secs == 0 {
            return Err("server.probe_interval_secs must be positive".into());
        }
        if self.routing.failure_threshold == 0 {
            return Err("routing.failure_threshold must be positive".into());
        }
        if self.routing.topic_prompts.iter().all(|p| p.trim().is_empty()) {
            return Err("routing.topic_prompts needs at least one prompt".into());
        }
        self.slot_schema()?.compile().map_err(|e| e.to_string())?;
        for rule in self.domain_rules() {
            rule.validate().map_err(|e| e.to_string())?;
        }
        let mut seen = std::collections::HashSet::new();
        for s in &self.systems {
            s.to_descriptor()?;
            if !seen.insert(&s.id) {
                return Err(format!("system {:?} is listed twice", s.id));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let c = Config::parse("", "test").unwrap();
        assert_eq!(c.connector_timeout(), Duration::from_secs(10));
        assert_eq!(c.server.probe_interval_secs, 30);
        assert_eq!(c.routing.topic_prompts.len(), 3);
        assert_eq!(c.slot_schema().unwrap(), SlotSchema::default());
        assert_eq!(c.domain_rules().len(), 3);
    }

    #[test]
    fn full_config() {
        let text = r#"
[server]
bind = "0.0.0.0:9000"
admin_token = "secret"

[routing]
connector_timeout_secs = 2.5
selection_seed = 42
topic_prompts = ["Shall we talk about movies?"]

[[slots]]
name = "cuisine"
gazetteer = ["thai", "italian"]

[[domains]]
name = "restaurant"
keywords = ["eat", "food"]

[[systems]]
id = "eat-1"
name = "Food Finder"
endpoint = "http://localhost:7001/"
domains = ["restaurant"]
auth_token = "abc"
"#;
        let c = Config::parse(text, "full.toml").unwrap();
        assert_eq!(c.bind_addr().unwrap().port(), 9000);
        assert_eq!(c.connector_timeout(), Duration::from_millis(2500));
        let o = c.orchestrator_config().unwrap();
        assert_eq!(o.selection_seed, Some(42));
        assert_eq!(o.slot_schema.slot_names().into_iter().collect::<Vec<_>>(), vec!["cuisine".to_string()]);
        assert_eq!(c.systems[0].to_descriptor().unwrap().auth_token.as_deref(), Some("abc"));
    }

    #[test]
    fn syntax_errors_report_the_line() {
        let text = "[server]\nbind = \"127.0.0.1:1\"\nprobe_interval_secs = = 3\n";
        match Config::parse(text, "bad.toml") {
            Err(ConfigError::Syntax { line, path, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(path, "bad.toml");
            }
            other => panic!("{other:?}"),
        }
        match Config::parse("[server]\n\nbnd = \"x\"\n", "typo.toml") {
            Err(e @ ConfigError::Syntax { line: 3, .. }) => assert!(e.to_string().starts_with("typo.toml:3:")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn semantic_errors() {
        for text in [
            "[server]\nbind = \"nowhere\"",
            "[routing]\nconnector_timeout_secs = 0",
            "[routing]\ntopic_prompts = []",
            "[[slots]]\nname = \"x\"\npattern = \"(\"",
            "[[slots]]\nname = \"x\"",
            "[[domains]]\nname = \"d\"\nkeywords = [\"two words\"]",
            "[[systems]]\nid = \"a\"\nname = \"A\"\nendpoint = \"ftp://x/\"\ndomains = [\"d\"]",
            "[[systems]]\nid = \"a\"\nname = \"A\"\nendpoint = \"http://x/\"\ndomains = []",
        ] {
            assert!(matches!(Config::parse(text, "t"), Err(ConfigError::Invalid { .. })), "{text}");
        }
    }
}
