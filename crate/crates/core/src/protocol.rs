//! Connector protocol between the gateway and remote dialog systems.
//!
//! For each user utterance the gateway sends a [`ConnectorRequest`] to the
//! responding system and expects a [`ConnectorResponse`] back. Systems also
//! answer a liveness ping. Transports implement [`Connector`].

use std::collections::{BTreeMap, BTreeSet};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{SessionToken, SharedDialogState};
use crate::registry::{ProbeResult, SystemDescriptor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectorRequest {
    pub session_token: SessionToken,
    pub user_utterance: String,
    pub dialog_state: SharedDialogState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectorResponse {
    pub response_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_updates: Option<BTreeMap<String, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_session: Option<bool>,
}

impl ConnectorResponse {
    pub fn text(text: impl Into<String>) -> Self {
        Self { response_text: text.into(), state_updates: None, end_session: None }
    }

    pub fn ends_session(&self) -> bool {
        self.end_session.unwrap_or(false)
    }

    /// Rejects empty replies (unless ending the session) and slot keys outside the schema.
    pub fn validate(&self, slot_names: &BTreeSet<String>) -> Result<(), ConnectorError> {
        if self.response_text.trim().is_empty() && !self.ends_session() {
            return Err(ConnectorError::MalformedResponse("empty response_text".into()));
        }
        if let Some(updates) = &self.state_updates {
            if let Some(bad) = updates.keys().find(|k| !slot_names.contains(*k)) {
                return Err(ConnectorError::MalformedResponse(format!("unknown slot {bad:?} in state_updates")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConnectorError {
    #[error("connector call timed out")]
    Timeout,
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("transport error: {0}")]
    Transport(String),
}

impl ConnectorError {
    pub fn as_probe(&self) -> ProbeResult {
        match self {
            ConnectorError::Timeout => ProbeResult::Timeout,
            _ => ProbeResult::Error,
        }
    }
}

#[async_trait]
pub trait Connector: Send + Sync {
    async fn call(&self, system: &SystemDescriptor, request: &ConnectorRequest)
        -> Result<ConnectorResponse, ConnectorError>;

    async fn ping(&self, system: &SystemDescriptor) -> Result<(), ConnectorError>;
}
