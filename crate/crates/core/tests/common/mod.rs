#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use dialhub_core::orchestrator::OrchestratorConfig;
use dialhub_core::{
    Connector, ConnectorError, ConnectorRequest, ConnectorResponse, DialogStore, Orchestrator, Registry,
    SystemDescriptor, SystemId,
};
use url::Url;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Echo,
    Fail,
}

/// In-process stand-in for remote systems. Records every call it receives.
#[derive(Default)]
pub struct Mock {
    modes: Mutex<HashMap<SystemId, Mode>>,
    calls: Mutex<Vec<(SystemId, ConnectorRequest)>>,
}

impl Mock {
    pub fn set(&self, id: &str, mode: Mode) {
        self.modes.lock().unwrap().insert(SystemId::new(id), mode);
    }

    pub fn mode(&self, id: &SystemId) -> Mode {
        self.modes.lock().unwrap().get(id).copied().unwrap_or(Mode::Echo)
    }

    pub fn calls(&self) -> Vec<(SystemId, ConnectorRequest)> {
        self.calls.lock().unwrap().clone()
    }
}

#[async_trait]
impl Connector for Mock {
    async fn call(&self, s: &SystemDescriptor, r: &ConnectorRequest) -> Result<ConnectorResponse, ConnectorError> {
        self.calls.lock().unwrap().push((s.system_id.clone(), r.clone()));
        match self.mode(&s.system_id) {
            Mode::Echo => Ok(ConnectorResponse::text(format!("ok: {}", r.user_utterance))),
            Mode::Fail => Err(ConnectorError::Transport("connection refused".into())),
        }
    }

    async fn ping(&self, s: &SystemDescriptor) -> Result<(), ConnectorError> {
        match self.mode(&s.system_id) {
            Mode::Echo => Ok(()),
            Mode::Fail => Err(ConnectorError::Transport("connection refused".into())),
        }
    }
}

pub fn descriptor(id: &str, domains: &[&str]) -> SystemDescriptor {
    SystemDescriptor::new(id, format!("{id} bot"), Url::parse(&format!("http://{id}.test/")).unwrap(), domains)
}

pub fn orchestrator(store: Arc<DialogStore>, systems: &[(&str, &str)], seed: u64) -> (Orchestrator, Arc<Mock>) {
    let mock = Arc::new(Mock::default());
    let config = OrchestratorConfig {
        connector_timeout: Duration::from_millis(500),
        selection_seed: Some(seed),
        ..OrchestratorConfig::default()
    };
    let orch = Orchestrator::new(config, Arc::new(Registry::default()), store, mock.clone()).unwrap();
    for (id, domain) in systems {
        if !orch.registry().contains(&SystemId::new(*id)) {
            orch.register_system(descriptor(id, &[domain])).unwrap();
        }
    }
    (orch, mock)
}

pub fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_current_thread().enable_time().build().unwrap()
}
