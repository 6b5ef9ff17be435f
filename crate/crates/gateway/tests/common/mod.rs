#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dialhub_core::{ConnectorRequest, ConnectorResponse};
use dialhub_gateway::config::{Config, SystemEntry};
use dialhub_gateway::{build_state, run, AppState, HttpConnector};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use url::Url;

/// How a mock dialog system answers `/turn`.
#[derive(Debug, Clone)]
pub enum Behavior {
    /// `response_text` repeats the user utterance.
    Echo,
    Reply(ConnectorResponse),
    Sleep(Duration),
    Status(u16),
    Garbage,
}

/// Authorization header and body of one `/turn` call.
type Received = (Option<String>, ConnectorRequest);

#[derive(Clone)]
struct MockState {
    behavior: Arc<Mutex<Behavior>>,
    received: Arc<Mutex<Vec<Received>>>,
    alive: Arc<Mutex<bool>>,
}

/// A dialog system served over real HTTP on a local port.
pub struct MockSystem {
    pub url: Url,
    state: MockState,
}

impl MockSystem {
    pub async fn start(behavior: Behavior) -> Self {
        let state = MockState {
            behavior: Arc::new(Mutex::new(behavior)),
            received: Arc::default(),
            alive: Arc::new(Mutex::new(true)),
        };
        let app = Router::new()
            .route("/turn", post(turn))
            .route("/ping", get(ping))
            .with_state(state.clone());
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
        Self { url: Url::parse(&format!("http://{addr}/")).unwrap(), state }
    }

    pub fn set(&self, behavior: Behavior) {
        *self.state.behavior.lock().unwrap() = behavior;
    }

    /// When false, `/ping` answers 503.
    pub fn set_alive(&self, alive: bool) {
        *self.state.alive.lock().unwrap() = alive;
    }

    pub fn requests(&self) -> Vec<ConnectorRequest> {
        self.state.received.lock().unwrap().iter().map(|(_, r)| r.clone()).collect()
    }

    pub fn auth_headers(&self) -> Vec<Option<String>> {
        self.state.received.lock().unwrap().iter().map(|(h, _)| h.clone()).collect()
    }

    pub fn entry(&self, id: &str, name: &str, domains: &[&str]) -> SystemEntry {
        SystemEntry {
            id: id.into(),
            name: name.into(),
            endpoint: self.url.to_string(),
            domains: domains.iter().map(|d| d.to_string()).collect(),
            auth_token: None,
        }
    }
}

async fn turn(State(st): State<MockState>, headers: HeaderMap, Json(req): Json<ConnectorRequest>) -> Response {
    let auth = headers.get("authorization").and_then(|v| v.to_str().ok()).map(str::to_string);
    st.received.lock().unwrap().push((auth, req.clone()));
    let behavior = st.behavior.lock().unwrap().clone();
    match behavior {
        Behavior::Echo => Json(ConnectorResponse::text(req.user_utterance)).into_response(),
        Behavior::Reply(r) => Json(r).into_response(),
        Behavior::Sleep(d) => {
            tokio::time::sleep(d).await;
            Json(ConnectorResponse::text("sorry, I was slow")).into_response()
        }
        Behavior::Status(code) => StatusCode::from_u16(code).unwrap().into_response(),
        Behavior::Garbage => "this is not json".into_response(),
    }
}

async fn ping(State(st): State<MockState>) -> StatusCode {
    if *st.alive.lock().unwrap() {
        StatusCode::OK
    } else {
        StatusCode::SERVICE_UNAVAILABLE
    }
}

/// A gateway on a local port backed by a temporary store directory.
pub struct Gateway {
    pub base: String,
    pub state: Arc<AppState>,
    pub data_dir: tempfile::TempDir,
    shutdown: Option<oneshot::Sender<()>>,
    pub handle: tokio::task::JoinHandle<()>,
}

impl Gateway {
    pub async fn start(mut config: Config) -> Self {
        let data_dir = tempfile::tempdir().unwrap();
        config.server.data_dir = data_dir.path().to_path_buf();
        config.server.sync_writes = false;
        let connector = Arc::new(HttpConnector::new(
            config.connector_timeout(),
            config.orchestrator_config().unwrap().slot_schema.slot_names(),
        ));
        let state = build_state(&config, connector).unwrap();
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr: SocketAddr = listener.local_addr().unwrap();
        let (tx, rx) = oneshot::channel();
        let served = state.clone();
        let handle = tokio::spawn(async move {
            let stop = async {
                let _ = rx.await;
            };
            run(listener, served, Duration::from_secs(3600), stop).await.expect("gateway failed");
        });
        Self { base: format!("http://{addr}"), state, data_dir, shutdown: Some(tx), handle }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    pub fn shutdown(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

pub fn config_with(systems: Vec<SystemEntry>, timeout_secs: f64, seed: u64) -> Config {
    let mut config = Config { systems, ..Config::default() };
    config.routing.connector_timeout_secs = timeout_secs;
    config.routing.selection_seed = Some(seed);
    config
}
