//! HTTP transport for the connector protocol.
//!
//! `POST {endpoint}/turn` carries a `ConnectorRequest` and must answer with a
//! `ConnectorResponse`; `GET {endpoint}/ping` must answer 2xx. See
//! `docs/connector-protocol.md`.

use std::collections::BTreeSet;
use std::time::Duration;

use async_trait::async_trait;
use dialhub_core::{Connector, ConnectorError, ConnectorRequest, ConnectorResponse, SystemDescriptor};
use url::Url;

#[derive(Debug, Clone)]
pub struct HttpConnector {
    client: reqwest::Client,
    timeout: Duration,
    slot_names: BTreeSet<String>,
}

impl HttpConnector {
    pub fn new(timeout: Duration, slot_names: BTreeSet<String>) -> Self {
        let client = reqwest::Client::builder().build().expect("HTTP client builds with default settings");
        Self { client, timeout, slot_names }
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    fn request(&self, method: reqwest::Method, system: &SystemDescriptor, path: &str) -> reqwest::RequestBuilder {
        let mut req = self.client.request(method, endpoint_url(&system.endpoint, path)).timeout(self.timeout);
        if let Some(token) = &system.auth_token {
            req = req.bearer_auth(token);
        }
        req
    }
}

/// `base` joined with `path`, treating `base` as a directory even without a trailing slash.
pub fn endpoint_url(base: &Url, path: &str) -> Url {
    let mut base = base.clone();
    if !base.path().ends_with('/') {
        let p = format!("{}/", base.path());
        base.set_path(&p);
    }
    base.join(path).expect("relative path joins onto an http(s) URL")
}

fn transport(e: reqwest::Error) -> ConnectorError {
    if e.is_timeout() {
        ConnectorError::Timeout
    } else {
        ConnectorError::Transport(e.to_string())
    }
}

#[async_trait]
impl Connector for HttpConnector {
    async fn call(&self, system: &SystemDescriptor, request: &ConnectorRequest) -> Result<ConnectorResponse, ConnectorError> {
        let resp = self.request(reqwest::Method::POST, system, "turn").json(request).send().await.map_err(transport)?;
        let status = resp.status();
        if !status.is_success() {
            return Err(ConnectorError::Transport(format!("HTTP {status}")));
        }
        let body = resp.bytes().await.map_err(transport)?;
        let parsed: ConnectorResponse =
            serde_json::from_slice(&body).map_err(|e| ConnectorError::MalformedResponse(e.to_string()))?;
        parsed.validate(&self.slot_names)?;
        Ok(parsed)
    }

    async fn ping(&self, system: &SystemDescriptor) -> Result<(), ConnectorError> {
        let resp = self.request(reqwest::Method::GET, system, "ping").send().await.map_err(transport)?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(ConnectorError::Transport(format!("HTTP {}", resp.status())))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_joining() {
        let u = |s: &str| Url::parse(s).unwrap();
        assert_eq!(endpoint_url(&u("http://h:1/"), "turn").as_str(), "http://h:1/turn");
        assert_eq!(endpoint_url(&u("http://h:1/bots/wx"), "turn").as_str(), "http://h:1/bots/wx/turn");
        assert_eq!(endpoint_url(&u("http://h:1/bots/wx/"), "ping").as_str(), "http://h:1/bots/wx/ping");
    }
}
