//! Network surface for dialhub: chat client, dashboard and admin endpoints
//! over HTTP, the HTTP connector to remote dialog systems, and config loading.

pub mod config;
pub mod connector;
pub mod server;

pub use config::{Config, ConfigError};
pub use connector::HttpConnector;
pub use server::{build_state, router, run, serve, AppState, ServeError};
