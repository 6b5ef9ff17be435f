//! Core of the dialhub gateway: the dialog model, system registry, shared
//! dialog state, routing, the event store, analytics and crowd tooling.
//! Everything here is transport-agnostic; the `dialhub-gateway` crate puts
//! it on the network.

pub mod analytics;
pub mod crowd;
pub mod dialog_state;
pub mod model;
pub mod money;
pub mod orchestrator;
pub mod protocol;
pub mod registry;
pub mod selection;
pub mod store;
pub mod text;

pub use model::{
    FeedbackEvent, FeedbackKind, Session, SessionId, SessionStatus, SessionToken, SharedDialogState, Side, SlotValue,
    SystemId, Turn, Utterance, DEFAULT_MIN_TURNS,
};
pub use money::Money;
pub use orchestrator::{Orchestrator, OrchestratorConfig, OrchestratorError, RoutingOutcome};
pub use protocol::{Connector, ConnectorError, ConnectorRequest, ConnectorResponse};
pub use registry::{Health, Registry, SystemDescriptor};
pub use store::{DialogStore, StoreOptions};
