//! Session, batch and HTTP layers over `callsense-core`.

pub mod api;
pub mod batch;
pub mod config;
pub mod engine;
pub mod session;
pub mod store;

pub use api::{router, AppState, BatchReport, BatchRequest, PushTurn};
pub use batch::{batch_annotate, batch_annotate_file, BatchManifest, BatchOptions, BatchOutput};
pub use config::ServiceConfig;
pub use engine::{Engine, EngineError, TurnResult, TurnStatus};
pub use session::{OpenSession, SessionError, SessionManager, SessionState};
pub use store::{read_events, Event, EventKind, EventLog, StoreError};
