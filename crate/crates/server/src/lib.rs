//! Coordinator, configuration pipeline, answer generation and HTTP API for
//! the multi-modal query-answering engine.
//!
//! Clients reach the retrieval components only through [`Coordinator`]:
//! configure, status, sessions, queries, framework comparison and payloads.

pub mod config;
pub mod coordinator;
pub mod error;
pub mod http;
pub mod llm;
pub mod pipeline;
pub mod session;
pub mod status;

pub use config::SystemConfig;
pub use coordinator::{CompareResponse, Coordinator, QueryRequest, QueryResponse};
pub use error::{ConfigError, ServiceError};
pub use pipeline::{Engine, RankedObject};
pub use status::{Milestones, StageState, SystemMode};
