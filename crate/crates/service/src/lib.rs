//! HTTP service for lineup searches and 2AFC sessions.
//!
//! Every session is an append-only JSON-lines event log under
//! `data_dir/sessions/{id}/`, with periodic snapshots next to it. Portraits
//! are PNGs under `data_dir/images/`, named by content hash.

pub mod config;
pub mod error;
pub mod events;
pub mod http;
pub mod manager;
pub mod session;
pub mod store;

pub use config::{SearchSessionConfig, ServiceConfig};
pub use error::{Result, ServiceError};
pub use manager::{Resources, SessionManager};
