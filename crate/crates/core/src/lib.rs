//! Read-only clinical data gateway: CSV-to-SQLite loading, a guarded query
//! backend, an MCP tool server over stdio and an execution-accuracy harness.

pub mod access_control;
pub mod backend;
pub mod config;
pub mod etl;
pub mod eval;
pub mod fixtures;
pub mod par;
pub mod render;
pub mod sql_guard;
pub mod toolset;
pub mod wire;

pub use backend::{Backend, BackendConfig, BackendKind, LocalBackend, ResultSet, Value};
pub use sql_guard::{validate, ValidationVerdict, VerdictReason};
