//! Edge-local adaptive traffic signal system around the `edgelight-core`
//! decision engine.
//!
//! This crate carries everything that touches the outside world: the config,
//! scenario, and log file formats, the line-delimited wire protocol between
//! lane agents and the edge decision server, the cloud configuration stub,
//! replay verification, latency analysis, and the `edgelight` CLI binary
//! that fronts it all.

pub mod agent;
pub mod cli;
pub mod clock;
pub mod cloud;
pub mod config;
pub mod formats;
pub mod latency;
pub mod replay;
pub mod scenario;
pub mod server;
pub mod wire;

/// Crate-wide error split along the CLI's exit-code contract: bad input
/// versus everything that went wrong while doing the work.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid input: malformed files, out-of-range values, unknown lanes.
    /// Exits with code 2.
    #[error("{0}")]
    Validation(String),
    /// Runtime failure: IO, sockets, poisoned state. Exits with code 1.
    #[error("{0}")]
    Internal(String),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        Error::Internal(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) => 2,
            Error::Internal(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Wire and file format version; bump on any incompatible change.
pub const SCHEMA_VERSION: u32 = 1;
