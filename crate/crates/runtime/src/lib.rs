//! Live processes of the pullherd framework: the TCP master server and the
//! pull-model worker agent, both speaking the `pullherd-proto` wire format
//! over loopback or a real network.

pub mod agent;
pub mod executor;
pub mod server;

pub use agent::{run_agent, AgentConfig, ExitReport};
pub use executor::{execute, ExecOutcome, ExecutorSpec};
pub use server::{CampaignResult, DrainHandle, MasterServer, ServerConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("core error: {0}")]
    Core(#[from] pullherd_core::CoreError),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("connection closed by peer")]
    ConnectionClosed,

    #[error("master at {0} unreachable: {1}")]
    MasterUnreachable(String, String),

    #[error("registration rejected: {0}")]
    Rejected(String),

    #[error("{0}")]
    Internal(String),
}
