//! Vertical atomic broadcast: a reconfigurable atomic broadcast protocol that
//! delegates agreement on configurations to an external configuration
//! service, together with its primary-order (`po`) and speculative
//! primary-order (`spo`) variants, a passive-replication layer, a
//! deterministic discrete-event simulator and checkers for every safety and
//! liveness property of the resulting histories.
//!
//! The usual entry point is [`sim::run`], which executes a [`Scenario`] and
//! returns the history, metrics and every checker verdict.

pub mod checker;
pub mod config_service;
pub mod model;
pub mod modes;
pub mod node;
pub mod replication;
pub mod sim;
pub mod trace;

pub use checker::{PropertyId, Verdict, VerdictReport, Violation};
pub use config_service::ConfigStore;
pub use model::{
    Action, AppMessage, CommandId, Configuration, Entry, Epoch, History, Log, MessageKind,
    MsgId, ProcessId, ProtocolMessage,
};
pub use modes::{Mode, Mutant};
pub use sim::{run, RunOutput, Scenario};

/// Errors surfaced by the library. Protocol-level guard failures are not
/// errors (messages are buffered); these are caller or input bugs.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("compare_and_swap precondition violated: new epoch {new} <= expected {expected}")]
    CasPrecondition { expected: Epoch, new: Epoch },
    #[error("unknown epoch {0} in configuration service")]
    UnknownEpoch(Epoch),
    #[error("{0} has no known leader")]
    NoLeader(ProcessId),
    #[error("{0} is not the ready leader of its configuration")]
    NotLeader(ProcessId),
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("malformed trace: {0}")]
    Trace(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
