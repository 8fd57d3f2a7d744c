use std::io;

use thiserror::Error;

use crate::kernel::EntityId;
use crate::qsm::MemoryKey;
use crate::time::SimTime;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors surfaced by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("event at {event} scheduled in the past (timeline clock at {now})")]
    ScheduleInPast { event: SimTime, now: SimTime },

    #[error(
        "causality violation: event at {event} for entity {target} arrived below bound {bound}"
    )]
    CausalityViolation {
        event: SimTime,
        bound: SimTime,
        target: EntityId,
    },

    #[error("unknown entity {0}")]
    UnknownEntity(EntityId),

    #[error("topology has no routers")]
    EmptyTopology,

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown session {0}")]
    UnknownSession(u32),

    #[error("invalid annealing schedule: {0}")]
    InvalidSchedule(String),

    #[error("partition schema violation: {0}")]
    PartitionSchema(String),

    #[error(transparent)]
    Qsm(#[from] QsmError),

    #[error("transport failure: {0}")]
    Transport(String),

    #[error("wire protocol error: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Per-request failures reported by a quantum state manager.
///
/// These travel in-band inside batch responses, so each variant has a stable
/// numeric code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum QsmError {
    #[error("amplitudes are not normalized")]
    NotNormalized,
    #[error("keys partially overlap an existing entangled state")]
    PartialOverwrite,
    #[error("key {0} not found")]
    KeyNotFound(MemoryKey),
    #[error("state would exceed the qubit limit")]
    StateTooLarge,
    #[error("malformed request")]
    Malformed,
}

impl QsmError {
    pub fn code(&self) -> u8 {
        match self {
            QsmError::NotNormalized => 1,
            QsmError::PartialOverwrite => 2,
            QsmError::KeyNotFound(_) => 3,
            QsmError::StateTooLarge => 4,
            QsmError::Malformed => 5,
        }
    }

    pub fn from_code(code: u8, key: MemoryKey) -> Option<Self> {
        Some(match code {
            1 => QsmError::NotNormalized,
            2 => QsmError::PartialOverwrite,
            3 => QsmError::KeyNotFound(key),
            4 => QsmError::StateTooLarge,
            5 => QsmError::Malformed,
            _ => return None,
        })
    }

    /// Key carried alongside the code on the wire (zero when irrelevant).
    pub fn key(&self) -> MemoryKey {
        match self {
            QsmError::KeyNotFound(k) => *k,
            _ => 0,
        }
    }
}
