//! Quantum state managers.
//!
//! Each worker owns a local [`QsmStore`] for states confined to its routers.
//! States entangled across workers live in the single [`GlobalQsm`], which is
//! reached through batched requests flushed once per epoch. [`QsmClient`]
//! decides per request which of the two applies.

mod client;
mod global;
mod state;
mod store;
mod transport;
pub mod wire;

pub use client::{QsmClient, QsmStats, ReplyToken, Route};
pub use global::{BatchResponse, GlobalQsm, KeyOwner, RequestBatch};
pub use state::{MemoryKey, QuantumState, MAX_QUBITS, NORM_TOLERANCE};
pub use store::{QsmRequest, QsmResponse, QsmStore};
pub use transport::{serve_tcp, GlobalQsmLink, InprocLink, InprocQsmService, SocketLink};

#[cfg(test)]
mod tests;
