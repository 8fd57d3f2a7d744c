//! Serial discrete-event kernel.
//!
//! A [`Timeline`] owns a set of entities and a min-priority queue of
//! [`Event`]s ordered by `(time, seq)`. Between synchronization points a
//! worker drives its timeline with [`Timeline::run_until`], which executes
//! the half-open window `[now, horizon)`.

mod event;
mod timeline;

pub use event::{
    ClassicalMessage, EntityId, Event, EventKind, Fnv64, Payload, Photon, Seq, SiftEntry, Timer,
};
pub use timeline::{Context, Entity, EntityLog, QueueCounters, Timeline};
