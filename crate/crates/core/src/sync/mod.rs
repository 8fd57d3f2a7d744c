//! Conservative epoch synchronization between workers.
//!
//! Every epoch each worker executes its events below a common horizon,
//! meets the others at a barrier, flushes its global-QSM batch, swaps
//! cross-worker events and agrees on the next horizon. The horizon is the
//! global minimum next-event time plus a static lookahead, the smallest delay
//! of any channel that crosses workers, so no event can arrive in a worker's
//! past.

mod exchange;
mod slots;
mod socket;
mod worker;
pub mod wire;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{Entity, Event, Timeline};
use crate::netmodel::Topology;
use crate::partition::{Partition, WorkerId};
use crate::time::SimTime;

pub use exchange::{Exchange, InprocExchange, InprocHub, SoloExchange};
pub use slots::ComputeSlots;
pub use socket::{run_hub, SocketExchange};
pub use worker::{EpochFlush, Worker, WorkerRun};

/// One epoch as agreed by every worker.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochPlan {
    pub epoch_index: u64,
    /// Global minimum next-event time.
    pub epoch_start: SimTime,
    pub horizon: SimTime,
    pub lookahead: SimTime,
    /// No worker has anything left to do before the stop time.
    pub complete: bool,
}

/// Events one worker hands to another at the end of an epoch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RemoteEventBatch {
    pub from: WorkerId,
    pub to: WorkerId,
    pub events: Vec<Event>,
}

/// Wall-clock split of one epoch on one worker.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochTiming {
    pub worker: WorkerId,
    pub epoch_index: u64,
    pub compute_ns: u64,
    pub barrier_wait_ns: u64,
    pub exchange_ns: u64,
    pub qsm_socket_ns: u64,
    pub events_executed: u64,
    pub horizon: SimTime,
}

impl EpochTiming {
    pub fn total_ns(&self) -> u64 {
        self.compute_ns + self.barrier_wait_ns + self.exchange_ns + self.qsm_socket_ns
    }
}

/// Smallest delay over quantum and classical channels whose endpoints sit on
/// different workers, or infinity when nothing crosses.
pub fn compute_lookahead(topology: &Topology, partition: &Partition) -> Result<SimTime> {
    if topology.routers.is_empty() {
        return Err(Error::EmptyTopology);
    }
    partition.validate_for(&topology.router_ids())?;
    let crosses = |a, b| partition.worker_of(a) != partition.worker_of(b);
    let q = topology
        .qconnections
        .iter()
        .filter(|c| crosses(c.src, c.dst))
        .map(|c| c.delay_ps);
    let c = topology
        .cconnections
        .iter()
        .filter(|c| crosses(c.src, c.dst))
        .map(|c| c.delay_ps);
    Ok(q.chain(c).min().unwrap_or(SimTime::INFINITY))
}

/// Build the plan every worker will follow from the per-worker next times.
pub fn negotiate_horizon(
    next_times: &[SimTime],
    lookahead: SimTime,
    stop_time: SimTime,
    epoch_index: u64,
) -> EpochPlan {
    let start = next_times.iter().copied().min().unwrap_or(SimTime::INFINITY);
    plan_from_min(start, lookahead, stop_time, epoch_index)
}

pub(crate) fn plan_from_min(
    start: SimTime,
    lookahead: SimTime,
    stop_time: SimTime,
    epoch_index: u64,
) -> EpochPlan {
    EpochPlan {
        epoch_index,
        epoch_start: start,
        horizon: (start + lookahead).min(stop_time),
        lookahead,
        complete: start.is_infinite() || start >= stop_time,
    }
}

/// Insert received events. Each must not precede the receiver's clock, which
/// sits at the horizon of the epoch just finished.
pub fn merge_remote_events<E: Entity>(
    timeline: &mut Timeline<E>,
    batches: Vec<RemoteEventBatch>,
) -> Result<usize> {
    let floor = timeline.now();
    let mut merged = 0;
    for batch in batches {
        for event in batch.events {
            if event.time < floor {
                return Err(Error::CausalityViolation {
                    event: event.time,
                    bound: floor,
                    target: event.target,
                });
            }
            if !timeline.owns(event.target) {
                return Err(Error::UnknownEntity(event.target));
            }
            timeline.accept_remote(event);
            merged += 1;
        }
    }
    Ok(merged)
}

/// Split a worker's outbox by destination worker, one batch per other worker
/// in ascending order (empty batches included).
pub fn route_outbox(
    from: WorkerId,
    num_workers: u32,
    events: Vec<Event>,
    partition: &Partition,
) -> Result<Vec<RemoteEventBatch>> {
    let mut batches: Vec<RemoteEventBatch> = (0..num_workers)
        .filter(|w| *w != from)
        .map(|to| RemoteEventBatch {
            from,
            to,
            events: Vec::new(),
        })
        .collect();
    for event in events {
        let to = partition
            .worker_of(event.target)
            .ok_or(Error::UnknownEntity(event.target))?;
        if to == from {
            return Err(Error::Protocol(format!(
                "event for local entity {} left through the outbox",
                event.target
            )));
        }
        let slot = if to < from { to } else { to - 1 };
        batches[slot as usize].events.push(event);
    }
    Ok(batches)
}
