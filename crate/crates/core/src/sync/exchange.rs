use std::sync::{Arc, Condvar, Mutex};

use crate::error::{Error, Result};
use crate::partition::WorkerId;
use crate::sync::RemoteEventBatch;
use crate::time::SimTime;

/// Collective operations the epoch loop needs from its transport.
pub trait Exchange: Send {
    fn worker(&self) -> WorkerId;

    fn num_workers(&self) -> u32;

    /// Block until every worker has arrived.
    fn barrier(&mut self) -> Result<()>;

    /// Hand over one batch per other worker; receive the batches addressed to
    /// this worker, ordered by sender.
    fn exchange_events(&mut self, outgoing: Vec<RemoteEventBatch>) -> Result<Vec<RemoteEventBatch>>;

    /// All-reduce minimum.
    fn agree_min(&mut self, local: SimTime) -> Result<SimTime>;

    /// Leave cleanly after the final epoch.
    fn finish(&mut self) -> Result<()>;

    /// Release every other worker with an error after a local failure.
    fn abort(&mut self);
}

/// Single-worker transport: every collective is a no-op.
#[derive(Debug, Default)]
pub struct SoloExchange;

impl Exchange for SoloExchange {
    fn worker(&self) -> WorkerId {
        0
    }

    fn num_workers(&self) -> u32 {
        1
    }

    fn barrier(&mut self) -> Result<()> {
        Ok(())
    }

    fn exchange_events(&mut self, outgoing: Vec<RemoteEventBatch>) -> Result<Vec<RemoteEventBatch>> {
        if outgoing.iter().any(|b| !b.events.is_empty()) {
            return Err(Error::Protocol("single worker has no peers".into()));
        }
        Ok(Vec::new())
    }

    fn agree_min(&mut self, local: SimTime) -> Result<SimTime> {
        Ok(local)
    }

    fn finish(&mut self) -> Result<()> {
        Ok(())
    }

    fn abort(&mut self) {}
}

struct BarrierState {
    arrived: usize,
    generation: u64,
    aborted: bool,
}

/// A reusable barrier that can be broken by any participant.
struct Barrier {
    n: usize,
    state: Mutex<BarrierState>,
    cv: Condvar,
}

impl Barrier {
    fn new(n: usize) -> Self {
        Barrier {
            n,
            state: Mutex::new(BarrierState {
                arrived: 0,
                generation: 0,
                aborted: false,
            }),
            cv: Condvar::new(),
        }
    }

    fn wait(&self) -> Result<()> {
        let mut s = self.state.lock().expect("barrier lock");
        if s.aborted {
            return Err(Error::Transport("a peer worker failed".into()));
        }
        s.arrived += 1;
        if s.arrived == self.n {
            s.arrived = 0;
            s.generation += 1;
            self.cv.notify_all();
            return Ok(());
        }
        let gen = s.generation;
        let s = self
            .cv
            .wait_while(s, |s| s.generation == gen && !s.aborted)
            .expect("barrier lock");
        if s.generation == gen {
            return Err(Error::Transport("a peer worker failed".into()));
        }
        Ok(())
    }

    fn abort(&self) {
        let mut s = self.state.lock().expect("barrier lock");
        s.aborted = true;
        self.cv.notify_all();
    }
}

/// Shared state for worker threads in one process.
pub struct InprocHub {
    n: u32,
    barrier: Barrier,
    mailboxes: Vec<Mutex<Vec<RemoteEventBatch>>>,
    proposals: Mutex<Vec<SimTime>>,
}

impl InprocHub {
    pub fn new(num_workers: u32) -> Arc<Self> {
        Arc::new(InprocHub {
            n: num_workers,
            barrier: Barrier::new(num_workers as usize),
            mailboxes: (0..num_workers).map(|_| Mutex::new(Vec::new())).collect(),
            proposals: Mutex::new(vec![SimTime::INFINITY; num_workers as usize]),
        })
    }

    pub fn endpoint(self: &Arc<Self>, worker: WorkerId) -> InprocExchange {
        assert!(worker < self.n, "worker {worker} out of range");
        InprocExchange {
            hub: Arc::clone(self),
            worker,
        }
    }
}

pub struct InprocExchange {
    hub: Arc<InprocHub>,
    worker: WorkerId,
}

impl Exchange for InprocExchange {
    fn worker(&self) -> WorkerId {
        self.worker
    }

    fn num_workers(&self) -> u32 {
        self.hub.n
    }

    fn barrier(&mut self) -> Result<()> {
        self.hub.barrier.wait()
    }

    fn exchange_events(&mut self, outgoing: Vec<RemoteEventBatch>) -> Result<Vec<RemoteEventBatch>> {
        for batch in outgoing {
            if batch.to >= self.hub.n || batch.to == self.worker || batch.from != self.worker {
                return Err(Error::Protocol(format!(
                    "worker {} cannot send a batch {}->{}",
                    self.worker, batch.from, batch.to
                )));
            }
            self.hub.mailboxes[batch.to as usize]
                .lock()
                .expect("mailbox lock")
                .push(batch);
        }
        self.hub.barrier.wait()?;
        let mut incoming =
            std::mem::take(&mut *self.hub.mailboxes[self.worker as usize].lock().expect("mailbox lock"));
        incoming.sort_by_key(|b| b.from);
        Ok(incoming)
    }

    fn agree_min(&mut self, local: SimTime) -> Result<SimTime> {
        self.hub.proposals.lock().expect("proposal lock")[self.worker as usize] = local;
        self.hub.barrier.wait()?;
        let min = self
            .hub
            .proposals
            .lock()
            .expect("proposal lock")
            .iter()
            .copied()
            .min()
            .unwrap_or(SimTime::INFINITY);
        // nobody may overwrite a proposal until everyone has read them
        self.hub.barrier.wait()?;
        Ok(min)
    }

    fn finish(&mut self) -> Result<()> {
        Ok(())
    }

    fn abort(&mut self) {
        self.hub.barrier.abort();
    }
}
