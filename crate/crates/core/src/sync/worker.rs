use std::sync::Arc;
use std::time::Instant;

use crate::error::Result;
use crate::kernel::{Entity, Timeline};
use crate::partition::{Partition, WorkerId};
use crate::sync::exchange::Exchange;
use crate::sync::slots::ComputeSlots;
use crate::sync::{merge_remote_events, plan_from_min, route_outbox, EpochPlan, EpochTiming};
use crate::time::SimTime;

/// Model hook run between compute and event exchange.
pub trait EpochFlush: Entity + Sized {
    /// Settle anything batched during the epoch (the global-QSM flush).
    fn end_of_epoch(_timeline: &mut Timeline<Self>, _epoch_index: u64) -> Result<()> {
        Ok(())
    }

    /// Release model resources once the run is over.
    fn finish(_timeline: &mut Timeline<Self>) -> Result<()> {
        Ok(())
    }
}

/// What one worker did.
#[derive(Clone, Debug, Default)]
pub struct WorkerRun {
    pub timings: Vec<EpochTiming>,
    pub plans: Vec<EpochPlan>,
    pub wall_ns: u64,
}

/// One worker's timeline plus its transport.
pub struct Worker<E: EpochFlush, X: Exchange> {
    timeline: Timeline<E>,
    exchange: X,
    partition: Arc<Partition>,
    lookahead: SimTime,
    slots: Option<Arc<ComputeSlots>>,
}

fn ns(a: Instant, b: Instant) -> u64 {
    b.duration_since(a).as_nanos() as u64
}

impl<E: EpochFlush, X: Exchange> Worker<E, X> {
    pub fn new(timeline: Timeline<E>, exchange: X, partition: Arc<Partition>, lookahead: SimTime) -> Self {
        Worker {
            timeline,
            exchange,
            partition,
            lookahead,
            slots: None,
        }
    }

    /// Share compute slots with the other workers of this process.
    pub fn with_slots(mut self, slots: Arc<ComputeSlots>) -> Self {
        self.slots = Some(slots);
        self
    }

    pub fn id(&self) -> WorkerId {
        self.exchange.worker()
    }

    /// Drive epochs until every worker runs dry. On failure the other
    /// workers are released with a transport error.
    pub fn run(mut self) -> (Timeline<E>, Result<WorkerRun>) {
        let result = self.epochs();
        if result.is_err() {
            self.exchange.abort();
        }
        let closed = E::finish(&mut self.timeline);
        let result = match (result, closed) {
            (Ok(r), Ok(())) => Ok(r),
            (Err(e), _) | (Ok(_), Err(e)) => Err(e),
        };
        (self.timeline, result)
    }

    fn exchange_and_agree(&mut self) -> Result<SimTime> {
        let outbox = self.timeline.take_outbox();
        let outgoing = route_outbox(self.id(), self.exchange.num_workers(), outbox, &self.partition)?;
        let incoming = self.exchange.exchange_events(outgoing)?;
        merge_remote_events(&mut self.timeline, incoming)?;
        let next = self.timeline.peek_next_time();
        self.exchange.agree_min(next)
    }

    fn epochs(&mut self) -> Result<WorkerRun> {
        let worker = self.id();
        let solo = self.exchange.num_workers() == 1;
        let stop = self.timeline.stop_time();
        let mut run = WorkerRun::default();
        let start = Instant::now();

        self.timeline.init_entities()?;
        let min = self.exchange_and_agree()?;
        let mut plan = plan_from_min(min, self.lookahead, stop, 0);
        // setup time lands in the first epoch's exchange column
        let mut carry = ns(start, Instant::now());

        loop {
            if plan.complete {
                // a second empty agreement confirms nothing is in flight
                let t = Instant::now();
                self.exchange.barrier()?;
                let min = self.exchange_and_agree()?;
                let confirm = plan_from_min(min, self.lookahead, stop, plan.epoch_index);
                let spent = ns(t, Instant::now());
                match run.timings.last_mut() {
                    Some(last) if !solo => last.exchange_ns += spent,
                    _ => carry += spent,
                }
                if confirm.complete {
                    break;
                }
                plan = confirm;
                continue;
            }

            self.timeline
                .set_remote_floor(plan.epoch_start.saturating_add(plan.lookahead));
            let queued = Instant::now();
            let slot = self.slots.as_deref().map(ComputeSlots::acquire);
            let t0 = Instant::now();
            let executed = self.timeline.run_until(plan.horizon)?;
            let t1 = Instant::now();
            drop(slot);
            self.exchange.barrier()?;
            let t2 = Instant::now();
            E::end_of_epoch(&mut self.timeline, plan.epoch_index)?;
            let t3 = Instant::now();
            let min = self.exchange_and_agree()?;
            let next = plan_from_min(min, self.lookahead, stop, plan.epoch_index + 1);
            let t4 = Instant::now();

            let (barrier_wait_ns, exchange_ns) = if solo {
                (0, 0)
            } else {
                (ns(queued, t0) + ns(t1, t2), ns(t3, t4) + std::mem::take(&mut carry))
            };
            run.timings.push(EpochTiming {
                worker,
                epoch_index: plan.epoch_index,
                compute_ns: ns(t0, t1) + if solo { ns(queued, t0) + std::mem::take(&mut carry) } else { 0 },
                barrier_wait_ns,
                exchange_ns,
                qsm_socket_ns: ns(t2, t3),
                events_executed: executed,
                horizon: plan.horizon,
            });
            run.plans.push(plan);
            plan = next;
        }
        self.exchange.finish()?;
        run.wall_ns = ns(start, Instant::now());
        Ok(run)
    }
}
