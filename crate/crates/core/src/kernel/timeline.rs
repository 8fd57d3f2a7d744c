use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashSet};
use std::hash::Hasher;

use crate::error::{Error, Result};
use crate::kernel::event::{EntityId, Event, Fnv64, Payload, Pending, Seq};
use crate::time::SimTime;

/// Something that reacts to events on a timeline.
pub trait Entity {
    /// Per-timeline state shared by every entity on it (QSM access, model
    /// parameters, counters).
    type Services;

    /// Called once, in entity-id order, before the first event executes.
    fn init(&mut self, _ctx: &mut Context<'_, Self::Services>) -> Result<()> {
        Ok(())
    }

    fn handle(&mut self, event: &Event, ctx: &mut Context<'_, Self::Services>) -> Result<()>;
}

/// Handle passed to an entity while it runs.
pub struct Context<'a, S> {
    now: SimTime,
    me: EntityId,
    counter: &'a mut u64,
    issued: &'a mut Vec<Event>,
    pub services: &'a mut S,
}

impl<S> Context<'_, S> {
    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn me(&self) -> EntityId {
        self.me
    }

    /// Schedule `payload` for `target` at absolute time `at`.
    pub fn schedule(&mut self, at: SimTime, target: EntityId, payload: Payload) -> Result<Seq> {
        if at < self.now {
            return Err(Error::ScheduleInPast {
                event: at,
                now: self.now,
            });
        }
        *self.counter += 1;
        let seq = Seq::stamped(Some(self.me), *self.counter);
        self.issued.push(Event {
            time: at,
            seq,
            target,
            payload,
        });
        Ok(seq)
    }
}

/// Execution summary for one entity: how many events it ran and a rolling
/// hash over them in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EntityLog {
    pub executed: u64,
    pub hash: u64,
}

struct Slot<E> {
    entity: E,
    issued: u64,
    log: EntityLog,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct QueueCounters {
    pub scheduled: u64,
    pub executed: u64,
    pub cancelled: u64,
}

/// One worker's event queue, clock and owned entities.
pub struct Timeline<E: Entity> {
    queue: BinaryHeap<Reverse<Pending>>,
    live: HashSet<Seq>,
    tombstones: HashSet<Seq>,
    now: SimTime,
    stop_time: SimTime,
    entities: BTreeMap<EntityId, Slot<E>>,
    services: E::Services,
    external_issued: u64,
    outbox: Vec<Event>,
    remote_floor: SimTime,
    counters: QueueCounters,
    trace: Option<Vec<(SimTime, Seq, EntityId)>>,
    scratch: Vec<Event>,
}

impl<E: Entity> Timeline<E> {
    pub fn new(services: E::Services) -> Self {
        Timeline {
            queue: BinaryHeap::new(),
            live: HashSet::new(),
            tombstones: HashSet::new(),
            now: SimTime::ZERO,
            stop_time: SimTime::INFINITY,
            entities: BTreeMap::new(),
            services,
            external_issued: 0,
            outbox: Vec::new(),
            remote_floor: SimTime::ZERO,
            counters: QueueCounters::default(),
            trace: None,
            scratch: Vec::new(),
        }
    }

    pub fn with_stop_time(mut self, stop_time: SimTime) -> Self {
        self.stop_time = stop_time;
        self
    }

    pub fn add_entity(&mut self, id: EntityId, entity: E) {
        self.entities.insert(
            id,
            Slot {
                entity,
                issued: 0,
                log: EntityLog {
                    executed: 0,
                    hash: Fnv64::default().finish(),
                },
            },
        );
    }

    /// Record `(time, seq, target)` of every executed event.
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn trace(&self) -> &[(SimTime, Seq, EntityId)] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn stop_time(&self) -> SimTime {
        self.stop_time
    }

    pub fn owns(&self, id: EntityId) -> bool {
        self.entities.contains_key(&id)
    }

    pub fn entity(&self, id: EntityId) -> Option<&E> {
        self.entities.get(&id).map(|s| &s.entity)
    }

    pub fn entity_mut(&mut self, id: EntityId) -> Option<&mut E> {
        self.entities.get_mut(&id).map(|s| &mut s.entity)
    }

    pub fn entities(&self) -> impl Iterator<Item = (EntityId, &E)> {
        self.entities.iter().map(|(id, s)| (*id, &s.entity))
    }

    pub fn entity_logs(&self) -> impl Iterator<Item = (EntityId, EntityLog)> + '_ {
        self.entities.iter().map(|(id, s)| (*id, s.log))
    }

    pub fn services(&self) -> &E::Services {
        &self.services
    }

    pub fn services_mut(&mut self) -> &mut E::Services {
        &mut self.services
    }

    /// Run `f` with mutable access to one entity and the shared services.
    pub fn with_entity<R>(
        &mut self,
        id: EntityId,
        f: impl FnOnce(&mut E, &mut E::Services) -> R,
    ) -> Result<R> {
        let slot = self.entities.get_mut(&id).ok_or(Error::UnknownEntity(id))?;
        Ok(f(&mut slot.entity, &mut self.services))
    }

    pub fn counters(&self) -> QueueCounters {
        self.counters
    }

    /// Events still waiting to execute (cancelled ones excluded).
    pub fn remaining(&self) -> u64 {
        self.live.len() as u64
    }

    /// Remote-bound events must not be earlier than `floor`.
    pub fn set_remote_floor(&mut self, floor: SimTime) {
        self.remote_floor = floor;
    }

    /// Events produced for entities this timeline does not own.
    pub fn take_outbox(&mut self) -> Vec<Event> {
        std::mem::take(&mut self.outbox)
    }

    /// Call every entity's `init` hook in id order.
    pub fn init_entities(&mut self) -> Result<()> {
        let ids: Vec<EntityId> = self.entities.keys().copied().collect();
        for id in ids {
            let mut issued = std::mem::take(&mut self.scratch);
            {
                let slot = self.entities.get_mut(&id).expect("listed above");
                let mut ctx = Context {
                    now: self.now,
                    me: id,
                    counter: &mut slot.issued,
                    issued: &mut issued,
                    services: &mut self.services,
                };
                slot.entity.init(&mut ctx)?;
            }
            self.route_issued(&mut issued)?;
            self.scratch = issued;
        }
        Ok(())
    }

    /// Insert an event. An unset `seq` is stamped from the external counter.
    pub fn schedule(&mut self, mut event: Event) -> Result<Seq> {
        if event.time < self.now {
            return Err(Error::ScheduleInPast {
                event: event.time,
                now: self.now,
            });
        }
        if event.seq.is_unset() {
            self.external_issued += 1;
            event.seq = Seq::stamped(None, self.external_issued);
        }
        let seq = event.seq;
        if self.owns(event.target) {
            self.push(event);
        } else {
            self.outbox.push(event);
        }
        Ok(seq)
    }

    /// Insert an event received from another timeline, keeping its `seq`.
    pub(crate) fn accept_remote(&mut self, event: Event) {
        debug_assert!(!event.seq.is_unset());
        self.push(event);
    }

    fn push(&mut self, event: Event) {
        self.live.insert(event.seq);
        self.counters.scheduled += 1;
        self.queue.push(Reverse(Pending(event)));
    }

    /// Tombstone a queued event. Returns false if `seq` is not queued.
    pub fn cancel(&mut self, seq: Seq) -> bool {
        if self.live.remove(&seq) {
            self.tombstones.insert(seq);
            self.counters.cancelled += 1;
            true
        } else {
            false
        }
    }

    fn purge_head(&mut self) {
        while let Some(Reverse(Pending(top))) = self.queue.peek() {
            if self.tombstones.remove(&top.seq) {
                self.queue.pop();
            } else {
                break;
            }
        }
    }

    /// Time of the earliest live event, or `SimTime::INFINITY`.
    pub fn peek_next_time(&mut self) -> SimTime {
        self.purge_head();
        self.queue
            .peek()
            .map_or(SimTime::INFINITY, |Reverse(Pending(e))| e.time)
    }

    /// Execute every event with `time < horizon` (and before the stop time),
    /// then advance the clock to `horizon`.
    pub fn run_until(&mut self, horizon: SimTime) -> Result<u64> {
        if horizon <= self.now {
            return Ok(0);
        }
        let limit = horizon.min(self.stop_time);
        let mut executed = 0;
        let mut issued = std::mem::take(&mut self.scratch);
        loop {
            self.purge_head();
            match self.queue.peek() {
                Some(Reverse(Pending(e))) if e.time < limit => {}
                _ => break,
            }
            let Reverse(Pending(event)) = self.queue.pop().expect("peeked");
            self.live.remove(&event.seq);
            self.now = event.time;

            let slot = self
                .entities
                .get_mut(&event.target)
                .ok_or(Error::UnknownEntity(event.target))?;
            let mut h = Fnv64::with_state(slot.log.hash);
            h.write_u64(event.fingerprint());
            slot.log.hash = h.finish();
            slot.log.executed += 1;
            if let Some(trace) = self.trace.as_mut() {
                trace.push((event.time, event.seq, event.target));
            }
            let mut ctx = Context {
                now: self.now,
                me: event.target,
                counter: &mut slot.issued,
                issued: &mut issued,
                services: &mut self.services,
            };
            slot.entity.handle(&event, &mut ctx)?;
            self.counters.executed += 1;
            executed += 1;
            self.route_issued(&mut issued)?;
        }
        self.scratch = issued;
        self.now = horizon;
        Ok(executed)
    }

    fn route_issued(&mut self, issued: &mut Vec<Event>) -> Result<()> {
        for event in issued.drain(..) {
            if self.entities.contains_key(&event.target) {
                self.push(event);
            } else {
                if event.time < self.remote_floor {
                    return Err(Error::CausalityViolation {
                        event: event.time,
                        bound: self.remote_floor,
                        target: event.target,
                    });
                }
                self.outbox.push(event);
            }
        }
        Ok(())
    }
}
