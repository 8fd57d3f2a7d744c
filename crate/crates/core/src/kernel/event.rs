use std::cmp::Ordering;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::time::SimTime;

/// Identifier of a simulated entity (a router in the network model).
pub type EntityId = u32;

/// Event issue number.
///
/// The high 24 bits name the entity that issued the event (offset by one, so
/// zero means "scheduled from outside the model"); the low 40 bits are that
/// issuer's private counter. Because counters are per issuer rather than per
/// timeline, an event keeps the same `Seq` no matter how entities are spread
/// across workers.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seq(pub u64);

impl Seq {
    pub const UNSET: Seq = Seq(0);
    const COUNTER_BITS: u32 = 40;
    const COUNTER_MASK: u64 = (1 << Self::COUNTER_BITS) - 1;
    /// Largest entity id that can be encoded as an issuer.
    pub const MAX_ISSUER: EntityId = (1 << (64 - Self::COUNTER_BITS)) - 2;

    /// Stamp for the `counter`-th event issued by `issuer` (`None` = external).
    /// Counters start at 1.
    pub fn stamped(issuer: Option<EntityId>, counter: u64) -> Seq {
        debug_assert!(counter > 0 && counter <= Self::COUNTER_MASK);
        let origin = issuer.map_or(0, |e| {
            assert!(e <= Self::MAX_ISSUER, "entity id {e} too large to stamp");
            u64::from(e) + 1
        });
        Seq((origin << Self::COUNTER_BITS) | counter)
    }

    pub fn is_unset(self) -> bool {
        self.0 == 0
    }

    pub fn issuer(self) -> Option<EntityId> {
        match self.0 >> Self::COUNTER_BITS {
            0 => None,
            o => Some((o - 1) as EntityId),
        }
    }

    pub fn counter(self) -> u64 {
        self.0 & Self::COUNTER_MASK
    }
}

/// Coarse event category, used for census counts and on the wire.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    PhotonArrival = 0,
    ClassicalMessage = 1,
    ProtocolTimer = 2,
}

impl EventKind {
    pub const ALL: [EventKind; 3] = [
        EventKind::PhotonArrival,
        EventKind::ClassicalMessage,
        EventKind::ProtocolTimer,
    ];

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(EventKind::PhotonArrival),
            1 => Some(EventKind::ClassicalMessage),
            2 => Some(EventKind::ProtocolTimer),
            _ => None,
        }
    }

    pub fn is_quantum(self) -> bool {
        self == EventKind::PhotonArrival
    }
}

/// A photon crossing one hop of a session path.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct Photon {
    pub session: u32,
    pub hop: u16,
    pub index: u64,
    /// Time the photon left the upstream router on this hop.
    pub emitted: SimTime,
    pub survived: bool,
    pub sender_basis: u8,
    pub receiver_basis: u8,
}

/// Receiver's basis announcement for one detected photon.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct SiftEntry {
    pub photon: u64,
    pub basis: u8,
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum ClassicalMessage {
    /// Downstream router of `hop` announces its bases to the upstream router.
    Sift {
        session: u32,
        hop: u16,
        entries: Vec<SiftEntry>,
    },
    /// Upstream router of `hop` has stopped sending on this session.
    SessionEnd { session: u32, hop: u16 },
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum Timer {
    /// Source router emits the next photon of a session.
    Emit { session: u32, photon: u64 },
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum Payload {
    PhotonArrival(Photon),
    ClassicalMessage(ClassicalMessage),
    ProtocolTimer(Timer),
}

impl Payload {
    pub fn kind(&self) -> EventKind {
        match self {
            Payload::PhotonArrival(_) => EventKind::PhotonArrival,
            Payload::ClassicalMessage(_) => EventKind::ClassicalMessage,
            Payload::ProtocolTimer(_) => EventKind::ProtocolTimer,
        }
    }
}

/// Timestamped unit of work aimed at one entity.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Event {
    pub time: SimTime,
    pub seq: Seq,
    pub target: EntityId,
    pub payload: Payload,
}

impl Event {
    /// New event with an unassigned sequence number.
    pub fn new(time: SimTime, target: EntityId, payload: Payload) -> Self {
        Event {
            time,
            seq: Seq::UNSET,
            target,
            payload,
        }
    }

    /// Total execution order key.
    pub fn key(&self) -> (SimTime, Seq) {
        (self.time, self.seq)
    }

    /// Stable 64-bit fingerprint of the full event contents.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv64::default();
        self.hash(&mut h);
        h.finish()
    }
}

/// Heap entry ordered by `(time, seq)` only.
#[derive(Debug)]
pub(crate) struct Pending(pub Event);

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.0.key() == other.0.key()
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.key().cmp(&other.0.key())
    }
}

/// FNV-1a, 64 bit.
#[derive(Clone, Copy, Debug)]
pub struct Fnv64(u64);

impl Default for Fnv64 {
    fn default() -> Self {
        Fnv64(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv64 {
    pub fn with_state(state: u64) -> Self {
        Fnv64(state)
    }
}

impl Hasher for Fnv64 {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
}
