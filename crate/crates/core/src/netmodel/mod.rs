//! Quantum network model: topology, the key-distribution workload and the
//! router entity that runs it.
//!
//! Each session distributes key over its path one hop at a time. The source
//! emits photons on a fixed period; a relay that detects a photon re-sends it
//! on the next hop. Every detected photon becomes a Bell pair in the QSM,
//! shared between the two routers of that hop. The downstream router measures
//! its half immediately and reports its basis upstream in batched sift
//! messages; the upstream router then measures its half when the bases agree,
//! or discards it otherwise.

mod generate;
mod router;
mod topology;

pub use generate::{gen_as, gen_linear, AsParams, LinkParams, LinearParams, WorkloadParams};
pub use router::{
    Census, HopKey, ModelOptions, NetModel, NetServices, PhotonDraws, Router, SessionSummary,
};
pub use topology::{CChannel, QChannel, RouterSpec, SessionSpec, Topology};

/// Fraction of photons that survive a fiber of `distance_m` meters.
pub fn survival_probability(attenuation_db_per_km: f64, distance_m: f64) -> f64 {
    10f64.powf(-attenuation_db_per_km * distance_m / 1000.0 / 10.0)
}

/// Memory-key layout: `router << 44 | session << 28 | side << 27 | photon`.
///
/// `side` is 0 for the memory a router uses as sender on a hop and 1 for the
/// memory it uses as receiver.
pub mod keys {
    use crate::kernel::EntityId;
    use crate::qsm::MemoryKey;

    pub const MAX_ROUTER: EntityId = (1 << 20) - 1;
    pub const MAX_SESSION: u32 = (1 << 16) - 1;
    pub const MAX_PHOTONS: u64 = 1 << 27;

    pub const SENDER: u8 = 0;
    pub const RECEIVER: u8 = 1;

    pub fn encode(router: EntityId, session: u32, side: u8, photon: u64) -> MemoryKey {
        debug_assert!(router <= MAX_ROUTER && session <= MAX_SESSION && photon < MAX_PHOTONS);
        (u64::from(router) << 44) | (u64::from(session) << 28) | (u64::from(side & 1) << 27) | photon
    }

    pub fn router(key: MemoryKey) -> EntityId {
        (key >> 44) as EntityId
    }

    pub fn session(key: MemoryKey) -> u32 {
        ((key >> 28) & 0xffff) as u32
    }

    pub fn side(key: MemoryKey) -> u8 {
        ((key >> 27) & 1) as u8
    }

    pub fn photon(key: MemoryKey) -> u64 {
        key & (MAX_PHOTONS - 1)
    }
}

#[cfg(test)]
mod tests;
