//! Parallel discrete-event simulation of quantum key distribution networks.

pub mod error;
pub mod harness;
pub mod kernel;
pub mod netmodel;
pub mod partition;
pub mod qsm;
pub mod rng;
pub mod sync;
pub mod time;
pub mod wire;

pub use error::{Error, QsmError, Result};
pub use harness::{RunReport, RunSpec, Transport};
pub use kernel::{EntityId, Timeline};
pub use netmodel::{ModelOptions, Topology};
pub use partition::{Partition, WorkerId};
pub use sync::{EpochPlan, EpochTiming};
pub use time::SimTime;
