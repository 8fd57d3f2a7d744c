//! Router-to-worker assignment, partition quality metrics and the annealing
//! optimizer.

mod anneal;
mod energy;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::EntityId;

pub use anneal::{anneal, metropolis_accept, AnnealSchedule};
pub use energy::{energy, EnergyKind, EnergySpec, PartitionGraph};

pub type WorkerId = u32;

/// Total map from router to worker.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PartitionFile", into = "PartitionFile")]
pub struct Partition {
    num_workers: u32,
    assignment: BTreeMap<EntityId, WorkerId>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartitionFile {
    num_workers: u32,
    assignment: BTreeMap<String, WorkerId>,
}

impl From<Partition> for PartitionFile {
    fn from(p: Partition) -> Self {
        PartitionFile {
            num_workers: p.num_workers,
            assignment: p.assignment.iter().map(|(r, w)| (r.to_string(), *w)).collect(),
        }
    }
}

impl TryFrom<PartitionFile> for Partition {
    type Error = Error;

    fn try_from(file: PartitionFile) -> Result<Self> {
        let mut assignment = BTreeMap::new();
        for (r, w) in file.assignment {
            let id: EntityId = r
                .parse()
                .map_err(|_| Error::PartitionSchema(format!("router id {r:?} is not an integer")))?;
            assignment.insert(id, w);
        }
        Partition::new(file.num_workers, assignment)
    }
}

impl Partition {
    pub fn new(num_workers: u32, assignment: BTreeMap<EntityId, WorkerId>) -> Result<Self> {
        if num_workers == 0 {
            return Err(Error::PartitionSchema("num_workers must be positive".into()));
        }
        if let Some((r, w)) = assignment.iter().find(|(_, w)| **w >= num_workers) {
            return Err(Error::PartitionSchema(format!(
                "router {r} assigned to worker {w}, but num_workers is {num_workers}"
            )));
        }
        Ok(Partition {
            num_workers,
            assignment,
        })
    }

    /// Router `routers[i]` goes to worker `i mod num_workers`.
    pub fn round_robin(routers: &[EntityId], num_workers: u32) -> Result<Self> {
        let assignment = routers
            .iter()
            .enumerate()
            .map(|(i, r)| (*r, (i as u32) % num_workers.max(1)))
            .collect();
        Self::new(num_workers, assignment)
    }

    /// Everything on worker 0.
    pub fn single(routers: &[EntityId]) -> Self {
        Partition {
            num_workers: 1,
            assignment: routers.iter().map(|r| (*r, 0)).collect(),
        }
    }

    pub fn num_workers(&self) -> u32 {
        self.num_workers
    }

    pub fn assignment(&self) -> &BTreeMap<EntityId, WorkerId> {
        &self.assignment
    }

    pub fn worker_of(&self, router: EntityId) -> Option<WorkerId> {
        self.assignment.get(&router).copied()
    }

    /// Routers assigned to `worker`, ascending.
    pub fn routers_of(&self, worker: WorkerId) -> Vec<EntityId> {
        self.assignment
            .iter()
            .filter(|(_, w)| **w == worker)
            .map(|(r, _)| *r)
            .collect()
    }

    /// Router count per worker.
    pub fn loads(&self) -> Vec<usize> {
        let mut loads = vec![0; self.num_workers as usize];
        for w in self.assignment.values() {
            loads[*w as usize] += 1;
        }
        loads
    }

    /// Check that the partition covers exactly `routers`.
    pub fn validate_for(&self, routers: &[EntityId]) -> Result<()> {
        for r in routers {
            if !self.assignment.contains_key(r) {
                return Err(Error::PartitionSchema(format!("router {r} is not assigned")));
            }
        }
        if self.assignment.len() != routers.len() {
            let known: std::collections::BTreeSet<_> = routers.iter().collect();
            let extra = self.assignment.keys().find(|r| !known.contains(r));
            return Err(Error::PartitionSchema(format!(
                "assignment names unknown router {}",
                extra.map_or("?".into(), |r| r.to_string())
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::PartitionSchema(format!("malformed partition file: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Load and check coverage against a topology's router list.
    pub fn load_for(path: impl AsRef<Path>, routers: &[EntityId]) -> Result<Self> {
        let p = Self::load(path)?;
        p.validate_for(routers)?;
        Ok(p)
    }
}
