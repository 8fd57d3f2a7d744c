use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::EntityId;
use crate::partition::{Partition, WorkerId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyKind {
    /// Sum over session paths of hops whose endpoints sit on different workers.
    CrossFlows,
    /// Quantum channels whose endpoints sit on different workers.
    CrossQchannels,
    /// Largest minus smallest per-worker memory total.
    MemoryBalance,
}

impl EnergyKind {
    pub fn name(self) -> &'static str {
        match self {
            EnergyKind::CrossFlows => "cross_flows",
            EnergyKind::CrossQchannels => "cross_qchannels",
            EnergyKind::MemoryBalance => "memory_balance",
        }
    }
}

impl FromStr for EnergyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "cross_flows" => Ok(EnergyKind::CrossFlows),
            "cross_qchannels" => Ok(EnergyKind::CrossQchannels),
            "memory_balance" => Ok(EnergyKind::MemoryBalance),
            other => Err(Error::InvalidParameter(format!("unknown energy kind {other:?}"))),
        }
    }
}

/// Weighted blend of energy terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergySpec {
    pub terms: Vec<(EnergyKind, f64)>,
}

impl EnergySpec {
    pub fn single(kind: EnergyKind) -> Self {
        EnergySpec {
            terms: vec![(kind, 1.0)],
        }
    }

    pub fn weight(&self, kind: EnergyKind) -> f64 {
        self.terms
            .iter()
            .filter(|(k, _)| *k == kind)
            .map(|(_, w)| w)
            .sum()
    }

    fn validate(&self) -> Result<()> {
        if self.terms.is_empty() {
            return Err(Error::InvalidParameter("energy spec has no terms".into()));
        }
        for (k, w) in &self.terms {
            if !w.is_finite() || *w < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "weight {w} for {} must be finite and non-negative",
                    k.name()
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for EnergySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (k, w)) in self.terms.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}={w}", k.name())?;
        }
        Ok(())
    }
}

/// Parses `cross_qchannels` or `cross_qchannels=1,memory_balance=0.25`.
impl FromStr for EnergySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut terms = Vec::new();
        for part in s.split(',').filter(|p| !p.trim().is_empty()) {
            let (kind, weight) = match part.split_once('=') {
                Some((k, w)) => (
                    k.parse()?,
                    w.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::InvalidParameter(format!("bad weight {w:?}")))?,
                ),
                None => (part.parse()?, 1.0),
            };
            terms.push((kind, weight));
        }
        let spec = EnergySpec { terms };
        spec.validate()?;
        Ok(spec)
    }
}

/// The slice of a topology and workload the partitioner looks at.
///
/// Routers are addressed by dense index; `routers` is sorted by id.
#[derive(Clone, Debug, Default)]
pub struct PartitionGraph {
    pub routers: Vec<EntityId>,
    pub memories: Vec<u64>,
    pub qchannels: Vec<(usize, usize)>,
    /// Session paths as router index sequences.
    pub flows: Vec<Vec<usize>>,
}

impl PartitionGraph {
    pub fn new(
        mut routers: Vec<(EntityId, u64)>,
        qchannels: &[(EntityId, EntityId)],
        flows: &[Vec<EntityId>],
    ) -> Result<Self> {
        routers.sort_unstable();
        let index: HashMap<EntityId, usize> =
            routers.iter().enumerate().map(|(i, (r, _))| (*r, i)).collect();
        if index.len() != routers.len() {
            return Err(Error::InvalidTopology("duplicate router id".into()));
        }
        let lookup = |r: &EntityId| {
            index
                .get(r)
                .copied()
                .ok_or_else(|| Error::InvalidTopology(format!("unknown router {r}")))
        };
        let qchannels = qchannels
            .iter()
            .map(|(a, b)| Ok((lookup(a)?, lookup(b)?)))
            .collect::<Result<_>>()?;
        let flows = flows
            .iter()
            .map(|p| p.iter().map(lookup).collect::<Result<_>>())
            .collect::<Result<_>>()?;
        Ok(PartitionGraph {
            routers: routers.iter().map(|(r, _)| *r).collect(),
            memories: routers.iter().map(|(_, m)| *m).collect(),
            qchannels,
            flows,
        })
    }

    pub fn len(&self) -> usize {
        self.routers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.routers.is_empty()
    }

    /// Dense assignment vector for `partition`.
    pub fn dense(&self, partition: &Partition) -> Result<Vec<WorkerId>> {
        self.routers
            .iter()
            .map(|r| {
                partition
                    .worker_of(*r)
                    .ok_or_else(|| Error::PartitionSchema(format!("router {r} is not assigned")))
            })
            .collect()
    }

    pub fn to_partition(&self, dense: &[WorkerId], num_workers: u32) -> Result<Partition> {
        Partition::new(
            num_workers,
            self.routers.iter().copied().zip(dense.iter().copied()).collect(),
        )
    }
}

pub(crate) fn term(
    graph: &PartitionGraph,
    assign: &[WorkerId],
    num_workers: u32,
    kind: EnergyKind,
) -> f64 {
    match kind {
        EnergyKind::CrossQchannels => graph
            .qchannels
            .iter()
            .filter(|(a, b)| assign[*a] != assign[*b])
            .count() as f64,
        EnergyKind::CrossFlows => graph
            .flows
            .iter()
            .flat_map(|p| p.windows(2))
            .filter(|h| assign[h[0]] != assign[h[1]])
            .count() as f64,
        EnergyKind::MemoryBalance => {
            let mut totals = vec![0u64; num_workers as usize];
            for (i, w) in assign.iter().enumerate() {
                totals[*w as usize] += graph.memories[i];
            }
            let max = totals.iter().max().copied().unwrap_or(0);
            let min = totals.iter().min().copied().unwrap_or(0);
            (max - min) as f64
        }
    }
}

pub(crate) fn dense_energy(
    graph: &PartitionGraph,
    assign: &[WorkerId],
    num_workers: u32,
    spec: &EnergySpec,
) -> f64 {
    spec.terms
        .iter()
        .map(|(k, w)| w * term(graph, assign, num_workers, *k))
        .sum()
}

/// Energy of `partition`; always non-negative.
pub fn energy(graph: &PartitionGraph, partition: &Partition, spec: &EnergySpec) -> Result<f64> {
    spec.validate()?;
    let assign = graph.dense(partition)?;
    Ok(dense_energy(graph, &assign, partition.num_workers(), spec))
}
