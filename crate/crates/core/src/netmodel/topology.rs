use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::EntityId;
use crate::netmodel::keys;
use crate::partition::PartitionGraph;
use crate::time::SimTime;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouterSpec {
    pub id: EntityId,
    pub memories: u32,
}

/// Bidirectional quantum link.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QChannel {
    pub src: EntityId,
    pub dst: EntityId,
    pub distance_m: f64,
    pub attenuation_db_per_km: f64,
    pub delay_ps: SimTime,
}

impl QChannel {
    pub fn survival_probability(&self) -> f64 {
        super::survival_probability(self.attenuation_db_per_km, self.distance_m)
    }
}

/// Bidirectional, lossless classical link.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CChannel {
    pub src: EntityId,
    pub dst: EntityId,
    pub delay_ps: SimTime,
}

/// A key-distribution session relayed hop by hop along `path`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionSpec {
    pub id: u32,
    pub src: EntityId,
    pub dst: EntityId,
    pub path: Vec<EntityId>,
    pub period_ps: SimTime,
    /// The source stops once its first hop has this many sifted bits.
    pub target_key_bits: u64,
    /// Hard cap on photons emitted by the source.
    pub max_photons: u64,
    #[serde(default)]
    pub start_ps: SimTime,
}

/// Network description plus workload, as stored in topology files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub seed: u64,
    pub routers: Vec<RouterSpec>,
    pub qconnections: Vec<QChannel>,
    pub cconnections: Vec<CChannel>,
    pub sessions: Vec<SessionSpec>,
}

pub(crate) fn link_key(a: EntityId, b: EntityId) -> (EntityId, EntityId) {
    (a.min(b), a.max(b))
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidTopology(msg.into())
}

impl Topology {
    pub fn router_ids(&self) -> Vec<EntityId> {
        let mut ids: Vec<_> = self.routers.iter().map(|r| r.id).collect();
        ids.sort_unstable();
        ids
    }

    pub fn qchannel(&self, a: EntityId, b: EntityId) -> Option<&QChannel> {
        let k = link_key(a, b);
        self.qconnections.iter().find(|c| link_key(c.src, c.dst) == k)
    }

    pub fn cchannel(&self, a: EntityId, b: EntityId) -> Option<&CChannel> {
        let k = link_key(a, b);
        self.cconnections.iter().find(|c| link_key(c.src, c.dst) == k)
    }

    /// Sorted neighbour lists over quantum links.
    pub fn adjacency(&self) -> BTreeMap<EntityId, Vec<EntityId>> {
        let mut adj: BTreeMap<EntityId, Vec<EntityId>> =
            self.routers.iter().map(|r| (r.id, Vec::new())).collect();
        for c in &self.qconnections {
            adj.entry(c.src).or_default().push(c.dst);
            adj.entry(c.dst).or_default().push(c.src);
        }
        for n in adj.values_mut() {
            n.sort_unstable();
            n.dedup();
        }
        adj
    }

    /// Check every structural invariant the simulator relies on.
    pub fn validate(&self) -> Result<()> {
        if self.routers.is_empty() {
            return Err(Error::EmptyTopology);
        }
        let mut ids = BTreeSet::new();
        for r in &self.routers {
            if r.id > keys::MAX_ROUTER {
                return Err(invalid(format!("router id {} exceeds {}", r.id, keys::MAX_ROUTER)));
            }
            if !ids.insert(r.id) {
                return Err(invalid(format!("duplicate router {}", r.id)));
            }
        }
        let known = |id: EntityId| {
            if ids.contains(&id) {
                Ok(())
            } else {
                Err(invalid(format!("link names unknown router {id}")))
            }
        };

        let mut qlinks = HashMap::new();
        for c in &self.qconnections {
            known(c.src)?;
            known(c.dst)?;
            if c.src == c.dst {
                return Err(invalid(format!("quantum self-loop on router {}", c.src)));
            }
            if c.delay_ps == SimTime::ZERO || c.delay_ps.is_infinite() {
                return Err(invalid(format!("quantum link {}-{} needs a finite positive delay", c.src, c.dst)));
            }
            if !(c.distance_m >= 0.0 && c.distance_m.is_finite())
                || !(c.attenuation_db_per_km >= 0.0 && c.attenuation_db_per_km.is_finite())
            {
                return Err(invalid(format!("quantum link {}-{} has bad loss parameters", c.src, c.dst)));
            }
            if qlinks.insert(link_key(c.src, c.dst), c.delay_ps).is_some() {
                return Err(invalid(format!("duplicate quantum link {}-{}", c.src, c.dst)));
            }
        }
        let mut clinks = HashMap::new();
        for c in &self.cconnections {
            known(c.src)?;
            known(c.dst)?;
            if c.src == c.dst {
                return Err(invalid(format!("classical self-loop on router {}", c.src)));
            }
            if c.delay_ps == SimTime::ZERO || c.delay_ps.is_infinite() {
                return Err(invalid(format!("classical link {}-{} needs a finite positive delay", c.src, c.dst)));
            }
            let k = link_key(c.src, c.dst);
            if clinks.insert(k, c.delay_ps).is_some() {
                return Err(invalid(format!("duplicate classical link {}-{}", c.src, c.dst)));
            }
            if let Some(q) = qlinks.get(&k) {
                if c.delay_ps < *q {
                    return Err(invalid(format!(
                        "classical link {}-{} is faster than its quantum link",
                        c.src, c.dst
                    )));
                }
            }
        }

        // connectivity over quantum links
        let adj = self.adjacency();
        let start = *ids.iter().next().expect("non-empty");
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(r) = queue.pop_front() {
            for n in &adj[&r] {
                if seen.insert(*n) {
                    queue.push_back(*n);
                }
            }
        }
        if seen.len() != ids.len() {
            return Err(invalid("quantum links do not connect every router"));
        }

        let mut sessions = BTreeSet::new();
        for s in &self.sessions {
            if s.id > keys::MAX_SESSION {
                return Err(invalid(format!("session id {} exceeds {}", s.id, keys::MAX_SESSION)));
            }
            if !sessions.insert(s.id) {
                return Err(invalid(format!("duplicate session {}", s.id)));
            }
            if s.path.len() < 2 || s.path[0] != s.src || *s.path.last().unwrap() != s.dst {
                return Err(invalid(format!("session {} path must run from src to dst", s.id)));
            }
            if s.path.len() - 1 > usize::from(u16::MAX) {
                return Err(invalid(format!("session {} path is too long", s.id)));
            }
            if s.path.iter().collect::<BTreeSet<_>>().len() != s.path.len() {
                return Err(invalid(format!("session {} path revisits a router", s.id)));
            }
            for h in s.path.windows(2) {
                let k = link_key(h[0], h[1]);
                if !qlinks.contains_key(&k) || !clinks.contains_key(&k) {
                    return Err(invalid(format!(
                        "session {} hop {}-{} lacks a quantum or classical link",
                        s.id, h[0], h[1]
                    )));
                }
            }
            if s.period_ps == SimTime::ZERO || s.period_ps.is_infinite() {
                return Err(invalid(format!("session {} needs a positive emission period", s.id)));
            }
            if s.max_photons == 0 || s.max_photons > keys::MAX_PHOTONS {
                return Err(invalid(format!(
                    "session {} max_photons must be in 1..={}",
                    s.id,
                    keys::MAX_PHOTONS
                )));
            }
            if s.start_ps.is_infinite() {
                return Err(invalid(format!("session {} has an infinite start time", s.id)));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let topo: Topology =
            serde_json::from_str(text).map_err(|e| invalid(format!("malformed topology file: {e}")))?;
        topo.validate()?;
        Ok(topo)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Shortest path by hop count; ties go to the lower router id.
    pub fn route(&self, src: EntityId, dst: EntityId) -> Option<Vec<EntityId>> {
        let adj = self.adjacency();
        if !adj.contains_key(&src) || !adj.contains_key(&dst) {
            return None;
        }
        let mut parent = BTreeMap::from([(src, src)]);
        let mut queue = VecDeque::from([src]);
        while let Some(r) = queue.pop_front() {
            if r == dst {
                let mut path = vec![dst];
                let mut cur = dst;
                while cur != src {
                    cur = parent[&cur];
                    path.push(cur);
                }
                path.reverse();
                return Some(path);
            }
            for n in &adj[&r] {
                if !parent.contains_key(n) {
                    parent.insert(*n, r);
                    queue.push_back(*n);
                }
            }
        }
        None
    }

    /// Input for the partitioner.
    pub fn partition_graph(&self) -> Result<PartitionGraph> {
        PartitionGraph::new(
            self.routers.iter().map(|r| (r.id, u64::from(r.memories))).collect(),
            &self
                .qconnections
                .iter()
                .map(|c| (c.src, c.dst))
                .collect::<Vec<_>>(),
            &self.sessions.iter().map(|s| s.path.clone()).collect::<Vec<_>>(),
        )
    }
}
