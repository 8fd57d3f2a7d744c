use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::EntityId;
use crate::netmodel::topology::{link_key, CChannel, QChannel, RouterSpec, SessionSpec, Topology};
use crate::rng;
use crate::time::SimTime;

/// Physical parameters shared by every link a generator creates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    pub distance_m: f64,
    pub attenuation_db_per_km: f64,
    /// Signal speed in fiber as a fraction of c.
    pub light_fraction: f64,
    /// Overrides the delay derived from distance.
    pub delay: Option<SimTime>,
    /// Classical delay = quantum delay times this (at least 1).
    pub classical_factor: f64,
}

impl Default for LinkParams {
    fn default() -> Self {
        LinkParams {
            distance_m: 2_000.0,
            attenuation_db_per_km: 0.2,
            light_fraction: 2.0 / 3.0,
            delay: None,
            classical_factor: 1.0,
        }
    }
}

impl LinkParams {
    fn validate(&self) -> Result<()> {
        let ok = self.distance_m.is_finite()
            && self.distance_m >= 0.0
            && self.attenuation_db_per_km.is_finite()
            && self.attenuation_db_per_km >= 0.0
            && self.light_fraction > 0.0
            && self.light_fraction <= 1.0
            && self.classical_factor >= 1.0
            && self.classical_factor.is_finite();
        if !ok {
            return Err(Error::InvalidParameter(format!("bad link parameters {self:?}")));
        }
        if self.quantum_delay() == SimTime::ZERO {
            return Err(Error::InvalidParameter("link delay must be positive".into()));
        }
        Ok(())
    }

    pub fn quantum_delay(&self) -> SimTime {
        self.delay
            .unwrap_or_else(|| SimTime::propagation_delay(self.distance_m, self.light_fraction))
    }

    pub fn classical_delay(&self) -> SimTime {
        SimTime((self.quantum_delay().ps() as f64 * self.classical_factor).ceil() as u64)
    }

    fn connect(&self, topo: &mut Topology, a: EntityId, b: EntityId) {
        topo.qconnections.push(QChannel {
            src: a,
            dst: b,
            distance_m: self.distance_m,
            attenuation_db_per_km: self.attenuation_db_per_km,
            delay_ps: self.quantum_delay(),
        });
        topo.cconnections.push(CChannel {
            src: a,
            dst: b,
            delay_ps: self.classical_delay(),
        });
    }
}

/// Per-session and per-router defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadParams {
    pub period: SimTime,
    pub target_key_bits: u64,
    pub max_photons: u64,
    pub memories: u32,
}

impl Default for WorkloadParams {
    fn default() -> Self {
        WorkloadParams {
            period: SimTime::from_us(1),
            target_key_bits: 64,
            max_photons: 1_000,
            memories: 8,
        }
    }
}

impl WorkloadParams {
    fn session(&self, id: u32, path: Vec<EntityId>) -> SessionSpec {
        SessionSpec {
            id,
            src: path[0],
            dst: *path.last().expect("non-empty path"),
            path,
            period_ps: self.period,
            target_key_bits: self.target_key_bits,
            max_photons: self.max_photons,
            start_ps: SimTime::ZERO,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub n_routers: u32,
    pub link: LinkParams,
    pub workload: WorkloadParams,
    pub seed: u64,
}

impl Default for LinearParams {
    fn default() -> Self {
        LinearParams {
            n_routers: 16,
            link: LinkParams::default(),
            workload: WorkloadParams::default(),
            seed: 0,
        }
    }
}

/// Chain `0 - 1 - ... - n-1` with one session from end to end.
pub fn gen_linear(params: &LinearParams) -> Result<Topology> {
    if params.n_routers < 2 {
        return Err(Error::InvalidParameter("a linear topology needs at least 2 routers".into()));
    }
    params.link.validate()?;
    let n = params.n_routers;
    let mut topo = Topology {
        seed: params.seed,
        routers: (0..n)
            .map(|id| RouterSpec {
                id,
                memories: params.workload.memories,
            })
            .collect(),
        qconnections: Vec::new(),
        cconnections: Vec::new(),
        sessions: Vec::new(),
    };
    for i in 1..n {
        params.link.connect(&mut topo, i - 1, i);
    }
    topo.sessions
        .push(params.workload.session(0, (0..n).collect()));
    topo.validate()?;
    Ok(topo)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsParams {
    pub n_groups: u32,
    pub routers_per_group: u32,
    /// Hub-to-spoke links inside a group.
    pub access: LinkParams,
    /// Hub-to-hub links.
    pub backbone: LinkParams,
    /// Backbone links added on top of the random spanning tree.
    pub extra_backbone_edges: u32,
    /// Probability that a pair of groups gets a session.
    pub session_density: f64,
    /// Extra sessions between spokes of group 0, for skewed load.
    pub hot_group_sessions: u32,
    /// Also link every pair of group-0 spokes directly, so that no cut
    /// through group 0 is cheap.
    #[serde(default)]
    pub hot_group_mesh: bool,
    /// Memories per group-0 router; 0 means the workload default.
    #[serde(default)]
    pub hot_group_memories: u32,
    pub workload: WorkloadParams,
    pub seed: u64,
}

impl Default for AsParams {
    fn default() -> Self {
        AsParams {
            n_groups: 4,
            routers_per_group: 4,
            access: LinkParams {
                distance_m: 1_000.0,
                ..LinkParams::default()
            },
            backbone: LinkParams {
                distance_m: 5_000.0,
                ..LinkParams::default()
            },
            extra_backbone_edges: 1,
            session_density: 0.5,
            hot_group_sessions: 0,
            hot_group_mesh: false,
            hot_group_memories: 0,
            workload: WorkloadParams::default(),
            seed: 0,
        }
    }
}

/// Hub-and-spoke groups joined by a random backbone between hubs.
///
/// Router `g * routers_per_group` is the hub of group `g`; the rest of the
/// group are its spokes.
pub fn gen_as(params: &AsParams) -> Result<Topology> {
    if params.n_groups < 1 || params.routers_per_group < 1 {
        return Err(Error::InvalidParameter("need at least one group of one router".into()));
    }
    if !(0.0..=1.0).contains(&params.session_density) {
        return Err(Error::InvalidParameter("session density must be in [0, 1]".into()));
    }
    params.access.validate()?;
    params.backbone.validate()?;
    let (g_count, rpg) = (params.n_groups, params.routers_per_group);
    let total = u64::from(g_count) * u64::from(rpg);
    if total > u64::from(super::keys::MAX_ROUTER) + 1 {
        return Err(Error::InvalidParameter(format!("{total} routers is too many")));
    }
    if params.hot_group_sessions > 0 && rpg < 3 {
        return Err(Error::InvalidParameter("hot-group sessions need two spokes".into()));
    }
    let hub = |g: u32| g * rpg;
    let mut rng = rng::stream(&[params.seed, 0xa5]);

    let mut topo = Topology {
        seed: params.seed,
        routers: (0..g_count * rpg)
            .map(|id| RouterSpec {
                id,
                memories: if id < rpg && params.hot_group_memories > 0 {
                    params.hot_group_memories
                } else {
                    params.workload.memories
                },
            })
            .collect(),
        qconnections: Vec::new(),
        cconnections: Vec::new(),
        sessions: Vec::new(),
    };
    for g in 0..g_count {
        for i in 1..rpg {
            params.access.connect(&mut topo, hub(g), hub(g) + i);
        }
    }

    let mut backbone = BTreeSet::new();
    for g in 1..g_count {
        let parent = rng.gen_range(0..g);
        backbone.insert(link_key(hub(parent), hub(g)));
    }
    let max_edges = u64::from(g_count) * u64::from(g_count.saturating_sub(1)) / 2;
    let wanted = (backbone.len() as u64 + u64::from(params.extra_backbone_edges)).min(max_edges);
    let mut attempts = 0;
    while (backbone.len() as u64) < wanted && attempts < 64 * wanted {
        attempts += 1;
        let a = rng.gen_range(0..g_count);
        let b = rng.gen_range(0..g_count);
        if a != b {
            backbone.insert(link_key(hub(a), hub(b)));
        }
    }
    for (a, b) in &backbone {
        params.backbone.connect(&mut topo, *a, *b);
    }
    if params.hot_group_mesh {
        for a in 1..rpg {
            for b in a + 1..rpg {
                params.access.connect(&mut topo, a, b);
            }
        }
    }

    let mut pairs = Vec::new();
    for a in 0..g_count {
        for b in a + 1..g_count {
            if rng.gen_bool(params.session_density) {
                let src = hub(a) + rng.gen_range(0..rpg);
                let dst = hub(b) + rng.gen_range(0..rpg);
                pairs.push((src, dst));
            }
        }
    }
    for _ in 0..params.hot_group_sessions {
        let src = rng.gen_range(1..rpg);
        let mut dst = rng.gen_range(1..rpg - 1);
        if dst >= src {
            dst += 1;
        }
        pairs.push((src, dst));
    }
    for (id, (src, dst)) in pairs.into_iter().enumerate() {
        let path = topo
            .route(src, dst)
            .ok_or_else(|| Error::InvalidTopology(format!("no route {src}->{dst}")))?;
        let id = u32::try_from(id).map_err(|_| Error::InvalidParameter("too many sessions".into()))?;
        topo.sessions.push(params.workload.session(id, path));
    }
    topo.validate()?;
    Ok(topo)
}
