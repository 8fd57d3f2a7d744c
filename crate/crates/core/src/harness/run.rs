use std::fmt;
use std::fs;
use std::net::TcpListener;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernel::{EntityId, Timeline};
use crate::netmodel::{keys, Census, HopKey, ModelOptions, NetModel, NetServices, Router, SessionSummary, Topology};
use crate::partition::{anneal, AnnealSchedule, EnergyKind, EnergySpec, Partition, WorkerId};
use crate::qsm::{serve_tcp, GlobalQsm, GlobalQsmLink, InprocQsmService, KeyOwner, QsmClient, SocketLink};
use crate::sync::{
    compute_lookahead, run_hub, ComputeSlots, EpochTiming, Exchange, InprocHub, SocketExchange,
    SoloExchange, Worker,
};
use crate::time::SimTime;

/// How workers talk to each other or to the global QSM.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    #[default]
    Inproc,
    Socket,
}

impl fmt::Display for Transport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Transport::Inproc => "inproc",
            Transport::Socket => "socket",
        })
    }
}

impl FromStr for Transport {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inproc" => Ok(Transport::Inproc),
            "socket" => Ok(Transport::Socket),
            other => Err(Error::InvalidParameter(format!("unknown transport {other:?}"))),
        }
    }
}

/// Everything that determines a run's results. Echoed verbatim into reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    /// Its `seed` is the run seed.
    pub topology: Topology,
    pub partition: Partition,
    pub stop_time: SimTime,
    #[serde(default)]
    pub exchange: Transport,
    #[serde(default)]
    pub qsm: Transport,
    #[serde(default)]
    pub options: ModelOptions,
    /// Replaces the computed lookahead. Anything above the true minimum
    /// cross-worker delay is unsafe; used to exercise causality checks.
    #[serde(default)]
    pub lookahead_override: Option<SimTime>,
}

impl RunSpec {
    pub fn new(topology: Topology, partition: Partition) -> Self {
        RunSpec {
            topology,
            partition,
            stop_time: SimTime::INFINITY,
            exchange: Transport::Inproc,
            qsm: Transport::Inproc,
            options: ModelOptions::default(),
            lookahead_override: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.topology.seed = seed;
        self
    }

    pub fn seed(&self) -> u64 {
        self.topology.seed
    }

    pub fn num_workers(&self) -> u32 {
        self.partition.num_workers()
    }

    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        self.partition.validate_for(&self.topology.router_ids())
    }

    pub fn lookahead(&self) -> Result<SimTime> {
        match self.lookahead_override {
            Some(l) => Ok(l),
            None => compute_lookahead(&self.topology, &self.partition),
        }
    }

    pub fn topology_digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(&self.topology)?)))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Process-local knobs that do not affect results.
#[derive(Clone, Debug, Default)]
pub struct Launch {
    /// Use an already running global QSM server instead of starting one.
    pub qsm_addr: Option<String>,
    /// Concurrent compute phases allowed; defaults to one per core.
    pub compute_slots: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QsmSummary {
    pub local_requests: u64,
    pub global_requests: u64,
    pub flushes: u64,
}

/// One worker's results; serializable so separate processes can hand them
/// back to the driver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkerOutcome {
    pub worker: WorkerId,
    pub routers: Vec<EntityId>,
    pub timings: Vec<EpochTiming>,
    pub wall_ns: u64,
    pub events_executed: u64,
    pub census: Census,
    pub qsm: QsmSummary,
    /// `(entity, executed, rolling hash)`.
    pub logs: Vec<(EntityId, u64, u64)>,
    pub hop_keys: Vec<HopKey>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerTotals {
    pub worker: WorkerId,
    pub routers: usize,
    pub events_executed: u64,
    pub compute_ns: u64,
    pub barrier_wait_ns: u64,
    pub exchange_ns: u64,
    pub qsm_socket_ns: u64,
    pub wall_ns: u64,
    pub qsm: QsmSummary,
}

impl WorkerTotals {
    pub fn accounted_ns(&self) -> u64 {
        self.compute_ns + self.barrier_wait_ns + self.exchange_ns + self.qsm_socket_ns
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunSpec,
    pub seed: u64,
    pub num_workers: u32,
    pub topology_digest: String,
    pub lookahead: SimTime,
    pub workers: Vec<WorkerTotals>,
    pub epochs: Vec<EpochTiming>,
    pub epoch_count: u64,
    pub sessions: Vec<SessionSummary>,
    pub census: Census,
    pub events_executed: u64,
    /// Batches and requests served by the global QSM, when it ran in this
    /// process.
    pub global_qsm: Option<(u64, u64)>,
    pub wall_ns: u64,
    pub digest: String,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// Per-epoch records as CSV.
    pub fn epoch_csv(&self) -> String {
        let mut out = String::from(super::EPOCH_CSV_HEADER);
        out.push('\n');
        for t in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                t.worker,
                t.epoch_index,
                t.compute_ns,
                t.barrier_wait_ns,
                t.exchange_ns,
                t.qsm_socket_ns,
                t.events_executed
            ));
        }
        out
    }
}

/// Annealed minimum-cut partition (round-robin is never worse).
pub fn default_partition(topology: &Topology, num_workers: u32, seed: u64) -> Result<Partition> {
    anneal_partition(topology, num_workers, &EnergySpec::single(EnergyKind::CrossQchannels), seed)
}

/// Anneal with the default schedule; one worker gets everything.
pub fn anneal_partition(topology: &Topology, num_workers: u32, energy: &EnergySpec, seed: u64) -> Result<Partition> {
    if num_workers == 1 {
        return Ok(Partition::single(&topology.router_ids()));
    }
    let graph = topology.partition_graph()?;
    anneal(&graph, energy, num_workers, &AnnealSchedule::default(), seed)
}

/// Global-QSM key ownership implied by a partition.
pub fn key_owner(partition: &Partition) -> KeyOwner {
    let p = partition.clone();
    Arc::new(move |k| p.worker_of(keys::router(k)).unwrap_or(0))
}

fn timeline_for(spec: &RunSpec, model: &Arc<NetModel>, worker: WorkerId, qsm: QsmClient) -> Timeline<Router> {
    let mut tl = Timeline::new(NetServices::new(qsm, Arc::clone(model))).with_stop_time(spec.stop_time);
    for id in spec.partition.routers_of(worker) {
        tl.add_entity(id, model.router(id));
    }
    tl
}

fn drive<X: Exchange>(
    spec: &RunSpec,
    model: &Arc<NetModel>,
    lookahead: SimTime,
    exchange: X,
    qsm: QsmClient,
    slots: Option<Arc<ComputeSlots>>,
) -> Result<WorkerOutcome> {
    let worker = exchange.worker();
    let tl = timeline_for(spec, model, worker, qsm);
    let mut w = Worker::new(tl, exchange, Arc::new(spec.partition.clone()), lookahead);
    if let Some(s) = slots {
        w = w.with_slots(s);
    }
    let (tl, result) = w.run();
    let run = result?;
    let stats = tl.services().qsm.stats();
    Ok(WorkerOutcome {
        worker,
        routers: tl.entities().map(|(id, _)| id).collect(),
        timings: run.timings,
        wall_ns: run.wall_ns,
        events_executed: tl.counters().executed,
        census: tl.services().census,
        qsm: QsmSummary {
            local_requests: stats.local_requests,
            global_requests: stats.global_requests,
            flushes: stats.flushes,
        },
        logs: tl.entity_logs().map(|(id, l)| (id, l.executed, l.hash)).collect(),
        hop_keys: tl.entities().flat_map(|(_, r)| r.hop_keys()).collect(),
    })
}

/// Run one worker of a multi-process simulation over sockets.
pub fn run_worker(spec: &RunSpec, worker: WorkerId, hub_addr: &str, qsm_addr: &str) -> Result<WorkerOutcome> {
    spec.validate()?;
    let n = spec.num_workers();
    if worker >= n {
        return Err(Error::InvalidParameter(format!("worker {worker} of {n}")));
    }
    let model = NetModel::new(&spec.topology, spec.options.clone())?;
    let lookahead = spec.lookahead()?;
    let link = SocketLink::connect(qsm_addr)?;
    let qsm = QsmClient::new(worker, key_owner(&spec.partition), Box::new(link));
    let exchange = SocketExchange::connect(hub_addr, worker, n)?;
    drive(spec, &model, lookahead, exchange, qsm, None)
}

/// The root cause among several worker failures: a peer's abort shows up as
/// a transport error everywhere else.
fn root_cause(mut errors: Vec<Error>) -> Error {
    let idx = errors
        .iter()
        .position(|e| !matches!(e, Error::Transport(_)))
        .unwrap_or(0);
    errors.swap_remove(idx)
}

pub fn run_simulation(spec: &RunSpec) -> Result<RunReport> {
    run_simulation_with(spec, &Launch::default())
}

/// Run every worker as a thread of this process.
pub fn run_simulation_with(spec: &RunSpec, launch: &Launch) -> Result<RunReport> {
    spec.validate()?;
    let n = spec.num_workers();
    let model = NetModel::new(&spec.topology, spec.options.clone())?;
    let lookahead = spec.lookahead()?;
    let start = Instant::now();

    if n == 1 {
        let outcome = drive(spec, &model, lookahead, SoloExchange, QsmClient::solo(), None)?;
        let wall = start.elapsed().as_nanos() as u64;
        return assemble_report(spec, vec![outcome], None, wall);
    }

    let slots = Arc::new(match launch.compute_slots {
        Some(k) => ComputeSlots::new(k),
        None => ComputeSlots::per_core(),
    });
    let owner = key_owner(&spec.partition);

    thread::scope(|scope| {
        // global QSM
        let mut qsm_server = None;
        let mut inproc_qsm = None;
        let qsm_addr = match (spec.qsm, &launch.qsm_addr) {
            (Transport::Socket, Some(addr)) => Some(addr.clone()),
            (Transport::Socket, None) => {
                let listener = TcpListener::bind("127.0.0.1:0")?;
                let addr = listener.local_addr()?.to_string();
                let qsm = GlobalQsm::new(Some(Arc::clone(&owner)));
                qsm_server = Some(scope.spawn(move || serve_tcp(listener, qsm, n as usize)));
                Some(addr)
            }
            (Transport::Inproc, _) => {
                inproc_qsm = Some(InprocQsmService::new(GlobalQsm::new(Some(Arc::clone(&owner))), n as usize));
                None
            }
        };

        // worker exchange
        let mut hub_thread = None;
        let mut inproc_hub = None;
        let hub_addr = match spec.exchange {
            Transport::Socket => {
                let listener = TcpListener::bind("127.0.0.1:0")?;
                let addr = listener.local_addr()?.to_string();
                hub_thread = Some(scope.spawn(move || run_hub(listener, n)));
                Some(addr)
            }
            Transport::Inproc => {
                inproc_hub = Some(InprocHub::new(n));
                None
            }
        };

        let mut handles = Vec::with_capacity(n as usize);
        for w in 0..n {
            let model = &model;
            let owner = Arc::clone(&owner);
            let slots = Some(Arc::clone(&slots));
            let qsm_addr = qsm_addr.clone();
            let hub_addr = hub_addr.clone();
            let inproc_qsm = inproc_qsm.clone();
            let inproc_hub = inproc_hub.clone();
            handles.push(scope.spawn(move || -> Result<WorkerOutcome> {
                let link: Box<dyn GlobalQsmLink> = match (&inproc_qsm, &qsm_addr) {
                    (Some(service), _) => Box::new(service.link()),
                    (None, Some(addr)) => Box::new(SocketLink::connect(addr.as_str())?),
                    (None, None) => unreachable!("a QSM transport is always chosen"),
                };
                let qsm = QsmClient::new(w, owner, link);
                match (&inproc_hub, &hub_addr) {
                    (Some(hub), _) => drive(spec, model, lookahead, hub.endpoint(w), qsm, slots),
                    (None, Some(addr)) => {
                        let x = SocketExchange::connect(addr.as_str(), w, n)?;
                        drive(spec, model, lookahead, x, qsm, slots)
                    }
                    (None, None) => unreachable!("an exchange transport is always chosen"),
                }
            }));
        }

        let mut outcomes = Vec::with_capacity(n as usize);
        let mut errors = Vec::new();
        for h in handles {
            match h.join() {
                Ok(Ok(o)) => outcomes.push(o),
                Ok(Err(e)) => errors.push(e),
                Err(_) => errors.push(Error::Transport("worker thread panicked".into())),
            }
        }
        let wall = start.elapsed().as_nanos() as u64;

        let hub_result = hub_thread.map(|h| h.join().unwrap_or_else(|_| Err(Error::Transport("hub panicked".into()))));
        let server_result = qsm_server.map(|h| {
            h.join()
                .unwrap_or_else(|_| Err(Error::Transport("QSM server panicked".into())))
        });
        if !errors.is_empty() {
            return Err(root_cause(errors));
        }
        if let Some(r) = hub_result {
            r?;
        }
        let global = match (server_result, inproc_qsm) {
            (Some(r), _) => {
                let q = r?;
                Some((q.batches_served(), q.requests_served()))
            }
            (None, Some(service)) => Some(service.inspect(|q| (q.batches_served(), q.requests_served()))),
            (None, None) => None,
        };
        assemble_report(spec, outcomes, global, wall)
    })
}

fn digest(outcomes: &[WorkerOutcome]) -> String {
    let mut logs: Vec<_> = outcomes.iter().flat_map(|o| o.logs.iter().copied()).collect();
    logs.sort_unstable();
    let mut keys: Vec<&HopKey> = outcomes.iter().flat_map(|o| &o.hop_keys).collect();
    keys.sort_by_key(|k| (k.session, k.hop, k.side));

    let mut h = Sha256::new();
    for (id, executed, hash) in logs {
        h.update(id.to_le_bytes());
        h.update(executed.to_le_bytes());
        h.update(hash.to_le_bytes());
    }
    for k in keys {
        h.update(k.session.to_le_bytes());
        h.update(k.hop.to_le_bytes());
        h.update([k.side]);
        h.update(k.router.to_le_bytes());
        h.update(k.photons.to_le_bytes());
        h.update(k.sifted.to_le_bytes());
        h.update((k.bits.len() as u64).to_le_bytes());
        for (photon, bit) in &k.bits {
            h.update(photon.to_le_bytes());
            h.update([*bit]);
        }
    }
    hex::encode(h.finalize())
}

/// Combine per-worker outcomes into a report.
pub fn assemble_report(
    spec: &RunSpec,
    mut outcomes: Vec<WorkerOutcome>,
    global_qsm: Option<(u64, u64)>,
    wall_ns: u64,
) -> Result<RunReport> {
    outcomes.sort_by_key(|o| o.worker);
    let n = spec.num_workers();
    if outcomes.len() != n as usize || outcomes.iter().enumerate().any(|(i, o)| o.worker != i as u32) {
        return Err(Error::InvalidParameter(format!(
            "expected one outcome per worker 0..{n}, got {}",
            outcomes.len()
        )));
    }

    let mut census = Census::default();
    let mut workers = Vec::with_capacity(outcomes.len());
    let mut epochs = Vec::new();
    for o in &outcomes {
        census.merge(&o.census);
        let mut t = WorkerTotals {
            worker: o.worker,
            routers: o.routers.len(),
            events_executed: o.events_executed,
            wall_ns: o.wall_ns,
            qsm: o.qsm,
            ..Default::default()
        };
        for e in &o.timings {
            t.compute_ns += e.compute_ns;
            t.barrier_wait_ns += e.barrier_wait_ns;
            t.exchange_ns += e.exchange_ns;
            t.qsm_socket_ns += e.qsm_socket_ns;
        }
        workers.push(t);
        epochs.extend_from_slice(&o.timings);
    }
    let epoch_count = outcomes.iter().map(|o| o.timings.len()).max().unwrap_or(0) as u64;
    let keys: Vec<HopKey> = outcomes.iter().flat_map(|o| o.hop_keys.iter().cloned()).collect();

    Ok(RunReport {
        config: spec.clone(),
        seed: spec.seed(),
        num_workers: n,
        topology_digest: spec.topology_digest()?,
        lookahead: spec.lookahead()?,
        events_executed: workers.iter().map(|w| w.events_executed).sum(),
        workers,
        epochs,
        epoch_count,
        sessions: SessionSummary::collect(&keys),
        census,
        global_qsm,
        wall_ns,
        digest: digest(&outcomes),
    })
}
