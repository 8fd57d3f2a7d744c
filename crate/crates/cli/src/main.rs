use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::Command as Process;
use std::thread;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use qnetsim::harness::{
    aggregate_trace, anneal_partition, assemble_report, key_owner, per_event_cost_spread,
    report_breakdown, run_simulation_with, run_sweep, run_worker, trace_csv, BreakdownMode,
    Launch, RunReport, RunSpec, ScalingSweep, Transport, WorkerOutcome,
};
use qnetsim::netmodel::{gen_as, gen_linear, AsParams, LinearParams, LinkParams, WorkloadParams};
use qnetsim::partition::{anneal, energy, AnnealSchedule, EnergySpec};
use qnetsim::qsm::{serve_tcp, GlobalQsm};
use qnetsim::sync::run_hub;
use qnetsim::{Partition, SimTime, Topology};

// stdout may be a closed pipe (e.g. `| head`); that is not an error here
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

macro_rules! say_raw {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = write!(std::io::stdout(), $($t)*);
    }};
}

#[derive(Parser)]
#[command(name = "qnetsim", version, about = "Parallel discrete-event QKD network simulator")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a topology file.
    GenTopology(GenArgs),
    /// Partition a topology across workers.
    Partition(PartitionArgs),
    /// Run one simulation.
    Run(RunArgs),
    /// Run a strong-scaling sweep over worker counts.
    Sweep(SweepArgs),
    /// Summarize a run or sweep report.
    Report(ReportArgs),
    /// Relay hub for socket-based worker exchange.
    Hub(HubArgs),
    /// Standalone global QSM server.
    QsmServer(QsmServerArgs),
    /// One worker of a multi-process run.
    Worker(WorkerArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Linear,
    As,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "linear")]
    kind: Kind,
    /// Routers on the line.
    #[arg(long, default_value_t = 16)]
    routers: u32,
    #[arg(long, default_value_t = 4)]
    groups: u32,
    #[arg(long, default_value_t = 4)]
    per_group: u32,
    /// Extra spoke-to-spoke sessions inside group 0.
    #[arg(long, default_value_t = 0)]
    hot_sessions: u32,
    /// Fully connect the spokes of group 0.
    #[arg(long)]
    hot_mesh: bool,
    /// Memories per group-0 router.
    #[arg(long, default_value_t = 0)]
    hot_memories: u32,
    #[arg(long, default_value_t = 0.5)]
    session_density: f64,
    #[arg(long, default_value_t = 1)]
    extra_edges: u32,
    /// Link length for linear topologies.
    #[arg(long)]
    distance_m: Option<f64>,
    #[arg(long)]
    access_m: Option<f64>,
    #[arg(long)]
    backbone_m: Option<f64>,
    #[arg(long)]
    attenuation: Option<f64>,
    #[arg(long)]
    period_ps: Option<u64>,
    #[arg(long)]
    target_bits: Option<u64>,
    #[arg(long)]
    max_photons: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PartitionArgs {
    #[arg(long)]
    topology: PathBuf,
    #[arg(long)]
    workers: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Weighted energy terms, e.g. `cross_qchannels=1,memory_balance=0.25`.
    #[arg(long, default_value = "cross_qchannels=1")]
    energy: String,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    t0: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum LaunchKind {
    Threads,
    Processes,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long)]
    topology: Option<PathBuf>,
    /// Overrides the topology's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated time limit in picoseconds.
    #[arg(long)]
    stop_time: Option<u64>,
    #[arg(long, default_value = "inproc")]
    qsm_transport: Transport,
    /// Connect to a running `qsm-server` instead of starting one.
    #[arg(long)]
    qsm_addr: Option<String>,
    #[arg(long, default_value = "inproc")]
    exchange: Transport,
    #[arg(long, value_enum, default_value = "threads")]
    launch: LaunchKind,
    /// Synthetic work per event, in spin iterations.
    #[arg(long)]
    busy_work: Option<u32>,
    #[arg(long)]
    sift_batch: Option<usize>,
    /// Force a lookahead (ps). Values above the true minimum are unsafe.
    #[arg(long)]
    lookahead_ps: Option<u64>,
    /// Energy for partitions annealed by this command.
    #[arg(long, default_value = "cross_qchannels=1")]
    energy: EnergySpec,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Also write the collapsed compute trace.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    collapse: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long)]
    partition: Option<PathBuf>,
    #[arg(long)]
    workers: Option<u32>,
    /// Rerun the configuration echoed in a report (or a saved run spec).
    #[arg(long, conflicts_with_all = ["topology", "partition"])]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
    workers: Vec<u32>,
}

#[derive(Args)]
struct ReportArgs {
    /// A run report or sweep file.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "split")]
    mode: BreakdownMode,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    collapse: Option<u64>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct HubArgs {
    #[arg(long)]
    listen: String,
    #[arg(long)]
    workers: u32,
}

#[derive(Args)]
struct QsmServerArgs {
    #[arg(long)]
    listen: String,
    #[arg(long)]
    partition: PathBuf,
}

#[derive(Args)]
struct WorkerArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    worker: u32,
    #[arg(long)]
    hub: String,
    #[arg(long)]
    qsm_addr: String,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match cli.command {
        Command::GenTopology(a) => gen_topology(a),
        Command::Partition(a) => partition(a),
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Report(a) => report(a),
        Command::Hub(a) => {
            let listener = TcpListener::bind(&a.listen)?;
            say!("{}", listener.local_addr()?);
            run_hub(listener, a.workers)?;
            Ok(())
        }
        Command::QsmServer(a) => {
            let partition = Partition::load(&a.partition)?;
            let listener = TcpListener::bind(&a.listen)?;
            say!("{}", listener.local_addr()?);
            let n = partition.num_workers() as usize;
            let qsm = serve_tcp(listener, GlobalQsm::new(Some(key_owner(&partition))), n)?;
            info!("served {} batches, {} requests", qsm.batches_served(), qsm.requests_served());
            Ok(())
        }
        Command::Worker(a) => {
            let spec = RunSpec::load(&a.config)?;
            let outcome = run_worker(&spec, a.worker, &a.hub, &a.qsm_addr)?;
            fs::write(&a.out, serde_json::to_string(&outcome)?)?;
            Ok(())
        }
    }
}

fn gen_topology(a: GenArgs) -> Result<()> {
    let mut workload = WorkloadParams::default();
    if let Some(p) = a.period_ps {
        workload.period = SimTime::from_ps(p);
    }
    if let Some(t) = a.target_bits {
        workload.target_key_bits = t;
    }
    if let Some(m) = a.max_photons {
        workload.max_photons = m;
    }
    let link = |distance: Option<f64>, base: LinkParams| LinkParams {
        distance_m: distance.unwrap_or(base.distance_m),
        attenuation_db_per_km: a.attenuation.unwrap_or(base.attenuation_db_per_km),
        ..base
    };
    let topo = match a.kind {
        Kind::Linear => gen_linear(&LinearParams {
            n_routers: a.routers,
            link: link(a.distance_m, LinkParams::default()),
            workload,
            seed: a.seed,
        })?,
        Kind::As => {
            let d = AsParams::default();
            gen_as(&AsParams {
                n_groups: a.groups,
                routers_per_group: a.per_group,
                access: link(a.access_m, d.access),
                backbone: link(a.backbone_m, d.backbone),
                extra_backbone_edges: a.extra_edges,
                session_density: a.session_density,
                hot_group_sessions: a.hot_sessions,
                hot_group_mesh: a.hot_mesh,
                hot_group_memories: a.hot_memories,
                workload,
                seed: a.seed,
            })?
        }
    };
    topo.save(&a.out)?;
    say!(
        "{} routers, {} links, {} sessions -> {}",
        topo.routers.len(),
        topo.qconnections.len(),
        topo.sessions.len(),
        a.out.display()
    );
    Ok(())
}

fn partition(a: PartitionArgs) -> Result<()> {
    let topo = Topology::load(&a.topology)?;
    let spec: EnergySpec = a.energy.parse()?;
    let d = AnnealSchedule::default();
    let schedule = AnnealSchedule {
        t0: a.t0.unwrap_or(d.t0),
        alpha: a.alpha.unwrap_or(d.alpha),
        iterations: a.iterations.unwrap_or(d.iterations),
    };
    let graph = topo.partition_graph()?;
    let p = anneal(&graph, &spec, a.workers, &schedule, a.seed)?;
    p.save(&a.out)?;
    say!(
        "energy {} ({spec}), loads {:?} -> {}",
        energy(&graph, &p, &spec)?,
        p.loads(),
        a.out.display()
    );
    Ok(())
}

/// Topology from `--topology` with `--seed` applied.
fn load_topology(sim: &SimArgs) -> Result<Topology> {
    let path = sim.topology.as_ref().context("--topology is required")?;
    let mut topo = Topology::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = sim.seed {
        topo.seed = seed;
    }
    Ok(topo)
}

/// Apply the simulation flags to a spec.
fn configure(spec: &mut RunSpec, sim: &SimArgs) {
    if let Some(s) = sim.stop_time {
        spec.stop_time = SimTime::from_ps(s);
    }
    spec.qsm = sim.qsm_transport;
    spec.exchange = sim.exchange;
    if let LaunchKind::Processes = sim.launch {
        spec.qsm = Transport::Socket;
        spec.exchange = Transport::Socket;
    }
    if let Some(b) = sim.busy_work {
        spec.options.busy_work = b;
    }
    if let Some(k) = sim.sift_batch {
        spec.options.sift_batch = k;
    }
    if let Some(l) = sim.lookahead_ps {
        spec.lookahead_override = Some(SimTime::from_ps(l));
    }
}

fn launch(sim: &SimArgs) -> Launch {
    Launch {
        qsm_addr: sim.qsm_addr.clone(),
        compute_slots: None,
    }
}

fn simulate(spec: &RunSpec, sim: &SimArgs, out: &Path) -> Result<RunReport> {
    match sim.launch {
        LaunchKind::Threads => Ok(run_simulation_with(spec, &launch(sim))?),
        LaunchKind::Processes => run_processes(spec, sim.qsm_addr.as_deref(), out),
    }
}

/// One OS process per worker, talking through a hub and a QSM server that
/// run as threads of this process.
fn run_processes(spec: &RunSpec, qsm_addr: Option<&str>, out: &Path) -> Result<RunReport> {
    let n = spec.num_workers();
    if n == 1 {
        return Ok(run_simulation_with(spec, &Launch::default())?);
    }
    spec.validate()?;
    let scratch = out.join("workers");
    fs::create_dir_all(&scratch)?;
    let spec_path = scratch.join("spec.json");
    spec.save(&spec_path)?;

    let start = Instant::now();
    let hub_listener = TcpListener::bind("127.0.0.1:0")?;
    let hub_addr = hub_listener.local_addr()?.to_string();
    let hub = thread::spawn(move || run_hub(hub_listener, n));
    let (qsm_addr, server) = match qsm_addr {
        Some(addr) => (addr.to_string(), None),
        None => {
            let listener = TcpListener::bind("127.0.0.1:0")?;
            let addr = listener.local_addr()?.to_string();
            let qsm = GlobalQsm::new(Some(key_owner(&spec.partition)));
            (addr, Some(thread::spawn(move || serve_tcp(listener, qsm, n as usize))))
        }
    };

    let exe = std::env::current_exe()?;
    let mut children = Vec::new();
    for w in 0..n {
        let child = Process::new(&exe)
            .arg("worker")
            .arg("--config")
            .arg(&spec_path)
            .args(["--worker", &w.to_string(), "--hub", &hub_addr, "--qsm-addr", &qsm_addr])
            .arg("--out")
            .arg(scratch.join(format!("worker-{w}.json")))
            .spawn()
            .with_context(|| format!("spawning worker {w}"))?;
        children.push(child);
    }
    let mut failed = Vec::new();
    for (w, mut child) in children.into_iter().enumerate() {
        if !child.wait()?.success() {
            failed.push(w);
        }
    }
    let wall = start.elapsed().as_nanos() as u64;
    let hub_result = hub.join();
    let global = match server.map(|s| s.join()) {
        Some(Ok(Ok(q))) => Some((q.batches_served(), q.requests_served())),
        _ => None,
    };
    if !failed.is_empty() {
        bail!("workers {failed:?} failed");
    }
    match hub_result {
        Ok(r) => r?,
        Err(_) => bail!("hub thread panicked"),
    }

    let mut outcomes = Vec::with_capacity(n as usize);
    for w in 0..n {
        let path = scratch.join(format!("worker-{w}.json"));
        let o: WorkerOutcome = serde_json::from_str(&fs::read_to_string(&path)?)?;
        outcomes.push(o);
    }
    fs::remove_dir_all(&scratch)?;
    Ok(assemble_report(spec, outcomes, global, wall)?)
}

fn write_run_outputs(report: &RunReport, out: &Path, collapse: Option<u64>, suffix: &str) -> Result<()> {
    fs::write(out.join(format!("epochs{suffix}.csv")), report.epoch_csv())?;
    if let Some(k) = collapse {
        fs::write(out.join(format!("trace{suffix}.csv")), trace_csv(&aggregate_trace(&report.epochs, k)))?;
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let sim = &a.sim;
    let mut spec = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            match serde_json::from_str::<RunReport>(&text) {
                Ok(r) => r.config,
                Err(_) => serde_json::from_str::<RunSpec>(&text)
                    .with_context(|| format!("{} is neither a report nor a run spec", path.display()))?,
            }
        }
        None => {
            let topo = load_topology(sim)?;
            let partition = match &a.partition {
                Some(path) => {
                    let p = Partition::load_for(path, &topo.router_ids())?;
                    if let Some(n) = a.workers {
                        if n != p.num_workers() {
                            bail!("--workers {n} but the partition has {} workers", p.num_workers());
                        }
                    }
                    p
                }
                None => anneal_partition(&topo, a.workers.unwrap_or(1), &sim.energy, topo.seed)?,
            };
            RunSpec::new(topo, partition)
        }
    };
    if let (Some(seed), Some(_)) = (sim.seed, &a.config) {
        spec.topology.seed = seed;
    }
    configure(&mut spec, sim);

    fs::create_dir_all(&sim.out)?;
    let report = simulate(&spec, sim, &sim.out)?;
    report.save(sim.out.join("report.json"))?;
    write_run_outputs(&report, &sim.out, sim.collapse, "")?;
    say!(
        "{} workers, {} events in {} epochs, {:.3} ms wall, digest {}",
        report.num_workers,
        report.events_executed,
        report.epoch_count,
        report.wall_ns as f64 / 1e6,
        report.digest
    );
    for s in &report.sessions {
        say!("session {}: {} bits over {} hops", s.session, s.delivered_bits, s.hops);
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let sim = &a.sim;
    if a.workers.is_empty() || a.workers.contains(&0) {
        bail!("worker counts must be positive");
    }
    let topo = load_topology(sim)?;
    let mut template = RunSpec::new(topo.clone(), Partition::single(&topo.router_ids()));
    configure(&mut template, sim);
    fs::create_dir_all(&sim.out)?;

    let seed = topo.seed;
    let sweep = match sim.launch {
        LaunchKind::Threads => run_sweep(&topo, &a.workers, &template, &launch(sim), |t, n| {
            anneal_partition(t, n, &sim.energy, seed)
        })?,
        LaunchKind::Processes => {
            let mut runs = Vec::new();
            for &n in &a.workers {
                let spec = RunSpec {
                    partition: anneal_partition(&topo, n, &sim.energy, seed)?,
                    ..template.clone()
                };
                runs.push(run_processes(&spec, sim.qsm_addr.as_deref(), &sim.out)?);
            }
            ScalingSweep {
                seed,
                topology_digest: template.topology_digest()?,
                worker_counts: a.workers.clone(),
                runs,
            }
        }
    };
    fs::write(sim.out.join("sweep.json"), serde_json::to_string_pretty(&sweep)?)?;
    for r in &sweep.runs {
        write_run_outputs(r, &sim.out, sim.collapse, &format!("-{}", r.num_workers))?;
    }
    for mode in [BreakdownMode::Legacy, BreakdownMode::Split, BreakdownMode::Redefined] {
        fs::write(sim.out.join(format!("breakdown-{mode}.csv")), report_breakdown(&sweep.runs, mode).to_csv())?;
    }
    say_raw!("{}", report_breakdown(&sweep.runs, BreakdownMode::Split).to_table());
    for r in &sweep.runs {
        say!("{:>3} workers: {:.3} ms wall, digest {}", r.num_workers, r.wall_ns as f64 / 1e6, r.digest);
    }
    say!("per-event compute cost spread {:.1}%", 100.0 * per_event_cost_spread(&sweep.runs));
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let text = fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let runs = match serde_json::from_str::<ScalingSweep>(&text) {
        Ok(s) => s.runs,
        Err(_) => vec![serde_json::from_str::<RunReport>(&text)
            .with_context(|| format!("{} is neither a sweep nor a run report", a.input.display()))?],
    };
    fs::create_dir_all(&a.out)?;
    let b = report_breakdown(&runs, a.mode);
    fs::write(a.out.join(format!("breakdown-{}.csv", a.mode)), b.to_csv())?;
    if let Some(k) = a.collapse {
        for r in &runs {
            let path = a.out.join(format!("trace-{}.csv", r.num_workers));
            fs::write(path, trace_csv(&aggregate_trace(&r.epochs, k)))?;
        }
    }
    say_raw!("{}", b.to_table());
    Ok(())
}
