use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::run::{run_simulation_with, Launch, RunReport, RunSpec};
use crate::netmodel::Topology;
use crate::partition::{Partition, WorkerId};
use crate::sync::EpochTiming;

pub const EPOCH_CSV_HEADER: &str =
    "worker,epoch,compute_ns,barrier_wait_ns,exchange_ns,qsm_socket_ns,events_executed";

/// Compute time of `epochs` consecutive epochs of one worker.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TracePoint {
    pub worker: WorkerId,
    pub group: u64,
    pub first_epoch: u64,
    pub epochs: u64,
    pub compute_ns: u64,
}

/// Sum compute time over consecutive groups of `collapse` epochs per worker.
/// A trailing partial group is kept. `collapse = 0` behaves like 1.
pub fn aggregate_trace(records: &[EpochTiming], collapse: u64) -> Vec<TracePoint> {
    let k = collapse.max(1);
    let mut sorted: Vec<&EpochTiming> = records.iter().collect();
    sorted.sort_by_key(|t| (t.worker, t.epoch_index));
    let mut out: Vec<TracePoint> = Vec::new();
    for t in sorted {
        let group = t.epoch_index / k;
        match out.last_mut() {
            Some(p) if p.worker == t.worker && p.group == group => {
                p.epochs += 1;
                p.compute_ns += t.compute_ns;
            }
            _ => out.push(TracePoint {
                worker: t.worker,
                group,
                first_epoch: group * k,
                epochs: 1,
                compute_ns: t.compute_ns,
            }),
        }
    }
    out
}

pub fn trace_csv(points: &[TracePoint]) -> String {
    let mut out = String::from("worker,group,first_epoch,epochs,compute_ns\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.worker, p.group, p.first_epoch, p.epochs, p.compute_ns
        ));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BreakdownMode {
    /// compute, sync (= wait + exchange), socket
    Legacy,
    /// compute, wait, exchange, socket
    Split,
    /// compute (+ wait), exchange, socket
    Redefined,
}

impl BreakdownMode {
    pub fn columns(self) -> &'static [&'static str] {
        match self {
            BreakdownMode::Legacy => &["compute_ns", "sync_ns", "qsm_socket_ns"],
            BreakdownMode::Split => &["compute_ns", "barrier_wait_ns", "exchange_ns", "qsm_socket_ns"],
            BreakdownMode::Redefined => &["compute_ns", "exchange_ns", "qsm_socket_ns"],
        }
    }
}

impl fmt::Display for BreakdownMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BreakdownMode::Legacy => "legacy",
            BreakdownMode::Split => "split",
            BreakdownMode::Redefined => "redefined",
        })
    }
}

impl FromStr for BreakdownMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "legacy" => Ok(BreakdownMode::Legacy),
            "split" => Ok(BreakdownMode::Split),
            "redefined" => Ok(BreakdownMode::Redefined),
            other => Err(Error::InvalidParameter(format!("unknown breakdown mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub num_workers: u32,
    pub worker: WorkerId,
    pub events_executed: u64,
    /// In the order of [`BreakdownMode::columns`].
    pub values: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Breakdown {
    pub mode: BreakdownMode,
    pub rows: Vec<BreakdownRow>,
}

impl Breakdown {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.mode.columns().iter().position(|c| *c == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("num_workers,worker,events_executed,{}\n", self.mode.columns().join(","));
        for r in &self.rows {
            let vals: Vec<String> = r.values.iter().map(u64::to_string).collect();
            out.push_str(&format!("{},{},{},{}\n", r.num_workers, r.worker, r.events_executed, vals.join(",")));
        }
        out
    }

    /// Mean and max over workers per run, in milliseconds.
    pub fn to_table(&self) -> String {
        let cols = self.mode.columns();
        let mut out = format!("{:>8}", "workers");
        for c in cols {
            let name = c.trim_end_matches("_ns");
            out.push_str(&format!(" {:>14} {:>14}", format!("{name} mean"), format!("{name} max")));
        }
        out.push('\n');
        let mut runs: Vec<u32> = self.rows.iter().map(|r| r.num_workers).collect();
        runs.dedup();
        for n in runs {
            let rows: Vec<&BreakdownRow> = self.rows.iter().filter(|r| r.num_workers == n).collect();
            out.push_str(&format!("{n:>8}"));
            for i in 0..cols.len() {
                let sum: u64 = rows.iter().map(|r| r.values[i]).sum();
                let max = rows.iter().map(|r| r.values[i]).max().unwrap_or(0);
                let mean = sum as f64 / rows.len().max(1) as f64;
                out.push_str(&format!(" {:>14.3} {:>14.3}", mean / 1e6, max as f64 / 1e6));
            }
            out.push('\n');
        }
        out
    }
}

/// One run per worker count over a shared topology and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingSweep {
    pub seed: u64,
    pub topology_digest: String,
    pub worker_counts: Vec<u32>,
    pub runs: Vec<RunReport>,
}

/// Run `template` once per worker count, partitioning with `partitioner`.
pub fn run_sweep(
    topology: &Topology,
    worker_counts: &[u32],
    template: &RunSpec,
    launch: &Launch,
    mut partitioner: impl FnMut(&Topology, u32) -> Result<Partition>,
) -> Result<ScalingSweep> {
    let mut runs = Vec::with_capacity(worker_counts.len());
    for &n in worker_counts {
        let spec = RunSpec {
            topology: topology.clone(),
            partition: partitioner(topology, n)?,
            ..template.clone()
        };
        if spec.num_workers() != n {
            return Err(Error::InvalidParameter(format!(
                "partitioner returned {} workers for a {n}-worker run",
                spec.num_workers()
            )));
        }
        runs.push(run_simulation_with(&spec, launch)?);
    }
    let seed = topology.seed;
    let topology_digest = RunSpec::new(topology.clone(), Partition::single(&topology.router_ids())).topology_digest()?;
    Ok(ScalingSweep {
        seed,
        topology_digest,
        worker_counts: worker_counts.to_vec(),
        runs,
    })
}

pub fn report_breakdown(runs: &[RunReport], mode: BreakdownMode) -> Breakdown {
    let mut rows = Vec::new();
    for run in runs {
        for w in &run.workers {
            let values = match mode {
                BreakdownMode::Legacy => vec![w.compute_ns, w.barrier_wait_ns + w.exchange_ns, w.qsm_socket_ns],
                BreakdownMode::Split => vec![w.compute_ns, w.barrier_wait_ns, w.exchange_ns, w.qsm_socket_ns],
                BreakdownMode::Redefined => vec![w.compute_ns + w.barrier_wait_ns, w.exchange_ns, w.qsm_socket_ns],
            };
            rows.push(BreakdownRow {
                num_workers: run.num_workers,
                worker: w.worker,
                events_executed: w.events_executed,
                values,
            });
        }
    }
    Breakdown { mode, rows }
}

/// Relative spread `(max - min) / min` of compute time per executed event
/// across runs.
pub fn per_event_cost_spread(runs: &[RunReport]) -> f64 {
    let costs: Vec<f64> = runs
        .iter()
        .filter(|r| r.events_executed > 0)
        .map(|r| {
            let compute: u64 = r.workers.iter().map(|w| w.compute_ns).sum();
            compute as f64 / r.events_executed as f64
        })
        .collect();
    let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = costs.iter().copied().fold(0.0, f64::max);
    if costs.is_empty() || min <= 0.0 {
        return 0.0;
    }
    (max - min) / min
}
