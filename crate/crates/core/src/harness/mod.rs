//! Experiment driver: runs a topology under a partition and reports timings,
//! application metrics and a serial-equivalence digest.

mod report;
mod run;

pub use report::{
    aggregate_trace, per_event_cost_spread, report_breakdown, run_sweep, trace_csv, Breakdown,
    BreakdownMode, BreakdownRow, ScalingSweep, TracePoint, EPOCH_CSV_HEADER,
};
pub use run::{
    anneal_partition, assemble_report, default_partition, key_owner, run_simulation, run_simulation_with, run_worker, Launch,
    QsmSummary, RunReport, RunSpec, Transport, WorkerOutcome, WorkerTotals,
};

#[cfg(test)]
mod tests;
