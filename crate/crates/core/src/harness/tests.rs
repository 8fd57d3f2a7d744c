use std::collections::BTreeMap;

use super::*;
use crate::error::Error;
use crate::netmodel::{gen_as, gen_linear, AsParams, LinearParams, ModelOptions, Topology, WorkloadParams};
use crate::partition::Partition;
use crate::sync::EpochTiming;
use crate::time::SimTime;

fn line(n: u32, seed: u64) -> Topology {
    gen_linear(&LinearParams {
        n_routers: n,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn spec(topo: &Topology, workers: u32) -> RunSpec {
    RunSpec::new(topo.clone(), default_partition(topo, workers, 7).unwrap())
}

/// Routers 0..9 on worker 0, one router each on workers 1..8.
fn lopsided(topo: &Topology) -> Partition {
    let assignment: BTreeMap<_, _> = topo
        .router_ids()
        .into_iter()
        .enumerate()
        .map(|(i, r)| (r, if i < 9 { 0 } else { i as u32 - 8 }))
        .collect();
    Partition::new(8, assignment).unwrap()
}

#[test]
fn four_workers_reproduce_the_serial_digest() {
    let topo = line(16, 3);
    let serial = run_simulation(&spec(&topo, 1)).unwrap();
    let parallel = run_simulation(&spec(&topo, 4)).unwrap();
    assert_eq!(serial.digest, parallel.digest);
    assert_eq!(serial.sessions, parallel.sessions);
    assert_eq!(serial.census, parallel.census);
    assert!(serial.sessions[0].delivered_bits > 0);
}

#[test]
fn socket_transports_reproduce_the_serial_digest() {
    let topo = line(8, 5);
    let serial = run_simulation(&spec(&topo, 1)).unwrap();
    let mut s = spec(&topo, 3);
    s.exchange = Transport::Socket;
    s.qsm = Transport::Socket;
    let report = run_simulation(&s).unwrap();
    assert_eq!(report.digest, serial.digest);
    let (batches, _) = report.global_qsm.unwrap();
    assert!(batches > 0);
}

#[test]
fn zero_stop_time_gives_an_empty_trace() {
    let topo = line(4, 1);
    for workers in [1, 2] {
        let mut s = spec(&topo, workers);
        s.stop_time = SimTime::ZERO;
        let report = run_simulation(&s).unwrap();
        assert_eq!(report.events_executed, 0);
        assert!(report.epochs.is_empty());
        assert_eq!(report.epoch_csv(), format!("{EPOCH_CSV_HEADER}\n"));
        assert_eq!(report.digest.len(), 64);
    }
}

#[test]
fn sixteen_workers_on_the_as_config_fill_every_column() {
    let topo = gen_as(&AsParams::default()).unwrap();
    assert_eq!(topo.routers.len(), 16);
    let report = run_simulation(&spec(&topo, 16)).unwrap();
    assert_eq!(report.workers.len(), 16);
    let total = |f: fn(&WorkerTotals) -> u64| report.workers.iter().map(f).sum::<u64>();
    assert!(total(|w| w.compute_ns) > 0);
    assert!(total(|w| w.barrier_wait_ns) > 0);
    assert!(total(|w| w.exchange_ns) > 0);
    assert!(total(|w| w.qsm_socket_ns) > 0);
}

#[test]
fn single_worker_records_no_wait_or_exchange() {
    let report = run_simulation(&spec(&line(6, 2), 1)).unwrap();
    assert!(!report.epochs.is_empty());
    assert!(report.epochs.iter().all(|e| e.barrier_wait_ns == 0 && e.exchange_ns == 0));
    for mode in [BreakdownMode::Legacy, BreakdownMode::Split, BreakdownMode::Redefined] {
        let b = report_breakdown(std::slice::from_ref(&report), mode);
        for name in ["sync_ns", "barrier_wait_ns", "exchange_ns"] {
            if let Some(i) = b.column(name) {
                assert_eq!(b.rows[0].values[i], 0, "{mode} {name}");
            }
        }
    }
}

#[test]
fn workers_run_the_same_epochs() {
    let report = run_simulation(&spec(&line(10, 4), 4)).unwrap();
    let per_worker = |w: u32| -> Vec<u64> {
        report
            .epochs
            .iter()
            .filter(|e| e.worker == w)
            .map(|e| e.epoch_index)
            .collect()
    };
    for w in 1..4 {
        assert_eq!(per_worker(w), per_worker(0));
    }
    assert_eq!(per_worker(0).len() as u64, report.epoch_count);
}

#[test]
fn echoed_config_reproduces_the_digest() {
    let topo = gen_as(&AsParams {
        seed: 11,
        ..Default::default()
    })
    .unwrap();
    let report = run_simulation(&spec(&topo, 4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    report.save(&path).unwrap();
    let back = RunReport::load(&path).unwrap();
    assert_eq!(back.config, report.config);
    assert_eq!(run_simulation(&back.config).unwrap().digest, report.digest);
}

#[test]
fn the_seed_changes_the_digest() {
    let topo = line(6, 1);
    let a = run_simulation(&spec(&topo, 2)).unwrap();
    let b = run_simulation(&spec(&topo, 2).with_seed(2)).unwrap();
    assert_ne!(a.digest, b.digest);
    assert_eq!(b.seed, 2);
}

#[test]
fn inflated_lookahead_is_reported_as_a_causality_violation() {
    let topo = line(8, 1);
    let mut s = spec(&topo, 2);
    s.lookahead_override = Some(SimTime::from_ps(s.lookahead().unwrap().ps() * 2));
    match run_simulation(&s) {
        Err(Error::CausalityViolation { .. }) => {}
        other => panic!("expected a causality violation, got {other:?}"),
    }
}

#[test]
fn mismatched_partition_is_rejected() {
    let s = RunSpec::new(line(4, 1), Partition::round_robin(&[0, 1, 2], 2).unwrap());
    assert!(matches!(run_simulation(&s), Err(Error::PartitionSchema(_))));
}

fn timing(worker: u32, epoch: u64, compute: u64) -> EpochTiming {
    EpochTiming {
        worker,
        epoch_index: epoch,
        compute_ns: compute,
        ..Default::default()
    }
}

#[test]
fn collapse_one_is_a_pass_through() {
    let records: Vec<_> = (0..5).flat_map(|e| [timing(0, e, e * 10), timing(1, e, e)]).collect();
    let points = aggregate_trace(&records, 1);
    assert_eq!(points.len(), 10);
    for p in &points {
        let src = records
            .iter()
            .find(|t| t.worker == p.worker && t.epoch_index == p.first_epoch)
            .unwrap();
        assert_eq!((p.epochs, p.compute_ns), (1, src.compute_ns));
    }
}

#[test]
fn collapse_eight_over_sixteen_epochs() {
    let records: Vec<_> = (0..16).flat_map(|e| [timing(0, e, e + 1), timing(1, e, 100)]).collect();
    let points = aggregate_trace(&records, 8);
    assert_eq!(points.len(), 4);
    let w0: Vec<u64> = points.iter().filter(|p| p.worker == 0).map(|p| p.compute_ns).collect();
    assert_eq!(w0, vec![(1..=8).sum::<u64>(), (9..=16).sum::<u64>()]);
    assert!(points.iter().filter(|p| p.worker == 1).all(|p| p.compute_ns == 800 && p.epochs == 8));
    assert_eq!(
        trace_csv(&points).lines().next(),
        Some("worker,group,first_epoch,epochs,compute_ns")
    );
}

fn busy() -> ModelOptions {
    ModelOptions {
        busy_work: 2_000,
        ..Default::default()
    }
}

#[test]
fn lopsided_partition_shows_a_straggler() {
    // stop while the source is still emitting so no group is a drain
    let topo = gen_linear(&LinearParams {
        n_routers: 16,
        seed: 9,
        workload: WorkloadParams {
            target_key_bits: 1 << 20,
            max_photons: 1 << 20,
            ..Default::default()
        },
        ..Default::default()
    })
    .unwrap();
    let mut s = RunSpec::new(topo.clone(), lopsided(&topo));
    s.options = ModelOptions {
        busy_work: 20_000,
        ..Default::default()
    };
    s.stop_time = SimTime::from_us(400);
    let report = run_simulation(&s).unwrap();
    let heaviest = report.workers.iter().max_by_key(|w| w.events_executed).unwrap().worker;
    assert_eq!(heaviest, 0);

    let points = aggregate_trace(&report.epochs, 8);
    let mut groups: BTreeMap<u64, Vec<&TracePoint>> = BTreeMap::new();
    for p in &points {
        groups.entry(p.group).or_default().push(p);
    }
    for (g, ps) in groups {
        let top = ps.iter().max_by_key(|p| p.compute_ns).unwrap();
        assert_eq!(top.worker, 0, "group {g}");
    }

    let split = report_breakdown(std::slice::from_ref(&report), BreakdownMode::Split);
    let (wait, exchange) = (split.column("barrier_wait_ns").unwrap(), split.column("exchange_ns").unwrap());
    for row in split.rows.iter().filter(|r| r.worker != 0) {
        assert!(row.values[wait] > 3 * row.values[exchange], "{row:?}");
    }
}

#[test]
fn breakdown_modes_agree_exactly() {
    let topo = line(12, 6);
    let runs: Vec<_> = [1, 2, 4]
        .iter()
        .map(|&n| run_simulation(&spec(&topo, n)).unwrap())
        .collect();
    let legacy = report_breakdown(&runs, BreakdownMode::Legacy);
    let split = report_breakdown(&runs, BreakdownMode::Split);
    let redefined = report_breakdown(&runs, BreakdownMode::Redefined);
    for ((l, s), r) in legacy.rows.iter().zip(&split.rows).zip(&redefined.rows) {
        assert_eq!(l.values[1], s.values[1] + s.values[2]);
        assert_eq!(r.values[0], s.values[0] + s.values[1]);
        assert_eq!(l.values[0], s.values[0]);
        assert_eq!(r.values[1], s.values[2]);
    }
    let csv = split.to_csv();
    assert!(csv.starts_with("num_workers,worker,events_executed,compute_ns,barrier_wait_ns,exchange_ns,qsm_socket_ns\n"));
    assert_eq!(csv.lines().count(), 1 + 1 + 2 + 4);
    assert_eq!(legacy.to_table().lines().count(), 4);
}

#[test]
fn busy_runs_account_for_their_wall_time() {
    let topo = line(8, 2);
    for n in [1, 4] {
        let mut s = spec(&topo, n);
        s.options = busy();
        let report = run_simulation(&s).unwrap();
        for w in &report.workers {
            let ratio = w.accounted_ns() as f64 / w.wall_ns as f64;
            assert!((0.9..=1.0).contains(&ratio), "{n} workers: worker {} ratio {ratio}", w.worker);
        }
    }
}

#[test]
fn per_event_cost_is_stable_across_worker_counts() {
    let topo = line(8, 2);
    let mut template = RunSpec::new(topo.clone(), Partition::single(&topo.router_ids()));
    template.options = busy();
    let sweep = run_sweep(&topo, &[1, 2, 4], &template, &Launch::default(), |t, n| {
        default_partition(t, n, 1)
    })
    .unwrap();
    let spread = per_event_cost_spread(&sweep.runs);
    assert!(spread < 0.2, "spread {spread}");
}

#[test]
fn sweep_shares_seed_and_topology() {
    let topo = line(8, 12);
    let template = RunSpec::new(topo.clone(), Partition::single(&topo.router_ids()));
    let sweep = run_sweep(&topo, &[1, 2, 4], &template, &Launch::default(), |t, n| {
        default_partition(t, n, 1)
    })
    .unwrap();
    assert_eq!(sweep.runs.len(), 3);
    for r in &sweep.runs {
        assert_eq!(r.seed, sweep.seed);
        assert_eq!(r.topology_digest, sweep.topology_digest);
        assert_eq!(r.digest, sweep.runs[0].digest);
    }
    assert_eq!(
        sweep.runs.iter().map(|r| r.num_workers).collect::<Vec<_>>(),
        vec![1, 2, 4]
    );
}

#[test]
fn transport_and_mode_names_parse() {
    assert_eq!("socket".parse::<Transport>().unwrap(), Transport::Socket);
    assert_eq!("inproc".parse::<Transport>().unwrap(), Transport::Inproc);
    assert!("tcp".parse::<Transport>().is_err());
    for m in [BreakdownMode::Legacy, BreakdownMode::Split, BreakdownMode::Redefined] {
        assert_eq!(m.to_string().parse::<BreakdownMode>().unwrap(), m);
    }
}
