use std::collections::BTreeMap;
use std::net::TcpListener;
use std::sync::Arc;
use std::thread;

use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::QsmError;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn bell(a: u64, b: u64) -> QsmRequest {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    QsmRequest::Set {
        keys: vec![a, b],
        amplitudes: vec![c(h), c(0.0), c(0.0), c(h)],
    }
}

/// Amplitudes keyed by the bit of each qubit, qubits in canonical key order.
type Table = BTreeMap<Vec<u8>, Complex64>;

fn to_table(s: &QuantumState) -> Table {
    let n = s.num_qubits();
    s.amplitudes()
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let bits = (0..n).map(|q| ((i >> (n - 1 - q)) & 1) as u8).collect();
            (bits, *a)
        })
        .collect()
}

/// Brute-force measurement over an explicit basis table.
fn oracle_measure(table: &Table, pos: usize, draw: f64) -> (u8, Table) {
    let p0: f64 = table
        .iter()
        .filter(|(b, _)| b[pos] == 0)
        .map(|(_, a)| a.norm_sqr())
        .sum();
    let outcome = u8::from(draw >= p0);
    let weight: f64 = table
        .iter()
        .filter(|(b, _)| b[pos] == outcome)
        .map(|(_, a)| a.norm_sqr())
        .sum();
    let post = table
        .iter()
        .filter(|(b, _)| b[pos] == outcome)
        .map(|(b, a)| {
            let mut rest = b.clone();
            rest.remove(pos);
            (rest, a / weight.sqrt())
        })
        .collect();
    (outcome, post)
}

fn random_state(rng: &mut impl Rng, keys: Vec<u64>) -> Vec<Complex64> {
    let n = 1usize << keys.len();
    let raw: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let norm = raw.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    raw.into_iter().map(|a| a / norm).collect()
}

proptest! {
    #[test]
    fn measurement_matches_table_oracle(seed in any::<u64>(), n in 1usize..5, pick in 0usize..4, draw in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keys: Vec<u64> = (0..n as u64).map(|k| k * 3 + 1).collect();
        let state = QuantumState::new(keys.clone(), random_state(&mut rng, keys.clone())).unwrap();
        let pos = pick % n;
        let (out, rest) = state.measure(keys[pos], draw).unwrap();
        let (want_out, want_rest) = oracle_measure(&to_table(&state), pos, draw);
        prop_assert_eq!(out, want_out);
        match rest {
            None => prop_assert_eq!(n, 1),
            Some(rest) => {
                prop_assert!((rest.norm_sqr() - 1.0).abs() < NORM_TOLERANCE);
                let got = to_table(&rest);
                prop_assert_eq!(got.len(), want_rest.len());
                for (bits, a) in &want_rest {
                    prop_assert!((got[bits] - a).norm() < 1e-12);
                }
            }
        }
    }
}

fn owner_by_range(split: u64) -> KeyOwner {
    Arc::new(move |k| if k < split { 0 } else { 1 })
}

struct NullLink;

impl GlobalQsmLink for NullLink {
    fn flush(&mut self, batch: RequestBatch) -> crate::Result<BatchResponse> {
        Ok(BatchResponse {
            worker: batch.worker,
            epoch_index: batch.epoch_index,
            responses: vec![QsmResponse::Ack; batch.requests.len()],
            ..Default::default()
        })
    }
    fn close(&mut self) -> crate::Result<()> {
        Ok(())
    }
}

const TOKEN: ReplyToken = ReplyToken { entity: 0, tag: 0 };

#[test]
fn confined_requests_route_locally() {
    let client = QsmClient::new(0, owner_by_range(100), Box::new(NullLink));
    assert_eq!(client.route(&bell(1, 2)), Route::Local);
}

#[test]
fn spanning_requests_route_globally() {
    let mut client = QsmClient::new(0, owner_by_range(100), Box::new(NullLink));
    assert_eq!(client.route(&bell(1, 200)), Route::Global);
    assert_eq!(client.submit(bell(1, 200), TOKEN), None);
    // key 1 is now global-held, so even a confined measure goes global
    assert_eq!(
        client.route(&QsmRequest::Measure { key: 1, draw: 0.1 }),
        Route::Global
    );
    // a key owned by another worker is never local
    assert_eq!(
        client.route(&QsmRequest::Measure { key: 300, draw: 0.1 }),
        Route::Global
    );
}

#[test]
fn solo_client_keeps_everything_local() {
    let mut client = QsmClient::solo();
    assert_eq!(client.route(&bell(1, u64::MAX)), Route::Local);
    assert_eq!(client.submit(bell(1, 2), TOKEN), Some(QsmResponse::Ack));
    assert_eq!(client.flush(0).unwrap(), vec![]);
    assert_eq!(client.stats().flushes, 0);
}

#[test]
fn bell_then_measure_batch() {
    let mut g = GlobalQsm::new(None);
    let batch = RequestBatch {
        worker: 0,
        epoch_index: 0,
        requests: vec![bell(1, 2), QsmRequest::Measure { key: 1, draw: 0.3 }],
    };
    assert_eq!(
        g.apply_batch(&batch),
        vec![QsmResponse::Ack, QsmResponse::Outcome(0)]
    );
}

#[test]
fn empty_batch_applies_nothing() {
    let mut g = GlobalQsm::new(None);
    let out = g.serve_round(vec![RequestBatch::default()]);
    assert_eq!(out.len(), 1);
    assert!(out[0].responses.is_empty());
    assert_eq!(g.requests_served(), 0);
    assert!(g.store().is_empty());
}

/// Random SET/MEASURE traffic over a small key space.
fn random_requests(rng: &mut impl Rng, n: usize) -> Vec<QsmRequest> {
    (0..n)
        .map(|_| {
            if rng.gen_bool(0.5) {
                let width = rng.gen_range(1..=3);
                let mut keys: Vec<u64> = Vec::new();
                while keys.len() < width {
                    let k = rng.gen_range(0..8);
                    if !keys.contains(&k) {
                        keys.push(k);
                    }
                }
                let amplitudes = random_state(rng, keys.clone());
                QsmRequest::Set { keys, amplitudes }
            } else {
                QsmRequest::Measure {
                    key: rng.gen_range(0..8),
                    draw: rng.gen_range(0.0..1.0),
                }
            }
        })
        .collect()
}

#[test]
fn hundred_random_requests_match_sequential_application() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let requests = random_requests(&mut rng, 100);
    let mut oracle = QsmStore::new();
    let expected: Vec<QsmResponse> = requests.iter().map(|r| oracle.apply(r)).collect();

    let mut g = GlobalQsm::new(None);
    let got = g.apply_batch(&RequestBatch {
        worker: 0,
        epoch_index: 0,
        requests,
    });
    assert_eq!(got, expected);
    assert_eq!(g.store().snapshot(), oracle.snapshot());
}

proptest! {
    #[test]
    fn batching_is_transparent(seed in any::<u64>(), cuts in prop::collection::vec(0usize..60, 0..8)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let requests = random_requests(&mut rng, 60);
        let mut oracle = QsmStore::new();
        let expected: Vec<QsmResponse> = requests.iter().map(|r| oracle.apply(r)).collect();

        let mut cuts = cuts;
        cuts.push(0);
        cuts.push(requests.len());
        cuts.sort();
        cuts.dedup();
        let mut g = GlobalQsm::new(None);
        let mut got = Vec::new();
        for (epoch, w) in cuts.windows(2).enumerate() {
            let batch = RequestBatch { worker: 0, epoch_index: epoch as u64, requests: requests[w[0]..w[1]].to_vec() };
            got.extend(g.serve_round(vec![batch]).remove(0).responses);
        }
        prop_assert_eq!(got, expected);
        prop_assert_eq!(g.store().snapshot(), oracle.snapshot());
    }
}

#[test]
fn rounds_apply_in_worker_order() {
    // both workers touch key 5 in the same epoch: worker 0 sets, worker 1 measures
    let mut g = GlobalQsm::new(None);
    let b0 = RequestBatch {
        worker: 0,
        epoch_index: 4,
        requests: vec![QsmRequest::Set {
            keys: vec![5],
            amplitudes: vec![c(0.0), c(1.0)],
        }],
    };
    let b1 = RequestBatch {
        worker: 1,
        epoch_index: 4,
        requests: vec![QsmRequest::Measure { key: 5, draw: 0.0 }],
    };
    let out = g.serve_round(vec![b1, b0]);
    assert_eq!(out[0].worker, 0);
    assert_eq!(out[1].responses, vec![QsmResponse::Outcome(1)]);
}

#[test]
fn confined_states_migrate_back_to_owner() {
    let mut g = GlobalQsm::new(Some(owner_by_range(100)));
    let out = g.serve_round(vec![
        RequestBatch {
            worker: 0,
            epoch_index: 0,
            requests: vec![bell(1, 2), bell(3, 150)],
        },
        RequestBatch {
            worker: 1,
            epoch_index: 0,
            requests: vec![],
        },
    ]);
    // {1,2} is confined to worker 0 and handed back; {3,150} stays global
    assert_eq!(out[0].migrated.len(), 1);
    assert_eq!(out[0].migrated[0].keys(), &[1, 2]);
    assert_eq!(out[0].held, vec![3]);
    assert_eq!(out[1].held, vec![150]);

    let out = g.serve_round(vec![
        RequestBatch {
            worker: 1,
            epoch_index: 1,
            requests: vec![QsmRequest::Measure { key: 150, draw: 0.9 }],
        },
        RequestBatch {
            worker: 0,
            epoch_index: 1,
            requests: vec![],
        },
    ]);
    assert_eq!(out[1].responses, vec![QsmResponse::Outcome(1)]);
    assert_eq!(out[0].migrated, vec![QuantumState::basis(3, 1)]);
    assert!(g.store().is_empty());
}

#[test]
fn client_installs_migrated_states() {
    let service = InprocQsmService::new(GlobalQsm::new(Some(owner_by_range(100))), 2);
    let owner = owner_by_range(100);
    let mut a = QsmClient::new(0, owner.clone(), Box::new(service.link()));
    let mut b = QsmClient::new(1, owner, Box::new(service.link()));

    let tb = thread::spawn(move || {
        assert_eq!(b.submit(bell(7, 170), TOKEN), None);
        assert_eq!(b.submit(QsmRequest::Measure { key: 170, draw: 0.2 }, TOKEN), None);
        let replies = b.flush(0).unwrap();
        assert_eq!(replies.len(), 2);
        assert_eq!(replies[1].1, QsmResponse::Outcome(0));
        b.close().unwrap();
    });
    assert!(a.flush(0).unwrap().is_empty());
    tb.join().unwrap();
    // key 7 came home and is measured locally now
    assert_eq!(
        a.route(&QsmRequest::Measure { key: 7, draw: 0.5 }),
        Route::Local
    );
    assert_eq!(
        a.submit(QsmRequest::Measure { key: 7, draw: 0.5 }, TOKEN),
        Some(QsmResponse::Outcome(0))
    );
}

#[test]
fn socket_server_matches_inproc() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = thread::spawn(move || serve_tcp(listener, GlobalQsm::new(None), 2).unwrap());

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let requests = random_requests(&mut rng, 40);
    let mut oracle = QsmStore::new();
    let expected: Vec<QsmResponse> = requests.iter().map(|r| oracle.apply(r)).collect();

    let mut idle = SocketLink::connect(addr).unwrap();
    let idle_thread = thread::spawn(move || {
        for epoch in 0..4 {
            let r = idle
                .flush(RequestBatch {
                    worker: 0,
                    epoch_index: epoch,
                    requests: vec![],
                })
                .unwrap();
            assert!(r.responses.is_empty());
        }
        idle.close().unwrap();
    });
    let mut link = SocketLink::connect(addr).unwrap();
    let mut got = Vec::new();
    for (epoch, chunk) in requests.chunks(10).enumerate() {
        let r = link
            .flush(RequestBatch {
                worker: 1,
                epoch_index: epoch as u64,
                requests: chunk.to_vec(),
            })
            .unwrap();
        got.extend(r.responses);
    }
    link.close().unwrap();
    idle_thread.join().unwrap();
    let g = server.join().unwrap();
    assert_eq!(got, expected);
    assert_eq!(g.store().snapshot(), oracle.snapshot());
}

#[test]
fn store_errors_travel_in_band() {
    let mut g = GlobalQsm::new(None);
    let out = g.apply_batch(&RequestBatch {
        worker: 0,
        epoch_index: 0,
        requests: vec![
            QsmRequest::Measure { key: 9, draw: 0.5 },
            QsmRequest::Set {
                keys: vec![1],
                amplitudes: vec![c(0.6), c(0.8001)],
            },
        ],
    });
    assert_eq!(
        out,
        vec![
            QsmResponse::Error(QsmError::KeyNotFound(9)),
            QsmResponse::Error(QsmError::NotNormalized)
        ]
    );
}
