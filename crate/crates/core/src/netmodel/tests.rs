use std::collections::BTreeMap;

use super::*;
use crate::kernel::{EntityId, Timeline};
use crate::qsm::QsmClient;
use crate::time::SimTime;

fn run_serial(topo: &Topology, options: ModelOptions) -> Timeline<Router> {
    let model = NetModel::new(topo, options).unwrap();
    let mut tl = Timeline::new(NetServices::new(QsmClient::solo(), model.clone()));
    for id in topo.router_ids() {
        tl.add_entity(id, model.router(id));
    }
    tl.enable_trace();
    tl.init_entities().unwrap();
    tl.run_until(SimTime::INFINITY).unwrap();
    tl
}

fn all_keys(tl: &Timeline<Router>) -> Vec<HopKey> {
    tl.entities().flat_map(|(_, r)| r.hop_keys()).collect()
}

fn lossless(delay: SimTime) -> LinkParams {
    LinkParams {
        attenuation_db_per_km: 0.0,
        delay: Some(delay),
        ..LinkParams::default()
    }
}

#[test]
fn two_router_line() {
    let t = gen_linear(&LinearParams {
        n_routers: 2,
        ..Default::default()
    })
    .unwrap();
    assert_eq!((t.qconnections.len(), t.cconnections.len(), t.sessions.len()), (1, 1, 1));
}

#[test]
fn full_scale_line_has_1023_links() {
    let t = gen_linear(&LinearParams {
        n_routers: 1024,
        ..Default::default()
    })
    .unwrap();
    assert_eq!(t.qconnections.len(), 1023);
    assert_eq!(t.sessions[0].path.len(), 1024);
}

#[test]
fn line_rejects_single_router() {
    assert!(gen_linear(&LinearParams {
        n_routers: 1,
        ..Default::default()
    })
    .is_err());
}

#[test]
fn first_photon_reaches_far_end_after_three_hops() {
    let t = gen_linear(&LinearParams {
        n_routers: 4,
        link: lossless(SimTime::from_ms(1)),
        workload: WorkloadParams {
            max_photons: 3,
            ..Default::default()
        },
        seed: 1,
    })
    .unwrap();
    let tl = run_serial(&t, ModelOptions::default());
    let first = tl.trace().iter().find(|(_, _, target)| *target == 3).unwrap();
    assert_eq!(first.0, SimTime::from_ms(3));
}

#[test]
fn single_group_is_a_star() {
    let t = gen_as(&AsParams {
        n_groups: 1,
        routers_per_group: 4,
        ..Default::default()
    })
    .unwrap();
    assert_eq!(t.qconnections.len(), 3);
    assert!(t.qconnections.iter().all(|c| c.src == 0));
    assert!(t.sessions.is_empty());
}

#[test]
fn as_generation_is_reproducible() {
    let p = AsParams {
        n_groups: 6,
        routers_per_group: 5,
        seed: 42,
        ..Default::default()
    };
    assert_eq!(gen_as(&p).unwrap().to_json().unwrap(), gen_as(&p).unwrap().to_json().unwrap());
    let other = gen_as(&AsParams { seed: 43, ..p.clone() }).unwrap();
    assert_ne!(other.to_json().unwrap(), gen_as(&p).unwrap().to_json().unwrap());
}

#[test]
fn hot_group_mesh_and_memories() {
    let t = gen_as(&AsParams {
        n_groups: 3,
        routers_per_group: 4,
        hot_group_sessions: 5,
        hot_group_mesh: true,
        hot_group_memories: 40,
        ..Default::default()
    })
    .unwrap();
    for a in 1..4 {
        for b in a + 1..4 {
            assert!(t.qchannel(a, b).is_some(), "{a}-{b}");
        }
    }
    assert!(t.routers.iter().all(|r| r.memories == if r.id < 4 { 40 } else { 8 }));
    let hot: Vec<_> = t.sessions.iter().filter(|s| s.src < 4 && s.dst < 4).collect();
    assert!(hot.len() >= 5);
    // meshed spokes talk directly, not through the hub
    assert!(hot.iter().all(|s| s.path.len() == 2));
}

#[test]
fn full_scale_as_has_1024_routers() {
    let t = gen_as(&AsParams {
        n_groups: 32,
        routers_per_group: 32,
        session_density: 0.05,
        ..Default::default()
    })
    .unwrap();
    assert_eq!(t.routers.len(), 1024);
    // 31 spokes per group plus at least a spanning tree between hubs
    assert!(t.qconnections.len() >= 32 * 31 + 31);
}

#[test]
fn topology_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.json");
    let t = gen_as(&AsParams::default()).unwrap();
    t.save(&path).unwrap();
    assert_eq!(Topology::load(&path).unwrap(), t);
    let text = std::fs::read_to_string(&path).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    for k in ["routers", "qconnections", "cconnections", "sessions", "seed"] {
        assert!(v.get(k).is_some(), "missing {k}");
    }
    assert!(v["qconnections"][0]["delay_ps"].is_u64());
}

#[test]
fn validation_catches_broken_files() {
    let good = gen_linear(&LinearParams {
        n_routers: 3,
        ..Default::default()
    })
    .unwrap();

    let mut t = good.clone();
    t.cconnections[0].delay_ps = SimTime(t.qconnections[0].delay_ps.ps() - 1);
    assert!(t.validate().is_err(), "classical faster than quantum");

    let mut t = good.clone();
    t.qconnections[1].dst = t.qconnections[1].src;
    assert!(t.validate().is_err(), "self loop");

    let mut t = good.clone();
    t.qconnections.pop();
    t.cconnections.pop();
    t.sessions.clear();
    assert!(t.validate().is_err(), "disconnected");

    let mut t = good.clone();
    t.qconnections[0].delay_ps = SimTime::ZERO;
    assert!(t.validate().is_err(), "zero delay");

    let mut t = good.clone();
    t.sessions[0].path = vec![0, 2];
    assert!(t.validate().is_err(), "hop without link");

    let mut t = good;
    t.routers.clear();
    assert!(matches!(t.validate(), Err(crate::Error::EmptyTopology)));
}

#[test]
fn fifty_km_at_point_two_db_keeps_a_tenth() {
    assert!((survival_probability(0.2, 50_000.0) - 0.1).abs() < 1e-12);
    assert_eq!(survival_probability(0.0, 1e6), 1.0);
}

#[test]
fn survival_frequency_within_three_sigma() {
    let p = survival_probability(0.2, 50_000.0);
    let n = 20_000u64;
    let hits = (0..n)
        .filter(|i| PhotonDraws::new(9, 3, 0, *i, p).survived)
        .count() as f64;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    assert!((hits - n as f64 * p).abs() <= 3.0 * sigma);
}

#[test]
fn key_layout_round_trips() {
    let k = keys::encode(keys::MAX_ROUTER, 513, keys::RECEIVER, keys::MAX_PHOTONS - 1);
    assert_eq!(keys::router(k), keys::MAX_ROUTER);
    assert_eq!(keys::session(k), 513);
    assert_eq!(keys::side(k), keys::RECEIVER);
    assert_eq!(keys::photon(k), keys::MAX_PHOTONS - 1);
}

#[test]
fn both_ends_of_every_hop_hold_the_same_key() {
    let t = gen_linear(&LinearParams {
        n_routers: 6,
        seed: 5,
        ..Default::default()
    })
    .unwrap();
    let tl = run_serial(&t, ModelOptions::default());
    let keys = all_keys(&tl);
    let summary = SessionSummary::collect(&keys);
    assert_eq!(summary.len(), 1);
    assert!(summary[0].symmetric);
    assert!(summary[0].delivered_bits > 0);
    for k in &keys {
        assert_eq!(k.sifted, k.bits.len() as u64, "{k:?}");
    }
    // hop 0 reached its target, so the source stopped
    let src = keys.iter().find(|k| k.hop == 0 && k.side == keys::SENDER).unwrap();
    assert!(src.sifted >= 64);
    assert!(tl.services().qsm.local().is_empty(), "every pair was consumed");
}

#[test]
fn mismatched_bases_yield_no_bit_but_emission_continues() {
    let t = gen_linear(&LinearParams {
        n_routers: 2,
        link: lossless(SimTime::from_us(5)),
        workload: WorkloadParams {
            target_key_bits: 1_000,
            max_photons: 40,
            ..Default::default()
        },
        seed: 8,
    })
    .unwrap();
    let tl = run_serial(&t, ModelOptions::default());
    let keys = all_keys(&tl);
    let rx = keys.iter().find(|k| k.side == keys::RECEIVER).unwrap();
    assert_eq!(rx.photons, 40, "all 40 photons were emitted and arrived");
    let kept: Vec<u64> = rx.bits.iter().map(|(p, _)| *p).collect();
    let mut mismatched = 0;
    for i in 0..40 {
        let d = PhotonDraws::new(8, 0, 0, i, 1.0);
        let matched = d.sender_basis == d.receiver_basis;
        assert_eq!(kept.contains(&i), matched, "photon {i}");
        mismatched += usize::from(!matched);
    }
    assert!(mismatched > 0);
}

#[test]
fn quantum_events_dominate_linear_workload() {
    let t = gen_linear(&LinearParams::default()).unwrap();
    let tl = run_serial(&t, ModelOptions::default());
    let c = tl.services().census;
    assert_eq!(c.total(), tl.counters().executed);
    assert!(c.quantum() as f64 >= 0.8 * c.total() as f64, "{c:?}");
}

#[test]
fn dropping_a_session_leaves_the_others_alone() {
    let t = gen_as(&AsParams {
        n_groups: 4,
        routers_per_group: 4,
        session_density: 1.0,
        seed: 3,
        ..Default::default()
    })
    .unwrap();
    assert!(t.sessions.len() >= 3);
    let keys_of = |topo: &Topology| -> BTreeMap<(u32, u16, u8), Vec<(u64, u8)>> {
        all_keys(&run_serial(topo, ModelOptions::default()))
            .into_iter()
            .map(|k| ((k.session, k.hop, k.side), k.bits))
            .collect()
    };
    let full = keys_of(&t);
    let mut reduced = t.clone();
    let dropped = reduced.sessions.remove(1).id;
    let partial = keys_of(&reduced);
    for (k, bits) in &partial {
        assert_eq!(full.get(k), Some(bits), "session {} changed", k.0);
    }
    assert!(full.keys().any(|k| k.0 == dropped));
}

#[test]
fn unknown_session_is_reported() {
    use crate::kernel::{Event, Payload, Timer};
    let t = gen_linear(&LinearParams {
        n_routers: 2,
        ..Default::default()
    })
    .unwrap();
    let model = NetModel::new(&t, ModelOptions::default()).unwrap();
    let mut tl = Timeline::new(NetServices::new(QsmClient::solo(), model.clone()));
    tl.add_entity(0, model.router(0));
    tl.schedule(Event::new(
        SimTime::ZERO,
        0 as EntityId,
        Payload::ProtocolTimer(Timer::Emit { session: 77, photon: 0 }),
    ))
    .unwrap();
    assert!(matches!(
        tl.run_until(SimTime::INFINITY),
        Err(crate::Error::UnknownSession(77))
    ));
}
