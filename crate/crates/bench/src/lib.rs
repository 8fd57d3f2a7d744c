//! Fixtures shared by the benchmarks.

use qnetsim::harness::{default_partition, RunSpec};
use qnetsim::netmodel::{gen_as, gen_linear, AsParams, LinearParams, NetModel, NetServices};
use qnetsim::qsm::{QsmClient, QsmRequest};
use qnetsim::{ModelOptions, SimTime, Timeline, Topology};

pub fn linear(n: u32) -> Topology {
    gen_linear(&LinearParams {
        n_routers: n,
        seed: 1,
        ..Default::default()
    })
    .expect("linear topology")
}

pub fn as_desk() -> Topology {
    gen_as(&AsParams {
        seed: 1,
        ..Default::default()
    })
    .expect("as topology")
}

/// Runs the whole topology on one timeline and returns the executed count.
pub fn run_serial(topo: &Topology) -> u64 {
    let model = NetModel::new(topo, ModelOptions::default()).expect("model");
    let mut tl = Timeline::new(NetServices::new(QsmClient::solo(), model.clone()));
    for id in topo.router_ids() {
        tl.add_entity(id, model.router(id));
    }
    tl.init_entities().expect("init");
    tl.run_until(SimTime::INFINITY).expect("run")
}

pub fn spec(topo: &Topology, workers: u32) -> RunSpec {
    RunSpec::new(topo.clone(), default_partition(topo, workers, 1).expect("partition"))
}

/// Alternating Bell-pair sets and measurements over `keys` memories.
pub fn qsm_traffic(n: usize, keys: u64) -> Vec<QsmRequest> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    (0..n as u64)
        .map(|i| {
            let a = (2 * i) % keys;
            if i % 2 == 0 {
                QsmRequest::Set {
                    keys: vec![a, (a + 1) % keys],
                    amplitudes: [h, 0.0, 0.0, h].iter().map(|x| (*x).into()).collect(),
                }
            } else {
                QsmRequest::Measure {
                    key: (a + keys - 2) % keys,
                    draw: (i as f64 * 0.618).fract(),
                }
            }
        })
        .collect()
}
