use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::energy::{dense_energy, EnergyKind, EnergySpec, PartitionGraph};
use crate::partition::{Partition, WorkerId};

/// Geometric cooling: `T <- alpha * T` after every proposal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub t0: f64,
    pub alpha: f64,
    pub iterations: u64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        AnnealSchedule {
            t0: 10.0,
            alpha: 0.995,
            iterations: 50_000,
        }
    }
}

impl AnnealSchedule {
    fn validate(&self) -> Result<()> {
        if !(self.t0.is_finite() && self.t0 > 0.0) {
            return Err(Error::InvalidSchedule(format!("T0 = {} must be positive", self.t0)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidSchedule(format!(
                "cooling factor {} outside (0, 1)",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Metropolis rule with an explicit uniform draw in `[0, 1)`.
pub fn metropolis_accept(delta: f64, temperature: f64, draw: f64) -> bool {
    delta <= 0.0 || (temperature > 0.0 && draw < (-delta / temperature).exp())
}

/// Incremental energy bookkeeping for single-router moves.
struct Annealer<'a> {
    graph: &'a PartitionGraph,
    /// Combined cut weight per neighbour, from qchannels and flow hops.
    adj: Vec<Vec<(usize, f64)>>,
    w_mem: f64,
    totals: Vec<u64>,
    counts: Vec<usize>,
}

impl<'a> Annealer<'a> {
    fn new(graph: &'a PartitionGraph, spec: &EnergySpec, assign: &[WorkerId], workers: usize) -> Self {
        let w_q = spec.weight(EnergyKind::CrossQchannels);
        let w_f = spec.weight(EnergyKind::CrossFlows);
        let mut adj = vec![Vec::new(); graph.len()];
        let mut link = |a: usize, b: usize, w: f64| {
            if a != b && w != 0.0 {
                adj[a].push((b, w));
                adj[b].push((a, w));
            }
        };
        for (a, b) in &graph.qchannels {
            link(*a, *b, w_q);
        }
        for path in &graph.flows {
            for h in path.windows(2) {
                link(h[0], h[1], w_f);
            }
        }
        let mut totals = vec![0u64; workers];
        let mut counts = vec![0usize; workers];
        for (i, w) in assign.iter().enumerate() {
            totals[*w as usize] += graph.memories[i];
            counts[*w as usize] += 1;
        }
        Annealer {
            graph,
            adj,
            w_mem: spec.weight(EnergyKind::MemoryBalance),
            totals,
            counts,
        }
    }

    fn spread(totals: &[u64]) -> u64 {
        totals.iter().max().unwrap_or(&0) - totals.iter().min().unwrap_or(&0)
    }

    fn delta(&mut self, assign: &[WorkerId], r: usize, to: WorkerId) -> f64 {
        let from = assign[r];
        let mut d = 0.0;
        for (s, w) in &self.adj[r] {
            let ws = assign[*s];
            d += w * (f64::from(u8::from(ws != to)) - f64::from(u8::from(ws != from)));
        }
        if self.w_mem != 0.0 {
            let before = Self::spread(&self.totals);
            let m = self.graph.memories[r];
            self.totals[from as usize] -= m;
            self.totals[to as usize] += m;
            let after = Self::spread(&self.totals);
            self.totals[to as usize] -= m;
            self.totals[from as usize] += m;
            d += self.w_mem * (after as f64 - before as f64);
        }
        d
    }

    fn apply(&mut self, assign: &mut [WorkerId], r: usize, to: WorkerId) {
        let from = assign[r] as usize;
        let m = self.graph.memories[r];
        self.totals[from] -= m;
        self.totals[to as usize] += m;
        self.counts[from] -= 1;
        self.counts[to as usize] += 1;
        assign[r] = to;
    }
}

/// Simulated annealing from the round-robin assignment.
///
/// Each iteration moves one random router to a random other worker. A move
/// that would leave a worker without routers is rejected, so every worker
/// keeps at least one router whenever there are enough routers to go round.
/// Returns the lowest-energy assignment seen.
pub fn anneal(
    graph: &PartitionGraph,
    spec: &EnergySpec,
    num_workers: u32,
    schedule: &AnnealSchedule,
    seed: u64,
) -> Result<Partition> {
    schedule.validate()?;
    if num_workers == 0 {
        return Err(Error::InvalidParameter("num_workers must be positive".into()));
    }
    let start = Partition::round_robin(&graph.routers, num_workers)?;
    let mut assign = graph.dense(&start)?;
    if num_workers == 1 || graph.len() < 2 || schedule.iterations == 0 {
        return Ok(start);
    }
    let initial_energy = dense_energy(graph, &assign, num_workers, spec);
    let keep_nonempty = graph.len() >= num_workers as usize;

    let mut state = Annealer::new(graph, spec, &assign, num_workers as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut current = initial_energy;
    let mut best = assign.clone();
    let mut best_energy = current;
    let mut t = schedule.t0;

    for _ in 0..schedule.iterations {
        let r = rng.gen_range(0..graph.len());
        let mut to = rng.gen_range(0..num_workers - 1);
        if to >= assign[r] {
            to += 1;
        }
        let draw: f64 = rng.gen();
        let empties = keep_nonempty && state.counts[assign[r] as usize] == 1;
        if !empties {
            let d = state.delta(&assign, r, to);
            if metropolis_accept(d, t, draw) {
                state.apply(&mut assign, r, to);
                current += d;
                if current < best_energy - 1e-9 {
                    best_energy = current;
                    best.copy_from_slice(&assign);
                }
            }
        }
        t *= schedule.alpha;
    }

    // guard against float drift in the running total
    if dense_energy(graph, &best, num_workers, spec) > initial_energy {
        return Ok(start);
    }
    graph.to_partition(&best, num_workers)
}
