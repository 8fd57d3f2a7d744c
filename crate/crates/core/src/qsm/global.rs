use std::collections::BTreeMap;
use std::sync::Arc;

use crate::partition::WorkerId;
use crate::qsm::state::{MemoryKey, QuantumState};
use crate::qsm::store::{QsmRequest, QsmResponse, QsmStore};

/// Maps a memory key to the worker whose router owns it.
pub type KeyOwner = Arc<dyn Fn(MemoryKey) -> WorkerId + Send + Sync>;

/// Requests one worker accumulated for the global QSM during one epoch, in
/// the worker's program order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct RequestBatch {
    pub worker: WorkerId,
    pub epoch_index: u64,
    pub requests: Vec<QsmRequest>,
}

/// Global QSM answer to one [`RequestBatch`].
#[derive(Clone, Debug, PartialEq, Default)]
pub struct BatchResponse {
    pub worker: WorkerId,
    pub epoch_index: u64,
    /// One response per request, in request order.
    pub responses: Vec<QsmResponse>,
    /// States now confined to this worker, handed back to its local QSM.
    pub migrated: Vec<QuantumState>,
    /// This worker's keys that remain in the global store.
    pub held: Vec<MemoryKey>,
}

/// The single-threaded global quantum state manager.
///
/// Batches of a round are applied one after another in ascending
/// `(epoch_index, worker)` order. When a key owner map is configured, states
/// whose keys all belong to one worker afterwards are handed back to that
/// worker.
pub struct GlobalQsm {
    store: QsmStore,
    owner: Option<KeyOwner>,
    batches_served: u64,
    requests_served: u64,
}

impl GlobalQsm {
    pub fn new(owner: Option<KeyOwner>) -> Self {
        GlobalQsm {
            store: QsmStore::new(),
            owner,
            batches_served: 0,
            requests_served: 0,
        }
    }

    pub fn store(&self) -> &QsmStore {
        &self.store
    }

    pub fn batches_served(&self) -> u64 {
        self.batches_served
    }

    pub fn requests_served(&self) -> u64 {
        self.requests_served
    }

    /// Apply one batch in order, returning the matching responses.
    pub fn apply_batch(&mut self, batch: &RequestBatch) -> Vec<QsmResponse> {
        self.batches_served += 1;
        self.requests_served += batch.requests.len() as u64;
        batch.requests.iter().map(|r| self.store.apply(r)).collect()
    }

    /// Serve a full round of batches deterministically and compute hand-backs.
    pub fn serve_round(&mut self, mut batches: Vec<RequestBatch>) -> Vec<BatchResponse> {
        batches.sort_by_key(|b| (b.epoch_index, b.worker));
        let mut out: Vec<BatchResponse> = batches
            .iter()
            .map(|b| BatchResponse {
                worker: b.worker,
                epoch_index: b.epoch_index,
                responses: self.apply_batch(b),
                migrated: Vec::new(),
                held: Vec::new(),
            })
            .collect();

        let Some(owner) = self.owner.clone() else {
            return out;
        };
        let confined = |s: &QuantumState| {
            let w = owner(s.keys()[0]);
            s.keys().iter().all(|k| owner(*k) == w)
        };
        let mut handed: BTreeMap<WorkerId, Vec<QuantumState>> = BTreeMap::new();
        for state in self.store.extract_where(confined) {
            handed.entry(owner(state.keys()[0])).or_default().push(state);
        }
        let mut held: BTreeMap<WorkerId, Vec<MemoryKey>> = BTreeMap::new();
        for key in self.store.keys() {
            held.entry(owner(key)).or_default().push(key);
        }
        for resp in &mut out {
            resp.migrated = handed.remove(&resp.worker).unwrap_or_default();
            resp.held = held.remove(&resp.worker).unwrap_or_default();
        }
        // a worker absent from this round picks its states up later
        for (_, states) in handed {
            for s in states {
                self.store.insert(s);
            }
        }
        out
    }
}
