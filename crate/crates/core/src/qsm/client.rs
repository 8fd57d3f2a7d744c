use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::kernel::EntityId;
use crate::partition::WorkerId;
use crate::qsm::global::{KeyOwner, RequestBatch};
use crate::qsm::state::MemoryKey;
use crate::qsm::store::{QsmRequest, QsmResponse, QsmStore};
use crate::qsm::transport::GlobalQsmLink;

/// Identifies who gets a deferred response.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReplyToken {
    pub entity: EntityId,
    pub tag: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Route {
    Local,
    Global,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct QsmStats {
    pub local_requests: u64,
    pub global_requests: u64,
    pub flushes: u64,
}

/// One worker's view of the QSM hierarchy: its local store plus the batch of
/// requests waiting for the global QSM.
pub struct QsmClient {
    worker: WorkerId,
    owner: Option<KeyOwner>,
    local: QsmStore,
    /// Keys owned by this worker that currently live in the global store.
    global_keys: BTreeSet<MemoryKey>,
    batch: Vec<QsmRequest>,
    tokens: Vec<ReplyToken>,
    link: Option<Box<dyn GlobalQsmLink>>,
    stats: QsmStats,
}

impl QsmClient {
    /// Client for a single-worker run; everything is local.
    pub fn solo() -> Self {
        QsmClient {
            worker: 0,
            owner: None,
            local: QsmStore::new(),
            global_keys: BTreeSet::new(),
            batch: Vec::new(),
            tokens: Vec::new(),
            link: None,
            stats: QsmStats::default(),
        }
    }

    pub fn new(worker: WorkerId, owner: KeyOwner, link: Box<dyn GlobalQsmLink>) -> Self {
        QsmClient {
            worker,
            owner: Some(owner),
            link: Some(link),
            ..Self::solo()
        }
    }

    pub fn worker(&self) -> WorkerId {
        self.worker
    }

    pub fn local(&self) -> &QsmStore {
        &self.local
    }

    pub fn stats(&self) -> QsmStats {
        self.stats
    }

    pub fn pending(&self) -> usize {
        self.batch.len()
    }

    /// Local iff every key belongs to this worker and none of them is
    /// currently held by the global QSM.
    pub fn route(&self, request: &QsmRequest) -> Route {
        let Some(owner) = &self.owner else {
            return Route::Local;
        };
        let confined = request
            .keys()
            .iter()
            .all(|k| owner(*k) == self.worker && !self.global_keys.contains(k));
        if confined {
            Route::Local
        } else {
            Route::Global
        }
    }

    /// Execute locally right away (returning the response), or queue for the
    /// global QSM (returning `None`; the response comes back from `flush`).
    pub fn submit(&mut self, request: QsmRequest, token: ReplyToken) -> Option<QsmResponse> {
        match self.route(&request) {
            Route::Local => {
                self.stats.local_requests += 1;
                Some(self.local.apply(&request))
            }
            Route::Global => {
                self.stats.global_requests += 1;
                if let (Some(owner), QsmRequest::Set { keys, .. }) = (&self.owner, &request) {
                    for k in keys {
                        if owner(*k) == self.worker {
                            self.global_keys.insert(*k);
                        }
                    }
                }
                self.batch.push(request);
                self.tokens.push(token);
                None
            }
        }
    }

    /// Send this epoch's batch (possibly empty) and return the deferred
    /// responses paired with their tokens, in submission order.
    pub fn flush(&mut self, epoch_index: u64) -> Result<Vec<(ReplyToken, QsmResponse)>> {
        let Some(link) = self.link.as_mut() else {
            if !self.batch.is_empty() {
                return Err(Error::Transport("no global QSM configured".into()));
            }
            return Ok(Vec::new());
        };
        let batch = RequestBatch {
            worker: self.worker,
            epoch_index,
            requests: std::mem::take(&mut self.batch),
        };
        let sent = batch.requests.len();
        let resp = link.flush(batch)?;
        self.stats.flushes += 1;
        if resp.responses.len() != sent || resp.worker != self.worker {
            return Err(Error::Protocol(format!(
                "batch of {sent} got {} responses for worker {}",
                resp.responses.len(),
                resp.worker
            )));
        }
        for state in resp.migrated {
            self.local.insert(state);
        }
        self.global_keys = resp.held.into_iter().collect();
        let tokens = std::mem::take(&mut self.tokens);
        Ok(tokens.into_iter().zip(resp.responses).collect())
    }

    pub fn close(&mut self) -> Result<()> {
        match self.link.as_mut() {
            Some(link) => link.close(),
            None => Ok(()),
        }
    }
}
