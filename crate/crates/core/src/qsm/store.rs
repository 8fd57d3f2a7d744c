use std::collections::BTreeMap;

use num_complex::Complex64;

use crate::error::QsmError;
use crate::qsm::state::{MemoryKey, QuantumState};

/// A request against a quantum state manager.
#[derive(Clone, Debug, PartialEq)]
pub enum QsmRequest {
    /// Replace whatever the keys hold with one joint state.
    Set {
        keys: Vec<MemoryKey>,
        amplitudes: Vec<Complex64>,
    },
    /// Read the state(s) holding the keys.
    Get { keys: Vec<MemoryKey> },
    /// Measure one key; `draw` in `[0, 1)` comes from the caller's generator.
    Measure { key: MemoryKey, draw: f64 },
    /// Drop every state that holds any of the keys.
    Remove { keys: Vec<MemoryKey> },
}

impl QsmRequest {
    /// All keys the request touches.
    pub fn keys(&self) -> &[MemoryKey] {
        match self {
            QsmRequest::Set { keys, .. }
            | QsmRequest::Get { keys }
            | QsmRequest::Remove { keys } => keys,
            QsmRequest::Measure { key, .. } => std::slice::from_ref(key),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum QsmResponse {
    Ack,
    Outcome(u8),
    States(Vec<QuantumState>),
    Error(QsmError),
}

/// Key-value store mapping memory keys to shared quantum states.
///
/// Every key maps to at most one state; a multi-key state is shared by all of
/// its keys.
#[derive(Clone, Debug, Default)]
pub struct QsmStore {
    index: BTreeMap<MemoryKey, u64>,
    states: BTreeMap<u64, QuantumState>,
    next_id: u64,
}

impl QsmStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn contains(&self, key: MemoryKey) -> bool {
        self.index.contains_key(&key)
    }

    pub fn keys(&self) -> impl Iterator<Item = MemoryKey> + '_ {
        self.index.keys().copied()
    }

    pub fn state_of(&self, key: MemoryKey) -> Option<&QuantumState> {
        self.index.get(&key).map(|id| &self.states[id])
    }

    pub fn apply(&mut self, request: &QsmRequest) -> QsmResponse {
        let result = match request {
            QsmRequest::Set { keys, amplitudes } => self
                .set(keys.clone(), amplitudes.clone())
                .map(|_| QsmResponse::Ack),
            QsmRequest::Get { keys } => self.get(keys).map(QsmResponse::States),
            QsmRequest::Measure { key, draw } => self.measure(*key, *draw).map(QsmResponse::Outcome),
            QsmRequest::Remove { keys } => self.remove(keys).map(|_| QsmResponse::Ack),
        };
        result.unwrap_or_else(QsmResponse::Error)
    }

    pub fn set(
        &mut self,
        keys: Vec<MemoryKey>,
        amplitudes: Vec<Complex64>,
    ) -> Result<(), QsmError> {
        let state = QuantumState::new(keys, amplitudes)?;
        // every state we overwrite must be covered entirely
        let mut doomed = Vec::new();
        for key in state.keys() {
            if let Some(&id) = self.index.get(key) {
                if !doomed.contains(&id) {
                    let covered = self.states[&id]
                        .keys()
                        .iter()
                        .all(|k| state.keys().binary_search(k).is_ok());
                    if !covered {
                        return Err(QsmError::PartialOverwrite);
                    }
                    doomed.push(id);
                }
            }
        }
        for id in doomed {
            self.drop_state(id);
        }
        self.insert(state);
        Ok(())
    }

    /// Insert a state whose keys are not currently stored.
    pub fn insert(&mut self, state: QuantumState) {
        let id = self.next_id;
        self.next_id += 1;
        for key in state.keys() {
            let prev = self.index.insert(*key, id);
            debug_assert!(prev.is_none(), "key {key} already stored");
        }
        self.states.insert(id, state);
    }

    fn drop_state(&mut self, id: u64) -> QuantumState {
        let state = self.states.remove(&id).expect("indexed state exists");
        for key in state.keys() {
            self.index.remove(key);
        }
        state
    }

    pub fn get(&self, keys: &[MemoryKey]) -> Result<Vec<QuantumState>, QsmError> {
        if keys.is_empty() {
            return Err(QsmError::Malformed);
        }
        let mut ids: Vec<u64> = Vec::new();
        for key in keys {
            let id = *self.index.get(key).ok_or(QsmError::KeyNotFound(*key))?;
            if !ids.contains(&id) {
                ids.push(id);
            }
        }
        Ok(ids.iter().map(|id| self.states[id].clone()).collect())
    }

    pub fn measure(&mut self, key: MemoryKey, draw: f64) -> Result<u8, QsmError> {
        let id = *self.index.get(&key).ok_or(QsmError::KeyNotFound(key))?;
        let (outcome, rest) = self.states[&id].measure(key, draw)?;
        self.drop_state(id);
        if let Some(rest) = rest {
            self.insert(rest);
        }
        Ok(outcome)
    }

    pub fn remove(&mut self, keys: &[MemoryKey]) -> Result<Vec<QuantumState>, QsmError> {
        if keys.is_empty() {
            return Err(QsmError::Malformed);
        }
        let mut ids = Vec::new();
        for key in keys {
            let id = *self.index.get(key).ok_or(QsmError::KeyNotFound(*key))?;
            if !ids.contains(&id) {
                ids.push(id);
            }
        }
        Ok(ids.into_iter().map(|id| self.drop_state(id)).collect())
    }

    /// Remove and return every state for which `pred` holds.
    pub fn extract_where(&mut self, mut pred: impl FnMut(&QuantumState) -> bool) -> Vec<QuantumState> {
        let ids: Vec<u64> = self
            .states
            .iter()
            .filter(|(_, s)| pred(s))
            .map(|(id, _)| *id)
            .collect();
        ids.into_iter().map(|id| self.drop_state(id)).collect()
    }

    /// States sorted by their smallest key; independent of insertion history.
    pub fn snapshot(&self) -> Vec<QuantumState> {
        let mut out: Vec<QuantumState> = self.states.values().cloned().collect();
        out.sort_by_key(|s| s.keys()[0]);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn bell() -> Vec<Complex64> {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        vec![c(h), c(0.0), c(0.0), c(h)]
    }

    #[test]
    fn set_then_get_single_key() {
        let mut s = QsmStore::new();
        s.set(vec![7], vec![c(1.0), c(0.0)]).unwrap();
        let got = s.get(&[7]).unwrap();
        assert_eq!(got, vec![QuantumState::basis(7, 0)]);
    }

    #[test]
    fn bell_pair_is_shared() {
        let mut s = QsmStore::new();
        s.set(vec![1, 2], bell()).unwrap();
        assert_eq!(s.get(&[1]).unwrap(), s.get(&[2]).unwrap());
        assert_eq!(s.get(&[1]).unwrap()[0].keys(), &[1, 2]);
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn unnormalized_set_is_rejected() {
        let mut s = QsmStore::new();
        assert_eq!(
            s.set(vec![1], vec![c(0.6), c(0.8001)]),
            Err(QsmError::NotNormalized)
        );
        assert!(s.is_empty());
    }

    #[test]
    fn partial_overwrite_is_rejected() {
        let mut s = QsmStore::new();
        s.set(vec![1, 2], bell()).unwrap();
        assert_eq!(
            s.set(vec![2, 3], bell()),
            Err(QsmError::PartialOverwrite)
        );
        // covering overwrite is fine
        s.set(vec![1, 2, 3], {
            let mut v = vec![c(0.0); 8];
            v[7] = c(1.0);
            v
        })
        .unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.state_of(3).unwrap().keys(), &[1, 2, 3]);
    }

    #[test]
    fn measure_collapses_partner() {
        let mut s = QsmStore::new();
        s.set(vec![1, 2], bell()).unwrap();
        assert_eq!(s.measure(1, 0.3), Ok(0));
        assert!(!s.contains(1));
        assert_eq!(s.get(&[2]).unwrap(), vec![QuantumState::basis(2, 0)]);
        assert_eq!(s.measure(2, 0.99), Ok(0));
        assert!(s.is_empty());
    }

    #[test]
    fn missing_keys_report_not_found() {
        let mut s = QsmStore::new();
        assert_eq!(s.measure(4, 0.1), Err(QsmError::KeyNotFound(4)));
        assert_eq!(s.remove(&[4]), Err(QsmError::KeyNotFound(4)));
        assert_eq!(
            s.apply(&QsmRequest::Get { keys: vec![4] }),
            QsmResponse::Error(QsmError::KeyNotFound(4))
        );
    }

    #[test]
    fn remove_drops_whole_state() {
        let mut s = QsmStore::new();
        s.set(vec![1, 2], bell()).unwrap();
        s.set(vec![5], vec![c(0.0), c(1.0)]).unwrap();
        let removed = s.remove(&[2]).unwrap();
        assert_eq!(removed[0].keys(), &[1, 2]);
        assert!(!s.contains(1));
        assert!(s.contains(5));
    }

    #[test]
    fn extract_where_moves_states_out() {
        let mut s = QsmStore::new();
        s.set(vec![1, 2], bell()).unwrap();
        s.set(vec![10], vec![c(1.0), c(0.0)]).unwrap();
        let out = s.extract_where(|st| st.keys()[0] >= 10);
        assert_eq!(out.len(), 1);
        assert_eq!(s.keys().collect::<Vec<_>>(), vec![1, 2]);
    }
}
