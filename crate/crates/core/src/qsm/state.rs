use num_complex::Complex64;

use crate::error::QsmError;

/// Identifier of one qubit memory slot.
pub type MemoryKey = u64;

/// Largest number of qubits a single stored state may span.
pub const MAX_QUBITS: usize = 10;

/// Allowed deviation of `Σ|a|²` from one.
pub const NORM_TOLERANCE: f64 = 1e-9;

/// Dense state vector over an ordered set of memory keys.
///
/// `keys` is strictly increasing. Amplitude index bits follow key order with
/// the first key as the most significant bit, so on keys `[a, b]` index 1 is
/// `|a=0, b=1⟩`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantumState {
    keys: Vec<MemoryKey>,
    amplitudes: Vec<Complex64>,
}

impl QuantumState {
    /// Build a state from keys in any order; amplitudes are indexed with the
    /// given key order and are permuted into canonical (sorted) order.
    pub fn new(keys: Vec<MemoryKey>, amplitudes: Vec<Complex64>) -> Result<Self, QsmError> {
        let n = keys.len();
        if n == 0 {
            return Err(QsmError::Malformed);
        }
        if n > MAX_QUBITS {
            return Err(QsmError::StateTooLarge);
        }
        if amplitudes.len() != 1 << n {
            return Err(QsmError::Malformed);
        }
        if amplitudes.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(QsmError::Malformed);
        }
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(QsmError::NotNormalized);
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| keys[i]);
        if order.windows(2).any(|w| keys[w[0]] == keys[w[1]]) {
            return Err(QsmError::Malformed);
        }
        if order.iter().enumerate().all(|(i, &o)| i == o) {
            return Ok(QuantumState { keys, amplitudes });
        }

        let sorted: Vec<MemoryKey> = order.iter().map(|&i| keys[i]).collect();
        let mut permuted = vec![Complex64::new(0.0, 0.0); amplitudes.len()];
        for (new_idx, slot) in permuted.iter_mut().enumerate() {
            // bit for sorted position p sits at original position order[p]
            let mut old_idx = 0usize;
            for (p, &orig) in order.iter().enumerate() {
                if new_idx >> (n - 1 - p) & 1 == 1 {
                    old_idx |= 1 << (n - 1 - orig);
                }
            }
            *slot = amplitudes[old_idx];
        }
        Ok(QuantumState {
            keys: sorted,
            amplitudes: permuted,
        })
    }

    /// `|0⟩` or `|1⟩` on a single key.
    pub fn basis(key: MemoryKey, bit: u8) -> Self {
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        let amplitudes = if bit == 0 { vec![one, zero] } else { vec![zero, one] };
        QuantumState {
            keys: vec![key],
            amplitudes,
        }
    }

    /// `(|00⟩ + |11⟩)/√2` on two keys.
    pub fn bell_pair(a: MemoryKey, b: MemoryKey) -> Self {
        let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let z = Complex64::new(0.0, 0.0);
        QuantumState::new(vec![a, b], vec![h, z, z, h]).expect("bell pair is valid")
    }

    pub fn keys(&self) -> &[MemoryKey] {
        &self.keys
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn num_qubits(&self) -> usize {
        self.keys.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    fn position(&self, key: MemoryKey) -> Option<usize> {
        self.keys.binary_search(&key).ok()
    }

    /// Probability that measuring `key` yields 0.
    pub fn prob_zero(&self, key: MemoryKey) -> Option<f64> {
        let p = self.position(key)?;
        let mask = 1usize << (self.keys.len() - 1 - p);
        Some(
            self.amplitudes
                .iter()
                .enumerate()
                .filter(|(i, _)| i & mask == 0)
                .map(|(_, a)| a.norm_sqr())
                .sum(),
        )
    }

    /// Projective measurement of `key` in the computational basis.
    ///
    /// The outcome is 0 iff `draw < P(0)`. Returns the outcome and the
    /// renormalized state on the remaining keys (`None` when `key` was the
    /// last one).
    pub fn measure(
        &self,
        key: MemoryKey,
        draw: f64,
    ) -> Result<(u8, Option<QuantumState>), QsmError> {
        if !(0.0..1.0).contains(&draw) {
            return Err(QsmError::Malformed);
        }
        let n = self.keys.len();
        let p = self.position(key).ok_or(QsmError::KeyNotFound(key))?;
        let shift = n - 1 - p;
        let mask = 1usize << shift;
        let p0: f64 = self
            .amplitudes
            .iter()
            .enumerate()
            .filter(|(i, _)| i & mask == 0)
            .map(|(_, a)| a.norm_sqr())
            .sum();
        let total = self.norm_sqr();
        let p1 = total - p0;
        let mut outcome = if draw < p0 { 0u8 } else { 1u8 };
        // rounding can leave a branch with zero weight
        if outcome == 1 && p1 <= 0.0 {
            outcome = 0;
        } else if outcome == 0 && p0 <= 0.0 {
            outcome = 1;
        }
        if n == 1 {
            return Ok((outcome, None));
        }

        let weight = if outcome == 0 { p0 } else { p1 };
        let scale = 1.0 / weight.sqrt();
        let low = mask - 1;
        let mut remaining = vec![Complex64::new(0.0, 0.0); 1 << (n - 1)];
        for (i, a) in self.amplitudes.iter().enumerate() {
            if ((i >> shift) & 1) as u8 == outcome {
                let j = ((i >> (shift + 1)) << shift) | (i & low);
                remaining[j] = a * scale;
            }
        }
        let mut keys = self.keys.clone();
        keys.remove(p);
        Ok((
            outcome,
            Some(QuantumState {
                keys,
                amplitudes: remaining,
            }),
        ))
    }
}
