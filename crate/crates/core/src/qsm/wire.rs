//! Global-QSM socket protocol.
//!
//! Opcodes: `BATCH` (worker → server), `BATCH_RESP` (server → worker) and
//! `SHUTDOWN` (worker → server, empty payload).
//!
//! `BATCH` payload: `epoch_index u64, worker u32, count u32`, then per
//! request `op u8, key_count u8, keys u64[], amp_count u32, (re f64, im f64)[]`
//! followed by `rng_draw f64` when `op = MEASURE`.
//!
//! `BATCH_RESP` payload: `epoch_index u64, worker u32, count u32`, then per
//! response a tag (`0` ack, `1` outcome + `u8`, `2` states + `u32` count +
//! states, `3` error + `u8` code + `u64` key), then `u32` migrated-state count
//! and states, then `u32` held-key count and `u64` keys. A state is encoded as
//! `key_count u8, keys u64[], amp_count u32, (re, im)[]`.

use num_complex::Complex64;

use crate::error::{Error, QsmError, Result};
use crate::qsm::global::{BatchResponse, RequestBatch};
use crate::qsm::state::QuantumState;
use crate::qsm::store::{QsmRequest, QsmResponse};
use crate::wire::{Decoder, Encoder};

pub const OP_BATCH: u8 = 1;
pub const OP_BATCH_RESP: u8 = 2;
pub const OP_SHUTDOWN: u8 = 3;

const REQ_SET: u8 = 0;
const REQ_GET: u8 = 1;
const REQ_MEASURE: u8 = 2;
const REQ_REMOVE: u8 = 3;

fn put_keys(enc: &mut Encoder, keys: &[u64]) -> Result<()> {
    let n = u8::try_from(keys.len()).map_err(|_| Error::Protocol("too many keys".into()))?;
    enc.u8(n);
    for k in keys {
        enc.u64(*k);
    }
    Ok(())
}

fn put_amps(enc: &mut Encoder, amps: &[Complex64]) {
    enc.u32(amps.len() as u32);
    for a in amps {
        enc.f64(a.re).f64(a.im);
    }
}

fn get_keys(dec: &mut Decoder<'_>) -> Result<Vec<u64>> {
    let n = dec.u8()?;
    (0..n).map(|_| dec.u64()).collect()
}

fn get_amps(dec: &mut Decoder<'_>) -> Result<Vec<Complex64>> {
    let n = dec.u32()? as usize;
    if n > 1 << 16 {
        return Err(Error::Protocol(format!("amplitude count {n}")));
    }
    (0..n)
        .map(|_| Ok(Complex64::new(dec.f64()?, dec.f64()?)))
        .collect()
}

fn put_state(enc: &mut Encoder, s: &QuantumState) -> Result<()> {
    put_keys(enc, s.keys())?;
    put_amps(enc, s.amplitudes());
    Ok(())
}

fn get_state(dec: &mut Decoder<'_>) -> Result<QuantumState> {
    let keys = get_keys(dec)?;
    let amps = get_amps(dec)?;
    QuantumState::new(keys, amps).map_err(|e| Error::Protocol(format!("bad state: {e}")))
}

pub fn encode_batch(batch: &RequestBatch) -> Result<Vec<u8>> {
    let mut enc = Encoder::new();
    enc.u64(batch.epoch_index)
        .u32(batch.worker)
        .u32(batch.requests.len() as u32);
    for req in &batch.requests {
        match req {
            QsmRequest::Set { keys, amplitudes } => {
                enc.u8(REQ_SET);
                put_keys(&mut enc, keys)?;
                put_amps(&mut enc, amplitudes);
            }
            QsmRequest::Get { keys } => {
                enc.u8(REQ_GET);
                put_keys(&mut enc, keys)?;
                put_amps(&mut enc, &[]);
            }
            QsmRequest::Measure { key, draw } => {
                enc.u8(REQ_MEASURE);
                put_keys(&mut enc, &[*key])?;
                put_amps(&mut enc, &[]);
                enc.f64(*draw);
            }
            QsmRequest::Remove { keys } => {
                enc.u8(REQ_REMOVE);
                put_keys(&mut enc, keys)?;
                put_amps(&mut enc, &[]);
            }
        }
    }
    Ok(enc.into_bytes())
}

pub fn decode_batch(payload: &[u8]) -> Result<RequestBatch> {
    let mut dec = Decoder::new(payload);
    let epoch_index = dec.u64()?;
    let worker = dec.u32()?;
    let count = dec.u32()?;
    let mut requests = Vec::with_capacity(count.min(1 << 16) as usize);
    for _ in 0..count {
        let op = dec.u8()?;
        let keys = get_keys(&mut dec)?;
        let amplitudes = get_amps(&mut dec)?;
        let req = match op {
            REQ_SET => QsmRequest::Set { keys, amplitudes },
            REQ_GET => QsmRequest::Get { keys },
            REQ_MEASURE => {
                let draw = dec.f64()?;
                let [key] = keys[..] else {
                    return Err(Error::Protocol("MEASURE needs exactly one key".into()));
                };
                QsmRequest::Measure { key, draw }
            }
            REQ_REMOVE => QsmRequest::Remove { keys },
            other => return Err(Error::Protocol(format!("unknown request op {other}"))),
        };
        requests.push(req);
    }
    dec.finish()?;
    Ok(RequestBatch {
        worker,
        epoch_index,
        requests,
    })
}

pub fn encode_response(resp: &BatchResponse) -> Result<Vec<u8>> {
    let mut enc = Encoder::new();
    enc.u64(resp.epoch_index)
        .u32(resp.worker)
        .u32(resp.responses.len() as u32);
    for r in &resp.responses {
        match r {
            QsmResponse::Ack => {
                enc.u8(0);
            }
            QsmResponse::Outcome(bit) => {
                enc.u8(1).u8(*bit);
            }
            QsmResponse::States(states) => {
                enc.u8(2).u32(states.len() as u32);
                for s in states {
                    put_state(&mut enc, s)?;
                }
            }
            QsmResponse::Error(e) => {
                enc.u8(3).u8(e.code()).u64(e.key());
            }
        }
    }
    enc.u32(resp.migrated.len() as u32);
    for s in &resp.migrated {
        put_state(&mut enc, s)?;
    }
    enc.u32(resp.held.len() as u32);
    for k in &resp.held {
        enc.u64(*k);
    }
    Ok(enc.into_bytes())
}

pub fn decode_response(payload: &[u8]) -> Result<BatchResponse> {
    let mut dec = Decoder::new(payload);
    let epoch_index = dec.u64()?;
    let worker = dec.u32()?;
    let count = dec.u32()?;
    let mut responses = Vec::with_capacity(count.min(1 << 16) as usize);
    for _ in 0..count {
        let r = match dec.u8()? {
            0 => QsmResponse::Ack,
            1 => QsmResponse::Outcome(dec.u8()?),
            2 => {
                let n = dec.u32()?;
                let states = (0..n).map(|_| get_state(&mut dec)).collect::<Result<_>>()?;
                QsmResponse::States(states)
            }
            3 => {
                let code = dec.u8()?;
                let key = dec.u64()?;
                let err = QsmError::from_code(code, key)
                    .ok_or_else(|| Error::Protocol(format!("unknown error code {code}")))?;
                QsmResponse::Error(err)
            }
            t => return Err(Error::Protocol(format!("unknown response tag {t}"))),
        };
        responses.push(r);
    }
    let n = dec.u32()?;
    let migrated = (0..n).map(|_| get_state(&mut dec)).collect::<Result<_>>()?;
    let n = dec.u32()?;
    let held = (0..n).map(|_| dec.u64()).collect::<Result<_>>()?;
    dec.finish()?;
    Ok(BatchResponse {
        worker,
        epoch_index,
        responses,
        migrated,
        held,
    })
}
