//! Worker-to-hub frames for the socket transport.
//!
//! Every frame is `u32 length, u8 opcode, payload` (little-endian).
//!
//! | opcode | direction | payload |
//! |---|---|---|
//! | `HORIZON_PROPOSE` | worker → hub | `next_time u64` |
//! | `HORIZON_COMMIT` | hub → worker | `global_min u64` |
//! | `EVENT_BATCH` | both | `peer u32, count u32, events` |
//! | `DONE` | worker → hub | empty |
//! | `HELLO` | worker → hub | `worker u32, num_workers u32` |
//! | `BARRIER` | both | empty |
//!
//! In an `EVENT_BATCH` the peer is the destination when a worker sends and
//! the origin when the hub forwards. An event is `time u64, seq u64,
//! target u32, kind u8` followed by the kind-specific payload.

use crate::error::{Error, Result};
use crate::kernel::{ClassicalMessage, Event, EventKind, Payload, Photon, Seq, SiftEntry, Timer};
use crate::partition::WorkerId;
use crate::time::SimTime;
use crate::wire::{Decoder, Encoder};

pub const HORIZON_PROPOSE: u8 = 1;
pub const HORIZON_COMMIT: u8 = 2;
pub const EVENT_BATCH: u8 = 3;
pub const DONE: u8 = 4;
pub const HELLO: u8 = 5;
pub const BARRIER: u8 = 6;

const MSG_SIFT: u8 = 0;
const MSG_SESSION_END: u8 = 1;
const TIMER_EMIT: u8 = 0;

pub fn encode_event(enc: &mut Encoder, e: &Event) {
    enc.u64(e.time.ps())
        .u64(e.seq.0)
        .u32(e.target)
        .u8(e.payload.kind() as u8);
    match &e.payload {
        Payload::PhotonArrival(p) => {
            enc.u32(p.session)
                .u16(p.hop)
                .u64(p.index)
                .u64(p.emitted.ps())
                .u8(u8::from(p.survived))
                .u8(p.sender_basis)
                .u8(p.receiver_basis);
        }
        Payload::ClassicalMessage(ClassicalMessage::Sift {
            session,
            hop,
            entries,
        }) => {
            enc.u8(MSG_SIFT).u32(*session).u16(*hop).u32(entries.len() as u32);
            for s in entries {
                enc.u64(s.photon).u8(s.basis);
            }
        }
        Payload::ClassicalMessage(ClassicalMessage::SessionEnd { session, hop }) => {
            enc.u8(MSG_SESSION_END).u32(*session).u16(*hop);
        }
        Payload::ProtocolTimer(Timer::Emit { session, photon }) => {
            enc.u8(TIMER_EMIT).u32(*session).u64(*photon);
        }
    }
}

pub fn decode_event(dec: &mut Decoder<'_>) -> Result<Event> {
    let time = SimTime(dec.u64()?);
    let seq = Seq(dec.u64()?);
    let target = dec.u32()?;
    let kind = dec.u8()?;
    let payload = match EventKind::from_u8(kind) {
        Some(EventKind::PhotonArrival) => Payload::PhotonArrival(Photon {
            session: dec.u32()?,
            hop: dec.u16()?,
            index: dec.u64()?,
            emitted: SimTime(dec.u64()?),
            survived: dec.u8()? != 0,
            sender_basis: dec.u8()?,
            receiver_basis: dec.u8()?,
        }),
        Some(EventKind::ClassicalMessage) => match dec.u8()? {
            MSG_SIFT => {
                let session = dec.u32()?;
                let hop = dec.u16()?;
                let n = dec.u32()?;
                let entries = (0..n)
                    .map(|_| {
                        Ok(SiftEntry {
                            photon: dec.u64()?,
                            basis: dec.u8()?,
                        })
                    })
                    .collect::<Result<_>>()?;
                Payload::ClassicalMessage(ClassicalMessage::Sift {
                    session,
                    hop,
                    entries,
                })
            }
            MSG_SESSION_END => Payload::ClassicalMessage(ClassicalMessage::SessionEnd {
                session: dec.u32()?,
                hop: dec.u16()?,
            }),
            m => return Err(Error::Protocol(format!("unknown classical message {m}"))),
        },
        Some(EventKind::ProtocolTimer) => match dec.u8()? {
            TIMER_EMIT => Payload::ProtocolTimer(Timer::Emit {
                session: dec.u32()?,
                photon: dec.u64()?,
            }),
            t => return Err(Error::Protocol(format!("unknown timer {t}"))),
        },
        None => return Err(Error::Protocol(format!("unknown event kind {kind}"))),
    };
    Ok(Event {
        time,
        seq,
        target,
        payload,
    })
}

pub fn encode_batch(peer: WorkerId, events: &[Event]) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.u32(peer).u32(events.len() as u32);
    for e in events {
        encode_event(&mut enc, e);
    }
    enc.into_bytes()
}

pub fn decode_batch(payload: &[u8]) -> Result<(WorkerId, Vec<Event>)> {
    let mut dec = Decoder::new(payload);
    let peer = dec.u32()?;
    let n = dec.u32()?;
    let events = (0..n).map(|_| decode_event(&mut dec)).collect::<Result<_>>()?;
    dec.finish()?;
    Ok((peer, events))
}

/// Peer id at the front of an `EVENT_BATCH` payload.
pub fn batch_peer(payload: &[u8]) -> Result<WorkerId> {
    Decoder::new(payload).u32()
}

/// Same payload with the peer id replaced.
pub fn readdress(payload: &[u8], peer: WorkerId) -> Result<Vec<u8>> {
    if payload.len() < 4 {
        return Err(Error::Protocol("short event batch".into()));
    }
    let mut out = payload.to_vec();
    out[..4].copy_from_slice(&peer.to_le_bytes());
    Ok(out)
}

pub fn encode_time(t: SimTime) -> Vec<u8> {
    t.ps().to_le_bytes().to_vec()
}

pub fn decode_time(payload: &[u8]) -> Result<SimTime> {
    let mut dec = Decoder::new(payload);
    let t = SimTime(dec.u64()?);
    dec.finish()?;
    Ok(t)
}
