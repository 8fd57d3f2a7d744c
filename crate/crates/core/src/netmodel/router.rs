use std::collections::BTreeMap;
use std::hint::black_box;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{
    ClassicalMessage, Context, EntityId, Entity, Event, EventKind, Payload, Photon, SiftEntry,
    Timeline, Timer,
};
use crate::netmodel::keys;
use crate::netmodel::topology::{link_key, Topology};
use crate::qsm::{QsmClient, QsmRequest, QsmResponse, QuantumState, ReplyToken};
use crate::rng;
use crate::sync::EpochFlush;
use crate::time::SimTime;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelOptions {
    /// Sift entries a receiver collects before sending them upstream.
    pub sift_batch: usize,
    /// Synthetic work per executed event, in arithmetic loop iterations.
    pub busy_work: u32,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            sift_batch: 16,
            busy_work: 0,
        }
    }
}

#[derive(Clone, Debug)]
struct Hop {
    up: EntityId,
    down: EntityId,
    qdelay: SimTime,
    cdelay: SimTime,
    survival: f64,
}

#[derive(Clone, Debug)]
struct SessionPlan {
    period: SimTime,
    start: SimTime,
    target_key_bits: u64,
    max_photons: u64,
    hops: Vec<Hop>,
}

/// Immutable model tables shared by every router of a run.
#[derive(Debug)]
pub struct NetModel {
    seed: u64,
    options: ModelOptions,
    sessions: BTreeMap<u32, SessionPlan>,
}

impl NetModel {
    pub fn new(topo: &Topology, options: ModelOptions) -> Result<Arc<Self>> {
        topo.validate()?;
        if options.sift_batch == 0 {
            return Err(Error::InvalidParameter("sift batch must be positive".into()));
        }
        let qlinks: BTreeMap<_, _> = topo
            .qconnections
            .iter()
            .map(|c| (link_key(c.src, c.dst), c))
            .collect();
        let clinks: BTreeMap<_, _> = topo
            .cconnections
            .iter()
            .map(|c| (link_key(c.src, c.dst), c.delay_ps))
            .collect();
        let sessions = topo
            .sessions
            .iter()
            .map(|s| {
                let hops = s
                    .path
                    .windows(2)
                    .map(|w| {
                        let k = link_key(w[0], w[1]);
                        let q = qlinks[&k];
                        Hop {
                            up: w[0],
                            down: w[1],
                            qdelay: q.delay_ps,
                            cdelay: clinks[&k],
                            survival: q.survival_probability(),
                        }
                    })
                    .collect();
                let plan = SessionPlan {
                    period: s.period_ps,
                    start: s.start_ps,
                    target_key_bits: s.target_key_bits,
                    max_photons: s.max_photons,
                    hops,
                };
                (s.id, plan)
            })
            .collect();
        Ok(Arc::new(NetModel {
            seed: topo.seed,
            options,
            sessions,
        }))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn options(&self) -> &ModelOptions {
        &self.options
    }

    fn plan(&self, session: u32) -> Result<&SessionPlan> {
        self.sessions.get(&session).ok_or(Error::UnknownSession(session))
    }

    fn hop(&self, session: u32, hop: u16) -> Result<&Hop> {
        self.plan(session)?
            .hops
            .get(usize::from(hop))
            .ok_or(Error::UnknownSession(session))
    }

    fn draws(&self, session: u32, hop: u16, photon: u64) -> Result<PhotonDraws> {
        let h = self.hop(session, hop)?;
        Ok(PhotonDraws::new(self.seed, session, hop, photon, h.survival))
    }

    /// A fresh router with its per-session roles.
    pub fn router(&self, id: EntityId) -> Router {
        let mut roles: BTreeMap<u32, Role> = BTreeMap::new();
        for (sid, plan) in &self.sessions {
            for (h, hop) in plan.hops.iter().enumerate() {
                let h = h as u16;
                if hop.up == id {
                    roles.entry(*sid).or_default().tx = Some(TxSide {
                        hop: h,
                        ..Default::default()
                    });
                }
                if hop.down == id {
                    roles.entry(*sid).or_default().rx = Some(RxSide {
                        hop: h,
                        ..Default::default()
                    });
                }
            }
        }
        Router { id, roles }
    }
}

/// Every random decision about one photon on one hop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhotonDraws {
    pub survived: bool,
    pub sender_basis: u8,
    pub receiver_basis: u8,
    pub receiver_draw: f64,
    pub sender_draw: f64,
}

impl PhotonDraws {
    pub fn new(seed: u64, session: u32, hop: u16, photon: u64, survival: f64) -> Self {
        let mut r = rng::photon_stream(seed, session, hop, photon);
        PhotonDraws {
            survived: r.gen::<f64>() < survival,
            sender_basis: r.gen_range(0..2),
            receiver_basis: r.gen_range(0..2),
            receiver_draw: r.gen(),
            sender_draw: r.gen(),
        }
    }
}

/// Executed-event counts by kind.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Census {
    pub photon_arrival: u64,
    pub classical_message: u64,
    pub protocol_timer: u64,
}

impl Census {
    pub fn record(&mut self, kind: EventKind) {
        match kind {
            EventKind::PhotonArrival => self.photon_arrival += 1,
            EventKind::ClassicalMessage => self.classical_message += 1,
            EventKind::ProtocolTimer => self.protocol_timer += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.photon_arrival + self.classical_message + self.protocol_timer
    }

    pub fn quantum(&self) -> u64 {
        self.photon_arrival
    }

    pub fn merge(&mut self, other: &Census) {
        self.photon_arrival += other.photon_arrival;
        self.classical_message += other.classical_message;
        self.protocol_timer += other.protocol_timer;
    }
}

/// Per-timeline services the routers share.
pub struct NetServices {
    pub qsm: QsmClient,
    pub model: Arc<NetModel>,
    pub census: Census,
}

impl NetServices {
    pub fn new(qsm: QsmClient, model: Arc<NetModel>) -> Self {
        NetServices {
            qsm,
            model,
            census: Census::default(),
        }
    }
}

#[derive(Clone, Debug, Default)]
struct TxSide {
    hop: u16,
    sent: u64,
    sifted: u64,
    stopped: bool,
    key: BTreeMap<u64, u8>,
}

#[derive(Clone, Debug, Default)]
struct RxSide {
    hop: u16,
    arrived: u64,
    detected: u64,
    sifted: u64,
    ended: bool,
    pending: Vec<SiftEntry>,
    key: BTreeMap<u64, u8>,
}

#[derive(Clone, Debug, Default)]
struct Role {
    tx: Option<TxSide>,
    rx: Option<RxSide>,
}

/// One router's half of a hop's key at the end of a run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HopKey {
    pub session: u32,
    pub hop: u16,
    pub side: u8,
    pub router: EntityId,
    /// Photons sent (sender side) or arrived (receiver side).
    pub photons: u64,
    /// Photons whose bases matched.
    pub sifted: u64,
    /// `(photon, bit)` in photon order.
    pub bits: Vec<(u64, u8)>,
}

/// End-of-run view of one session across all its hops.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session: u32,
    pub hops: u16,
    pub photons_emitted: u64,
    /// Key relayed end to end: the shortest hop key.
    pub delivered_bits: u64,
    /// Both ends of every hop hold identical keys.
    pub symmetric: bool,
}

impl SessionSummary {
    pub fn collect(keys: &[HopKey]) -> Vec<SessionSummary> {
        let mut by_hop: BTreeMap<(u32, u16), [Option<&HopKey>; 2]> = BTreeMap::new();
        for k in keys {
            by_hop.entry((k.session, k.hop)).or_default()[usize::from(k.side & 1)] = Some(k);
        }
        let mut out: BTreeMap<u32, SessionSummary> = BTreeMap::new();
        for ((session, hop), [tx, rx]) in by_hop {
            let s = out.entry(session).or_insert(SessionSummary {
                session,
                hops: 0,
                photons_emitted: 0,
                delivered_bits: u64::MAX,
                symmetric: true,
            });
            s.hops += 1;
            if hop == 0 {
                s.photons_emitted = tx.map_or(0, |t| t.photons);
            }
            let (a, b) = (tx.map(|t| &t.bits), rx.map(|r| &r.bits));
            s.symmetric &= a.is_some() && a == b;
            let bits = a.map_or(0, |v| v.len()).min(b.map_or(0, |v| v.len()));
            s.delivered_bits = s.delivered_bits.min(bits as u64);
        }
        out.into_values().collect()
    }
}

fn burn(units: u32) {
    let mut x = 0x2545_f491_4f6c_dd1du64;
    for i in 0..units {
        x = black_box(x.wrapping_mul(6_364_136_223_846_793_005).wrapping_add(u64::from(i)));
    }
    black_box(x);
}

/// A network node running its side of every session that passes through it.
#[derive(Clone, Debug)]
pub struct Router {
    id: EntityId,
    roles: BTreeMap<u32, Role>,
}

type Ctx<'a, 'b> = &'a mut Context<'b, NetServices>;

impl Router {
    pub fn id(&self) -> EntityId {
        self.id
    }

    pub fn hop_keys(&self) -> Vec<HopKey> {
        let mut out = Vec::new();
        for (session, role) in &self.roles {
            if let Some(tx) = &role.tx {
                out.push(HopKey {
                    session: *session,
                    hop: tx.hop,
                    side: keys::SENDER,
                    router: self.id,
                    photons: tx.sent,
                    sifted: tx.sifted,
                    bits: tx.key.iter().map(|(p, b)| (*p, *b)).collect(),
                });
            }
            if let Some(rx) = &role.rx {
                out.push(HopKey {
                    session: *session,
                    hop: rx.hop,
                    side: keys::RECEIVER,
                    router: self.id,
                    photons: rx.arrived,
                    sifted: rx.sifted,
                    bits: rx.key.iter().map(|(p, b)| (*p, *b)).collect(),
                });
            }
        }
        out
    }

    /// Deliver a QSM response. Never schedules events, so it is safe to call
    /// between epochs.
    pub fn on_qsm_reply(&mut self, key: u64, response: QsmResponse, model: &NetModel) -> Result<()> {
        match response {
            QsmResponse::Ack | QsmResponse::States(_) => Ok(()),
            QsmResponse::Error(e) => Err(Error::Qsm(e)),
            QsmResponse::Outcome(bit) => {
                let session = keys::session(key);
                let photon = keys::photon(key);
                let role = self
                    .roles
                    .get_mut(&session)
                    .ok_or(Error::UnknownSession(session))?;
                if keys::side(key) == keys::SENDER {
                    let tx = role.tx.as_mut().ok_or(Error::UnknownSession(session))?;
                    tx.key.insert(photon, bit);
                } else {
                    let rx = role.rx.as_mut().ok_or(Error::UnknownSession(session))?;
                    let d = model.draws(session, rx.hop, photon)?;
                    if d.sender_basis == d.receiver_basis {
                        rx.key.insert(photon, bit);
                    }
                }
                Ok(())
            }
        }
    }

    fn submit(&mut self, ctx: Ctx<'_, '_>, request: QsmRequest, key: u64) -> Result<()> {
        let token = ReplyToken {
            entity: self.id,
            tag: key,
        };
        if let Some(resp) = ctx.services.qsm.submit(request, token) {
            let model = Arc::clone(&ctx.services.model);
            self.on_qsm_reply(key, resp, &model)?;
        }
        Ok(())
    }

    /// Send photon `photon` across `hop` of `session`.
    fn transmit(&self, ctx: Ctx<'_, '_>, model: &NetModel, session: u32, hop: u16, photon: u64) -> Result<()> {
        let h = model.hop(session, hop)?;
        let d = PhotonDraws::new(model.seed, session, hop, photon, h.survival);
        let now = ctx.now();
        ctx.schedule(
            now + h.qdelay,
            h.down,
            Payload::PhotonArrival(Photon {
                session,
                hop,
                index: photon,
                emitted: now,
                survived: d.survived,
                sender_basis: d.sender_basis,
                receiver_basis: d.receiver_basis,
            }),
        )?;
        Ok(())
    }

    fn emit(&mut self, ctx: Ctx<'_, '_>, model: &NetModel, session: u32, photon: u64) -> Result<()> {
        let plan = model.plan(session)?;
        self.transmit(ctx, model, session, 0, photon)?;
        let tx = self
            .roles
            .get_mut(&session)
            .and_then(|r| r.tx.as_mut())
            .filter(|t| t.hop == 0)
            .ok_or(Error::UnknownSession(session))?;
        tx.sent += 1;
        let now = ctx.now();
        if tx.sifted >= plan.target_key_bits || photon + 1 >= plan.max_photons {
            tx.stopped = true;
            let h = &plan.hops[0];
            ctx.schedule(
                now + h.cdelay,
                h.down,
                Payload::ClassicalMessage(ClassicalMessage::SessionEnd { session, hop: 0 }),
            )?;
        } else {
            ctx.schedule(
                now + plan.period,
                self.id,
                Payload::ProtocolTimer(Timer::Emit {
                    session,
                    photon: photon + 1,
                }),
            )?;
        }
        Ok(())
    }

    fn send_sift(&mut self, ctx: Ctx<'_, '_>, model: &NetModel, session: u32) -> Result<()> {
        let rx = self
            .roles
            .get_mut(&session)
            .and_then(|r| r.rx.as_mut())
            .ok_or(Error::UnknownSession(session))?;
        if rx.pending.is_empty() {
            return Ok(());
        }
        let entries = std::mem::take(&mut rx.pending);
        let hop = rx.hop;
        let h = model.hop(session, hop)?;
        ctx.schedule(
            ctx.now() + h.cdelay,
            h.up,
            Payload::ClassicalMessage(ClassicalMessage::Sift {
                session,
                hop,
                entries,
            }),
        )?;
        Ok(())
    }

    /// Receiver side of a hop: bookkeeping for a detected photon, then relay.
    fn handle_photon(&mut self, ctx: Ctx<'_, '_>, model: &NetModel, ph: &Photon) -> Result<()> {
        let role = self
            .roles
            .get_mut(&ph.session)
            .ok_or(Error::UnknownSession(ph.session))?;
        let rx = role
            .rx
            .as_mut()
            .filter(|r| r.hop == ph.hop)
            .ok_or(Error::UnknownSession(ph.session))?;
        let h = model.hop(ph.session, ph.hop)?;
        if ctx.now() != ph.emitted + h.qdelay {
            return Err(Error::Protocol(format!(
                "photon {} of session {} arrived at {} but left at {} over a {} link",
                ph.index,
                ph.session,
                ctx.now(),
                ph.emitted,
                h.qdelay
            )));
        }
        rx.arrived += 1;
        if !ph.survived {
            return Ok(());
        }
        rx.detected += 1;
        if ph.sender_basis == ph.receiver_basis {
            rx.sifted += 1;
        }
        rx.pending.push(SiftEntry {
            photon: ph.index,
            basis: ph.receiver_basis,
        });
        let batch_full = rx.pending.len() >= model.options.sift_batch;
        let relay = role.tx.as_ref().map(|t| t.hop);

        let k_up = keys::encode(h.up, ph.session, keys::SENDER, ph.index);
        let k_down = keys::encode(self.id, ph.session, keys::RECEIVER, ph.index);
        let pair = QuantumState::bell_pair(k_up, k_down);
        self.submit(
            ctx,
            QsmRequest::Set {
                keys: pair.keys().to_vec(),
                amplitudes: pair.amplitudes().to_vec(),
            },
            k_down,
        )?;
        let d = model.draws(ph.session, ph.hop, ph.index)?;
        self.submit(
            ctx,
            QsmRequest::Measure {
                key: k_down,
                draw: d.receiver_draw,
            },
            k_down,
        )?;

        if batch_full {
            self.send_sift(ctx, model, ph.session)?;
        }
        if let Some(next) = relay {
            self.transmit(ctx, model, ph.session, next, ph.index)?;
            if let Some(tx) = self.roles.get_mut(&ph.session).and_then(|r| r.tx.as_mut()) {
                tx.sent += 1;
            }
        }
        Ok(())
    }

    /// Sender side of a hop: keep matched photons, discard the rest.
    fn on_sift(&mut self, ctx: Ctx<'_, '_>, model: &NetModel, session: u32, hop: u16, entries: &[SiftEntry]) -> Result<()> {
        for e in entries {
            let d = model.draws(session, hop, e.photon)?;
            let key = keys::encode(self.id, session, keys::SENDER, e.photon);
            let tx = self
                .roles
                .get_mut(&session)
                .and_then(|r| r.tx.as_mut())
                .filter(|t| t.hop == hop)
                .ok_or(Error::UnknownSession(session))?;
            if e.basis == d.sender_basis {
                tx.sifted += 1;
                self.submit(ctx, QsmRequest::Measure { key, draw: d.sender_draw }, key)?;
            } else {
                self.submit(ctx, QsmRequest::Remove { keys: vec![key] }, key)?;
            }
        }
        Ok(())
    }

    fn on_session_end(&mut self, ctx: Ctx<'_, '_>, model: &NetModel, session: u32, hop: u16) -> Result<()> {
        let role = self
            .roles
            .get_mut(&session)
            .ok_or(Error::UnknownSession(session))?;
        let rx = role
            .rx
            .as_mut()
            .filter(|r| r.hop == hop)
            .ok_or(Error::UnknownSession(session))?;
        rx.ended = true;
        let next = role.tx.as_mut().map(|t| {
            t.stopped = true;
            t.hop
        });
        self.send_sift(ctx, model, session)?;
        if let Some(next) = next {
            let h = model.hop(session, next)?;
            ctx.schedule(
                ctx.now() + h.cdelay,
                h.down,
                Payload::ClassicalMessage(ClassicalMessage::SessionEnd { session, hop: next }),
            )?;
        }
        Ok(())
    }
}

impl Entity for Router {
    type Services = NetServices;

    fn init(&mut self, ctx: &mut Context<'_, NetServices>) -> Result<()> {
        let model = Arc::clone(&ctx.services.model);
        for (session, role) in &self.roles {
            if role.tx.as_ref().is_some_and(|t| t.hop == 0) {
                let plan = model.plan(*session)?;
                ctx.schedule(
                    plan.start,
                    self.id,
                    Payload::ProtocolTimer(Timer::Emit {
                        session: *session,
                        photon: 0,
                    }),
                )?;
            }
        }
        Ok(())
    }

    fn handle(&mut self, event: &Event, ctx: &mut Context<'_, NetServices>) -> Result<()> {
        ctx.services.census.record(event.payload.kind());
        let model = Arc::clone(&ctx.services.model);
        burn(model.options.busy_work);
        match &event.payload {
            Payload::ProtocolTimer(Timer::Emit { session, photon }) => {
                self.emit(ctx, &model, *session, *photon)
            }
            Payload::PhotonArrival(ph) => self.handle_photon(ctx, &model, ph),
            Payload::ClassicalMessage(ClassicalMessage::Sift {
                session,
                hop,
                entries,
            }) => self.on_sift(ctx, &model, *session, *hop, entries),
            Payload::ClassicalMessage(ClassicalMessage::SessionEnd { session, hop }) => {
                self.on_session_end(ctx, &model, *session, *hop)
            }
        }
    }
}

impl EpochFlush for Router {
    fn end_of_epoch(timeline: &mut Timeline<Self>, epoch_index: u64) -> Result<()> {
        let replies = timeline.services_mut().qsm.flush(epoch_index)?;
        if replies.is_empty() {
            return Ok(());
        }
        let model = Arc::clone(&timeline.services().model);
        for (token, response) in replies {
            timeline.with_entity(token.entity, |router, _| {
                router.on_qsm_reply(token.tag, response, &model)
            })??;
        }
        Ok(())
    }

    fn finish(timeline: &mut Timeline<Self>) -> Result<()> {
        timeline.services_mut().qsm.close()
    }
}
