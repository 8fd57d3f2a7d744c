use std::io::{BufReader, BufWriter};
use std::net::{Shutdown, TcpListener, TcpStream, ToSocketAddrs};

use log::debug;

use crate::error::{Error, Result};
use crate::partition::WorkerId;
use crate::sync::exchange::Exchange;
use crate::sync::wire;
use crate::sync::RemoteEventBatch;
use crate::time::SimTime;
use crate::wire::{read_frame, write_frame, Decoder, Encoder};

fn expect(op: u8, want: u8, what: &str) -> Result<()> {
    if op == want {
        Ok(())
    } else {
        Err(Error::Protocol(format!("expected {what}, got opcode {op}")))
    }
}

/// Worker side of the socket transport; every collective goes through a hub.
pub struct SocketExchange {
    worker: WorkerId,
    n: u32,
    stream: TcpStream,
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl SocketExchange {
    pub fn connect(addr: impl ToSocketAddrs, worker: WorkerId, num_workers: u32) -> Result<Self> {
        let stream = TcpStream::connect(addr)
            .map_err(|e| Error::Transport(format!("connect to hub: {e}")))?;
        stream.set_nodelay(true)?;
        let mut x = SocketExchange {
            worker,
            n: num_workers,
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream.try_clone()?),
            stream,
        };
        let mut hello = Encoder::new();
        hello.u32(worker).u32(num_workers);
        x.send(wire::HELLO, &hello.into_bytes())?;
        Ok(x)
    }

    fn send(&mut self, op: u8, payload: &[u8]) -> Result<()> {
        write_frame(&mut self.writer, op, payload)
            .map_err(|e| Error::Transport(format!("worker {} send: {e}", self.worker)))
    }

    fn recv(&mut self) -> Result<(u8, Vec<u8>)> {
        read_frame(&mut self.reader)
            .map_err(|e| Error::Transport(format!("worker {} receive: {e}", self.worker)))
    }
}

impl Exchange for SocketExchange {
    fn worker(&self) -> WorkerId {
        self.worker
    }

    fn num_workers(&self) -> u32 {
        self.n
    }

    fn barrier(&mut self) -> Result<()> {
        self.send(wire::BARRIER, &[])?;
        let (op, _) = self.recv()?;
        expect(op, wire::BARRIER, "BARRIER")
    }

    fn exchange_events(&mut self, outgoing: Vec<RemoteEventBatch>) -> Result<Vec<RemoteEventBatch>> {
        if outgoing.len() != self.n as usize - 1 {
            return Err(Error::Protocol(format!(
                "need one batch per peer, got {}",
                outgoing.len()
            )));
        }
        for b in &outgoing {
            self.send(wire::EVENT_BATCH, &wire::encode_batch(b.to, &b.events))?;
        }
        let mut incoming = Vec::with_capacity(outgoing.len());
        for _ in 1..self.n {
            let (op, body) = self.recv()?;
            expect(op, wire::EVENT_BATCH, "EVENT_BATCH")?;
            let (from, events) = wire::decode_batch(&body)?;
            incoming.push(RemoteEventBatch {
                from,
                to: self.worker,
                events,
            });
        }
        incoming.sort_by_key(|b| b.from);
        Ok(incoming)
    }

    fn agree_min(&mut self, local: SimTime) -> Result<SimTime> {
        self.send(wire::HORIZON_PROPOSE, &wire::encode_time(local))?;
        let (op, body) = self.recv()?;
        expect(op, wire::HORIZON_COMMIT, "HORIZON_COMMIT")?;
        wire::decode_time(&body)
    }

    fn finish(&mut self) -> Result<()> {
        self.send(wire::DONE, &[])
    }

    fn abort(&mut self) {
        let _ = self.stream.shutdown(Shutdown::Both);
    }
}

struct Peer {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

/// Relay for `num_workers` socket workers. Returns once all have sent DONE.
pub fn run_hub(listener: TcpListener, num_workers: u32) -> Result<()> {
    let n = num_workers as usize;
    let mut slots: Vec<Option<Peer>> = (0..n).map(|_| None).collect();
    for _ in 0..n {
        let (stream, addr) = listener.accept()?;
        stream.set_nodelay(true)?;
        let mut reader = BufReader::new(stream.try_clone()?);
        let (op, body) = read_frame(&mut reader)?;
        expect(op, wire::HELLO, "HELLO")?;
        let mut dec = Decoder::new(&body);
        let (w, count) = (dec.u32()?, dec.u32()?);
        if count != num_workers || w >= num_workers || slots[w as usize].is_some() {
            return Err(Error::Protocol(format!(
                "bad HELLO from {addr}: worker {w} of {count}"
            )));
        }
        debug!("hub: worker {w} connected from {addr}");
        slots[w as usize] = Some(Peer {
            reader,
            writer: BufWriter::new(stream),
        });
    }
    let mut peers: Vec<Peer> = slots.into_iter().map(|p| p.expect("all joined")).collect();

    loop {
        let mut first = Vec::with_capacity(n);
        for p in peers.iter_mut() {
            first.push(read_frame(&mut p.reader)?);
        }
        let op = first[0].0;
        if let Some((w, (other, _))) = first.iter().enumerate().find(|(_, f)| f.0 != op) {
            return Err(Error::Protocol(format!(
                "worker {w} sent opcode {other} while worker 0 sent {op}"
            )));
        }
        match op {
            wire::BARRIER => {
                for p in peers.iter_mut() {
                    write_frame(&mut p.writer, wire::BARRIER, &[])?;
                }
            }
            wire::HORIZON_PROPOSE => {
                let mut min = SimTime::INFINITY;
                for (_, body) in &first {
                    min = min.min(wire::decode_time(body)?);
                }
                for p in peers.iter_mut() {
                    write_frame(&mut p.writer, wire::HORIZON_COMMIT, &wire::encode_time(min))?;
                }
            }
            wire::EVENT_BATCH => {
                // inbox[to] collects (from, payload) pairs
                let mut inbox: Vec<Vec<(u32, Vec<u8>)>> = vec![Vec::new(); n];
                for (from, (f, p)) in first.into_iter().zip(peers.iter_mut()).enumerate() {
                    let mut frames = vec![f];
                    for _ in 2..n {
                        frames.push(read_frame(&mut p.reader)?);
                    }
                    for (fop, body) in frames {
                        expect(fop, wire::EVENT_BATCH, "EVENT_BATCH")?;
                        let to = wire::batch_peer(&body)? as usize;
                        if to >= n || to == from {
                            return Err(Error::Protocol(format!("worker {from} addressed batch to {to}")));
                        }
                        inbox[to].push((from as u32, wire::readdress(&body, from as u32)?));
                    }
                }
                for (to, p) in peers.iter_mut().enumerate() {
                    let mut batches = std::mem::take(&mut inbox[to]);
                    batches.sort_by_key(|(from, _)| *from);
                    for (_, body) in batches {
                        write_frame(&mut p.writer, wire::EVENT_BATCH, &body)?;
                    }
                }
            }
            wire::DONE => return Ok(()),
            other => return Err(Error::Protocol(format!("unexpected opcode {other} at hub"))),
        }
    }
}
