use std::io::{BufReader, BufWriter};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::{Arc, Condvar, Mutex};

use log::debug;

use crate::error::{Error, Result};
use crate::qsm::global::{BatchResponse, GlobalQsm, RequestBatch};
use crate::qsm::wire;
use crate::wire::{read_frame, write_frame};

/// A worker's connection to the global QSM.
pub trait GlobalQsmLink: Send {
    /// Submit one epoch's batch and block until the server answers.
    fn flush(&mut self, batch: RequestBatch) -> Result<BatchResponse>;

    /// Tell the server this worker is finished.
    fn close(&mut self) -> Result<()>;
}

struct Round {
    expected: usize,
    pending: Vec<RequestBatch>,
    results: Vec<Option<BatchResponse>>,
    generation: u64,
}

/// Global QSM shared by worker threads of one process.
///
/// Each round collects exactly one batch per connected worker, then the last
/// worker to arrive serves the round for everyone.
pub struct InprocQsmService {
    qsm: Mutex<GlobalQsm>,
    round: Mutex<Round>,
    ready: Condvar,
}

impl InprocQsmService {
    pub fn new(qsm: GlobalQsm, num_workers: usize) -> Arc<Self> {
        Arc::new(InprocQsmService {
            qsm: Mutex::new(qsm),
            round: Mutex::new(Round {
                expected: num_workers,
                pending: Vec::with_capacity(num_workers),
                results: vec![None; num_workers],
                generation: 0,
            }),
            ready: Condvar::new(),
        })
    }

    pub fn link(self: &Arc<Self>) -> InprocLink {
        InprocLink {
            service: Arc::clone(self),
            closed: false,
        }
    }

    /// Run `f` against the underlying global QSM.
    pub fn inspect<R>(&self, f: impl FnOnce(&GlobalQsm) -> R) -> R {
        f(&self.qsm.lock().expect("qsm lock"))
    }

    fn submit(&self, batch: RequestBatch) -> Result<BatchResponse> {
        let worker = batch.worker as usize;
        let mut round = self.round.lock().expect("round lock");
        if worker >= round.results.len() {
            return Err(Error::Transport(format!("worker {worker} out of range")));
        }
        round.pending.push(batch);
        if round.pending.len() == round.expected {
            let batches = std::mem::take(&mut round.pending);
            let responses = self.qsm.lock().expect("qsm lock").serve_round(batches);
            for r in responses {
                let slot = r.worker as usize;
                round.results[slot] = Some(r);
            }
            round.generation += 1;
            self.ready.notify_all();
        } else {
            let gen = round.generation;
            round = self
                .ready
                .wait_while(round, |r| r.generation == gen)
                .expect("round lock");
        }
        round.results[worker]
            .take()
            .ok_or_else(|| Error::Transport("missing round result".into()))
    }

    fn leave(&self) {
        let mut round = self.round.lock().expect("round lock");
        round.expected -= 1;
        if round.expected > 0 && round.pending.len() == round.expected {
            // everyone still connected is already waiting
            let batches = std::mem::take(&mut round.pending);
            let responses = self.qsm.lock().expect("qsm lock").serve_round(batches);
            for r in responses {
                let slot = r.worker as usize;
                round.results[slot] = Some(r);
            }
            round.generation += 1;
            self.ready.notify_all();
        }
    }
}

pub struct InprocLink {
    service: Arc<InprocQsmService>,
    closed: bool,
}

impl GlobalQsmLink for InprocLink {
    fn flush(&mut self, batch: RequestBatch) -> Result<BatchResponse> {
        self.service.submit(batch)
    }

    fn close(&mut self) -> Result<()> {
        if !self.closed {
            self.closed = true;
            self.service.leave();
        }
        Ok(())
    }
}

/// Client side of the socket transport.
pub struct SocketLink {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    closed: bool,
}

impl SocketLink {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr)
            .map_err(|e| Error::Transport(format!("connect to global QSM: {e}")))?;
        stream.set_nodelay(true)?;
        Ok(SocketLink {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
            closed: false,
        })
    }
}

impl GlobalQsmLink for SocketLink {
    fn flush(&mut self, batch: RequestBatch) -> Result<BatchResponse> {
        let payload = wire::encode_batch(&batch)?;
        write_frame(&mut self.writer, wire::OP_BATCH, &payload)
            .map_err(|e| Error::Transport(format!("send batch: {e}")))?;
        let (op, body) = read_frame(&mut self.reader)
            .map_err(|e| Error::Transport(format!("read batch response: {e}")))?;
        if op != wire::OP_BATCH_RESP {
            return Err(Error::Protocol(format!("expected BATCH_RESP, got opcode {op}")));
        }
        wire::decode_response(&body)
    }

    fn close(&mut self) -> Result<()> {
        if !self.closed {
            self.closed = true;
            write_frame(&mut self.writer, wire::OP_SHUTDOWN, &[])
                .map_err(|e| Error::Transport(format!("send shutdown: {e}")))?;
        }
        Ok(())
    }
}

impl Drop for SocketLink {
    fn drop(&mut self) {
        let _ = self.close();
    }
}

struct Conn {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    open: bool,
}

/// Serve `num_workers` socket clients until all of them shut down.
///
/// Single-threaded: each round reads one frame from every open connection,
/// applies the batches in `(epoch, worker)` order and answers each client.
/// Returns the global QSM for inspection.
pub fn serve_tcp(listener: TcpListener, mut qsm: GlobalQsm, num_workers: usize) -> Result<GlobalQsm> {
    let mut conns = Vec::with_capacity(num_workers);
    for _ in 0..num_workers {
        let (stream, peer) = listener.accept()?;
        debug!("global QSM: client connected from {peer}");
        stream.set_nodelay(true)?;
        conns.push(Conn {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
            open: true,
        });
    }

    loop {
        let mut batches = Vec::new();
        let mut owners = Vec::new();
        for (i, conn) in conns.iter_mut().enumerate().filter(|(_, c)| c.open) {
            let (op, body) = read_frame(&mut conn.reader)?;
            match op {
                wire::OP_BATCH => {
                    let batch = wire::decode_batch(&body)?;
                    owners.push((batch.worker, i));
                    batches.push(batch);
                }
                wire::OP_SHUTDOWN => conn.open = false,
                other => return Err(Error::Protocol(format!("unexpected opcode {other}"))),
            }
        }
        if batches.is_empty() {
            if conns.iter().all(|c| !c.open) {
                return Ok(qsm);
            }
            continue;
        }
        for resp in qsm.serve_round(batches) {
            let (_, idx) = owners
                .iter()
                .find(|(w, _)| *w == resp.worker)
                .copied()
                .expect("response for a submitted batch");
            let payload = wire::encode_response(&resp)?;
            write_frame(&mut conns[idx].writer, wire::OP_BATCH_RESP, &payload)?;
        }
    }
}
