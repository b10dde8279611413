//! In-process runtime for logical ranks.
//!
//! Every rank runs the same program on its own worker thread. Ranks share
//! nothing mutable; all interaction goes through tagged point-to-point
//! messages with MPI-like nonblocking semantics. Messages between a fixed
//! `(sender, receiver, tag)` triple are delivered in send order.

use std::cell::{Cell, RefCell};
use std::collections::{HashMap, VecDeque};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type Tag = u64;

/// First tag handed out by [`RankContext::allocate_tags`]; user tags should
/// stay below it.
pub const TAG_SPACE_BASE: Tag = 1 << 48;
const TAGS_PER_SPACE: Tag = 1 << 8;
const COLLECTIVE_TAG_BASE: Tag = 1 << 62;

#[derive(Debug, thiserror::Error)]
pub enum CommError {
    #[error("peer {peer} out of range for {n_ranks} ranks")]
    InvalidPeer { peer: usize, n_ranks: usize },
    #[error("request {0} was already waited on")]
    RequestConsumed(usize),
    #[error("unknown request {0}")]
    UnknownRequest(usize),
    #[error("rank {rank} waited {waited:?} for a message from rank {peer} with tag {tag}; deadlock suspected")]
    Deadlock {
        rank: usize,
        peer: usize,
        tag: Tag,
        waited: Duration,
    },
    #[error("aborted after another rank failed")]
    Aborted,
    #[error("rank {peer} has already terminated")]
    PeerGone { peer: usize },
    #[error("malformed payload of {len} bytes")]
    Malformed { len: usize },
}

struct Envelope {
    src: usize,
    tag: Tag,
    payload: Vec<u8>,
}

/// One line of the optional message trace.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u64,
    pub sender: usize,
    pub receiver: usize,
    pub tag: Tag,
    pub bytes: usize,
}

#[derive(Clone, Debug)]
pub struct RuntimeOptions {
    /// Time a rank may wait for a single message before a deadlock is
    /// reported.
    pub timeout: Duration,
    pub trace: bool,
}

impl Default for RuntimeOptions {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(30),
            trace: false,
        }
    }
}

struct Shared {
    abort: AtomicBool,
    timeout: Duration,
    step: AtomicU64,
    trace: Option<Mutex<Vec<TraceRecord>>>,
}

enum RequestState {
    Send,
    Recv { peer: usize, tag: Tag },
    Consumed,
}

/// Completion handle returned by [`RankContext::isend`] and
/// [`RankContext::irecv`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Request(usize);

pub struct RankContext {
    rank: usize,
    n_ranks: usize,
    senders: Vec<Sender<Envelope>>,
    inbox: Receiver<Envelope>,
    pending: RefCell<HashMap<(usize, Tag), VecDeque<Vec<u8>>>>,
    requests: RefCell<Vec<RequestState>>,
    next_tag_space: Cell<Tag>,
    collective_seq: Cell<Tag>,
    shared: Arc<Shared>,
}

impl RankContext {
    /// Standalone single-rank context for serial use outside [`run_ranks`].
    pub fn solo() -> Self {
        let (tx, rx) = channel();
        RankContext {
            rank: 0,
            n_ranks: 1,
            senders: vec![tx],
            inbox: rx,
            pending: RefCell::default(),
            requests: RefCell::default(),
            next_tag_space: Cell::new(0),
            collective_seq: Cell::new(0),
            shared: Arc::new(Shared {
                abort: AtomicBool::new(false),
                timeout: RuntimeOptions::default().timeout,
                step: AtomicU64::new(0),
                trace: None,
            }),
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn n_ranks(&self) -> usize {
        self.n_ranks
    }

    fn check_peer(&self, peer: usize) -> Result<(), CommError> {
        if peer >= self.n_ranks {
            return Err(CommError::InvalidPeer {
                peer,
                n_ranks: self.n_ranks,
            });
        }
        Ok(())
    }

    /// Reserves a fresh range of 256 tags. Ranks must call this in the same
    /// collective order so that the ranges agree.
    pub fn allocate_tags(&self) -> Tag {
        let k = self.next_tag_space.get();
        self.next_tag_space.set(k + 1);
        TAG_SPACE_BASE + k * TAGS_PER_SPACE
    }

    fn next_collective_tag(&self) -> Tag {
        let k = self.collective_seq.get();
        self.collective_seq.set(k + 1);
        COLLECTIVE_TAG_BASE + k
    }

    /// Enqueues a message without blocking.
    pub fn isend(&self, peer: usize, tag: Tag, payload: Vec<u8>) -> Result<Request, CommError> {
        self.check_peer(peer)?;
        if let Some(trace) = &self.shared.trace {
            let step = self.shared.step.fetch_add(1, Ordering::Relaxed);
            trace.lock().expect("trace lock").push(TraceRecord {
                step,
                sender: self.rank,
                receiver: peer,
                tag,
                bytes: payload.len(),
            });
        }
        self.senders[peer]
            .send(Envelope {
                src: self.rank,
                tag,
                payload,
            })
            .map_err(|_| CommError::PeerGone { peer })?;
        Ok(self.push_request(RequestState::Send))
    }

    /// Posts a receive for the next message from `peer` with `tag`.
    pub fn irecv(&self, peer: usize, tag: Tag) -> Result<Request, CommError> {
        self.check_peer(peer)?;
        Ok(self.push_request(RequestState::Recv { peer, tag }))
    }

    fn push_request(&self, state: RequestState) -> Request {
        let mut reqs = self.requests.borrow_mut();
        reqs.push(state);
        Request(reqs.len() - 1)
    }

    /// Completes a request. Sends complete immediately with an empty payload.
    pub fn wait(&self, req: Request) -> Result<Vec<u8>, CommError> {
        let state = {
            let mut reqs = self.requests.borrow_mut();
            let slot = reqs
                .get_mut(req.0)
                .ok_or(CommError::UnknownRequest(req.0))?;
            std::mem::replace(slot, RequestState::Consumed)
        };
        match state {
            RequestState::Send => Ok(Vec::new()),
            RequestState::Recv { peer, tag } => self.receive_matching(peer, tag),
            RequestState::Consumed => Err(CommError::RequestConsumed(req.0)),
        }
    }

    pub fn wait_all(&self, reqs: &[Request]) -> Result<Vec<Vec<u8>>, CommError> {
        reqs.iter().map(|&r| self.wait(r)).collect()
    }

    pub fn send(&self, peer: usize, tag: Tag, payload: Vec<u8>) -> Result<(), CommError> {
        let r = self.isend(peer, tag, payload)?;
        self.wait(r).map(|_| ())
    }

    pub fn recv(&self, peer: usize, tag: Tag) -> Result<Vec<u8>, CommError> {
        let r = self.irecv(peer, tag)?;
        self.wait(r)
    }

    fn receive_matching(&self, peer: usize, tag: Tag) -> Result<Vec<u8>, CommError> {
        let started = Instant::now();
        loop {
            if let Some(queue) = self.pending.borrow_mut().get_mut(&(peer, tag)) {
                if let Some(msg) = queue.pop_front() {
                    return Ok(msg);
                }
            }
            match self.inbox.recv_timeout(Duration::from_millis(20)) {
                Ok(env) => {
                    self.pending
                        .borrow_mut()
                        .entry((env.src, env.tag))
                        .or_default()
                        .push_back(env.payload);
                }
                Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => {
                    if self.shared.abort.load(Ordering::Relaxed) {
                        return Err(CommError::Aborted);
                    }
                    let waited = started.elapsed();
                    if waited > self.shared.timeout {
                        self.shared.abort.store(true, Ordering::Relaxed);
                        return Err(CommError::Deadlock {
                            rank: self.rank,
                            peer,
                            tag,
                            waited,
                        });
                    }
                }
            }
        }
    }

    /// Global sum, accumulated in ascending rank order on rank 0 and
    /// broadcast, so the result is bit-identical on reruns.
    pub fn allreduce_sum(&self, value: f64) -> Result<f64, CommError> {
        Ok(self.allreduce_sum_vec(&[value])?[0])
    }

    pub fn allreduce_sum_vec(&self, values: &[f64]) -> Result<Vec<f64>, CommError> {
        let tag = self.next_collective_tag();
        if self.n_ranks == 1 {
            return Ok(values.to_vec());
        }
        if self.rank == 0 {
            let mut acc = values.to_vec();
            for src in 1..self.n_ranks {
                let other = decode_f64s(&self.recv(src, tag)?)?;
                if other.len() != acc.len() {
                    return Err(CommError::Malformed {
                        len: other.len() * 8,
                    });
                }
                for (a, b) in acc.iter_mut().zip(other) {
                    *a += b;
                }
            }
            let bytes = encode_f64s(&acc);
            for dst in 1..self.n_ranks {
                self.send(dst, tag, bytes.clone())?;
            }
            Ok(acc)
        } else {
            self.send(0, tag, encode_f64s(values))?;
            decode_f64s(&self.recv(0, tag)?)
        }
    }

    /// Every rank receives every rank's contribution, indexed by rank.
    pub fn all_gather_f64s(&self, values: &[f64]) -> Result<Vec<Vec<f64>>, CommError> {
        let tag = self.next_collective_tag();
        let bytes = encode_f64s(values);
        for dst in 0..self.n_ranks {
            if dst != self.rank {
                self.isend(dst, tag, bytes.clone())?;
            }
        }
        (0..self.n_ranks)
            .map(|src| {
                if src == self.rank {
                    Ok(values.to_vec())
                } else {
                    decode_f64s(&self.recv(src, tag)?)
                }
            })
            .collect()
    }

    pub fn barrier(&self) -> Result<(), CommError> {
        self.allreduce_sum(0.0).map(|_| ())
    }
}

pub fn encode_f64s(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_f64s(bytes: &[u8]) -> Result<Vec<f64>, CommError> {
    if bytes.len() % 8 != 0 {
        return Err(CommError::Malformed { len: bytes.len() });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

pub fn encode_usizes(values: &[usize]) -> Vec<u8> {
    values
        .iter()
        .flat_map(|&v| (v as u64).to_le_bytes())
        .collect()
}

pub fn decode_usizes(bytes: &[u8]) -> Result<Vec<usize>, CommError> {
    if bytes.len() % 8 != 0 {
        return Err(CommError::Malformed { len: bytes.len() });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")) as usize)
        .collect())
}

pub struct RunOutput<T> {
    pub results: Vec<T>,
    pub trace: Vec<TraceRecord>,
}

/// Runs `program` once per rank and returns the per-rank results.
pub fn run_ranks<T, F>(n_ranks: usize, program: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&RankContext) -> Result<T> + Sync,
{
    run_ranks_with(&RuntimeOptions::default(), n_ranks, program).map(|o| o.results)
}

pub fn run_ranks_with<T, F>(
    opts: &RuntimeOptions,
    n_ranks: usize,
    program: F,
) -> Result<RunOutput<T>>
where
    T: Send,
    F: Fn(&RankContext) -> Result<T> + Sync,
{
    if n_ranks == 0 {
        return Err(Error::Config("at least one rank is required".into()));
    }
    let shared = Arc::new(Shared {
        abort: AtomicBool::new(false),
        timeout: opts.timeout,
        step: AtomicU64::new(0),
        trace: opts.trace.then(|| Mutex::new(Vec::new())),
    });
    let (senders, receivers): (Vec<_>, Vec<_>) = (0..n_ranks).map(|_| channel()).unzip();
    let contexts: Vec<RankContext> = receivers
        .into_iter()
        .enumerate()
        .map(|(rank, inbox)| RankContext {
            rank,
            n_ranks,
            senders: senders.clone(),
            inbox,
            pending: RefCell::default(),
            requests: RefCell::default(),
            next_tag_space: Cell::new(0),
            collective_seq: Cell::new(0),
            shared: shared.clone(),
        })
        .collect();
    drop(senders);

    enum Outcome<T> {
        Ok(T),
        Err(Error),
        Panic(String),
    }

    let program = &program;
    let outcomes: Vec<Outcome<T>> = std::thread::scope(|scope| {
        let handles: Vec<_> = contexts
            .into_iter()
            .map(|ctx| {
                let shared = shared.clone();
                std::thread::Builder::new()
                    .name(format!("rank-{}", ctx.rank))
                    .stack_size(16 << 20)
                    .spawn_scoped(scope, move || {
                        let out = catch_unwind(AssertUnwindSafe(|| program(&ctx)));
                        let outcome = match out {
                            Ok(Ok(v)) => Outcome::Ok(v),
                            Ok(Err(e)) => Outcome::Err(e),
                            Err(p) => Outcome::Panic(
                                p.downcast_ref::<&str>()
                                    .map(|s| s.to_string())
                                    .or_else(|| p.downcast_ref::<String>().cloned())
                                    .unwrap_or_else(|| "unknown panic".into()),
                            ),
                        };
                        if !matches!(outcome, Outcome::Ok(_)) {
                            shared.abort.store(true, Ordering::Relaxed);
                        }
                        outcome
                    })
                    .expect("spawn rank thread")
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("rank thread join"))
            .collect()
    });

    let mut results = Vec::with_capacity(n_ranks);
    let mut first_error: Option<Error> = None;
    let mut aborted: Option<Error> = None;
    for (rank, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Outcome::Ok(v) => results.push(v),
            Outcome::Err(Error::Comm(CommError::Aborted)) => {
                aborted.get_or_insert(Error::RankFailed {
                    rank,
                    source: Box::new(Error::Comm(CommError::Aborted)),
                });
            }
            Outcome::Err(e) => {
                first_error.get_or_insert(Error::RankFailed {
                    rank,
                    source: Box::new(e),
                });
            }
            Outcome::Panic(message) => {
                first_error.get_or_insert(Error::RankPanicked { rank, message });
            }
        }
    }
    if let Some(e) = first_error.or(aborted) {
        return Err(e);
    }
    let trace = shared
        .trace
        .as_ref()
        .map(|t| t.lock().expect("trace lock").clone())
        .unwrap_or_default();
    Ok(RunOutput { results, trace })
}

/// Writes a message trace as JSON lines.
pub fn write_trace_jsonl<W: Write>(records: &[TraceRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_rank_returns_id() {
        assert_eq!(run_ranks(1, |ctx| Ok(ctx.rank())).unwrap(), vec![0]);
    }

    #[test]
    fn ring_pass() {
        let out = run_ranks(4, |ctx| {
            let n = ctx.n_ranks();
            let next = (ctx.rank() + 1) % n;
            let prev = (ctx.rank() + n - 1) % n;
            ctx.isend(next, 7, encode_usizes(&[ctx.rank()]))?;
            Ok(decode_usizes(&ctx.recv(prev, 7)?)?[0])
        })
        .unwrap();
        assert_eq!(out, vec![3, 0, 1, 2]);
    }

    #[test]
    fn allreduce_of_rank_ids() {
        let out = run_ranks(4, |ctx| Ok(ctx.allreduce_sum(ctx.rank() as f64)?)).unwrap();
        assert_eq!(out, vec![6.0; 4]);
        let ones = run_ranks(5, |ctx| Ok(ctx.allreduce_sum(1.0)?)).unwrap();
        assert_eq!(ones, vec![5.0; 5]);
        let single = run_ranks(1, |ctx| Ok(ctx.allreduce_sum(0.1)?)).unwrap();
        assert_eq!(single, vec![0.1]);
    }

    #[test]
    fn allreduce_matches_sequential_order() {
        let values = [0.1, 1e16, -1e16, 0.3, 1.0 / 3.0, 7.25];
        let seq = values[1..].iter().fold(values[0], |acc, v| acc + v);
        for _ in 0..3 {
            let out = run_ranks(values.len(), |ctx| {
                Ok(ctx.allreduce_sum(values[ctx.rank()])?)
            })
            .unwrap();
            assert!(out.iter().all(|&v| v.to_bits() == seq.to_bits()));
        }
    }

    #[test]
    fn self_send_roundtrip_and_tag_matching() {
        run_ranks(1, |ctx| {
            let data = [1.5, -0.0, f64::MIN_POSITIVE, 1e300];
            ctx.isend(0, 1, encode_f64s(&data))?;
            ctx.isend(0, 2, encode_f64s(&[2.0]))?;
            ctx.isend(0, 1, encode_f64s(&[3.0]))?;
            let r2 = ctx.irecv(0, 2)?;
            let r1 = ctx.irecv(0, 1)?;
            let r1b = ctx.irecv(0, 1)?;
            let got = ctx.wait_all(&[r2, r1, r1b])?;
            assert_eq!(decode_f64s(&got[0])?, vec![2.0]);
            let back = decode_f64s(&got[1])?;
            assert!(back
                .iter()
                .zip(data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits()));
            assert_eq!(decode_f64s(&got[2])?, vec![3.0]);
            assert!(matches!(ctx.wait(r1), Err(CommError::RequestConsumed(_))));
            assert!(matches!(
                ctx.isend(3, 0, vec![]),
                Err(CommError::InvalidPeer { .. })
            ));
            Ok(())
        })
        .unwrap();
    }

    #[test]
    fn random_exchange_plan_delivers_everything() {
        use rand::{Rng, SeedableRng};
        let n = 8;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        // plan[s][r] = number of messages s sends to r
        let plan: Vec<Vec<usize>> = (0..n)
            .map(|_| {
                (0..n)
                    .map(|_| {
                        if rng.gen_bool(0.4) {
                            rng.gen_range(1..4)
                        } else {
                            0
                        }
                    })
                    .collect()
            })
            .collect();
        let received = run_ranks(n, |ctx| {
            let me = ctx.rank();
            for dst in 0..n {
                for k in 0..plan[me][dst] {
                    ctx.isend(dst, 5, encode_usizes(&[me, dst, k]))?;
                }
            }
            let mut got = Vec::new();
            for src in 0..n {
                let reqs: Vec<_> = (0..plan[src][me])
                    .map(|_| ctx.irecv(src, 5))
                    .collect::<Result<_, _>>()?;
                for m in ctx.wait_all(&reqs)? {
                    got.push(decode_usizes(&m)?);
                }
            }
            Ok(got)
        })
        .unwrap();
        let mut sent: Vec<Vec<usize>> = Vec::new();
        for s in 0..n {
            for r in 0..n {
                for k in 0..plan[s][r] {
                    sent.push(vec![s, r, k]);
                }
            }
        }
        let mut delivered: Vec<Vec<usize>> = received.into_iter().flatten().collect();
        sent.sort();
        delivered.sort();
        assert_eq!(sent, delivered);
    }

    #[test]
    fn failures_name_the_rank() {
        let err = run_ranks(3, |ctx| {
            if ctx.rank() == 2 {
                return Err(Error::Config("boom".into()));
            }
            ctx.barrier()?;
            Ok(())
        })
        .unwrap_err();
        assert!(matches!(err, Error::RankFailed { rank: 2, .. }), "{err}");

        let err = run_ranks(2, |ctx| {
            if ctx.rank() == 1 {
                panic!("kaputt");
            }
            ctx.barrier()?;
            Ok(())
        })
        .unwrap_err();
        match err {
            Error::RankPanicked { rank, message } => {
                assert_eq!(rank, 1);
                assert!(message.contains("kaputt"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn deadlock_is_reported() {
        let opts = RuntimeOptions {
            timeout: Duration::from_millis(200),
            trace: false,
        };
        let err = run_ranks_with(&opts, 2, |ctx| {
            let peer = 1 - ctx.rank();
            ctx.recv(peer, 3)?;
            Ok(())
        })
        .err()
        .unwrap();
        let msg = err.to_string();
        assert!(msg.contains("deadlock") || msg.contains("aborted"), "{msg}");
    }

    #[test]
    fn trace_records_messages() {
        let opts = RuntimeOptions {
            trace: true,
            ..Default::default()
        };
        let out = run_ranks_with(&opts, 2, |ctx| {
            let peer = 1 - ctx.rank();
            ctx.isend(peer, 9, vec![0u8; 16])?;
            ctx.recv(peer, 9)?;
            Ok(())
        })
        .unwrap();
        assert_eq!(out.trace.len(), 2);
        assert!(out.trace.iter().all(|t| t.bytes == 16 && t.tag == 9));
        let mut buf = Vec::new();
        write_trace_jsonl(&out.trace, &mut buf).unwrap();
        let lines: Vec<TraceRecord> = String::from_utf8(buf)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 2);
    }
}
