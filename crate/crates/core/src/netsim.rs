//! Synchronous message-passing network over an undirected topology, with
//! per-period byte accounting.
//!
//! Byte accounting: every message carries a 16-byte header; a selected
//! frame costs an 8-byte index plus 4 bytes per feature scalar; a score is
//! 8 bytes and a piggybacked degree another 8.

use std::collections::VecDeque;
use std::io;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::agent::SelectionBuffer;

pub const HEADER_BYTES: u64 = 16;
pub const FRAME_INDEX_BYTES: u64 = 8;
pub const SCALAR_BYTES: u64 = 4;
pub const SCORE_BYTES: u64 = 8;
pub const DEGREE_BYTES: u64 = 8;
pub const MAX_RESAMPLES: u64 = 1000;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("edge ({0}, {1}) is a self-loop")]
    SelfLoop(usize, usize),
    #[error("edge ({src}, {dst}) names an agent outside 0..{n}")]
    UnknownAgent { src: usize, dst: usize, n: usize },
    #[error("the communication graph is disconnected")]
    Disconnected,
    #[error("message from {src} to {dst} does not follow an edge")]
    NotAnEdge { src: usize, dst: usize },
    #[error("outbox of agent {agent} holds a message claiming source {src}")]
    WrongSource { agent: usize, src: usize },
    #[error("expected {expected} outboxes, got {found}")]
    OutboxCount { expected: usize, found: usize },
    #[error("invalid graph parameters: {0}")]
    InvalidParameters(String),
    #[error("no connected G({n}, {p}) graph in {MAX_RESAMPLES} draws; try a larger edge probability")]
    ConnectivityNotReached { n: usize, p: f64 },
}

/// Undirected simple graph over agents `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommGraph {
    adjacency: Vec<Vec<usize>>,
}

impl CommGraph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, NetError> {
        let mut adjacency = vec![Vec::new(); n];
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(NetError::UnknownAgent { src: a, dst: b, n });
            }
            if a == b {
                return Err(NetError::SelfLoop(a, b));
            }
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self { adjacency })
    }

    pub fn complete(n: usize) -> Self {
        Self::new(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)))).expect("valid edges")
    }

    pub fn path(n: usize) -> Self {
        Self::new(n, (1..n).map(|i| (i - 1, i))).expect("valid edges")
    }

    pub fn ring(n: usize) -> Self {
        if n < 3 {
            return Self::path(n);
        }
        Self::new(n, (0..n).map(|i| (i, (i + 1) % n))).expect("valid edges")
    }

    /// Star centered on agent 0.
    pub fn star(n: usize) -> Self {
        Self::new(n, (1..n).map(|i| (0, i))).expect("valid edges")
    }

    pub fn n(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    /// `V_i`: agent `i` and its neighbors, ascending.
    pub fn neighborhood(&self, i: usize) -> Vec<usize> {
        let mut v = self.adjacency[i].clone();
        let at = v.partition_point(|&j| j < i);
        v.insert(at, i);
        v
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        a < self.n() && self.adjacency[a].binary_search(&b).is_ok()
    }

    /// Edges as `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, list)| list.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Breadth-first hop distances from `source`; `None` for unreachable agents.
    pub fn distances_from(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n()];
        let mut queue = VecDeque::new();
        dist[source] = Some(0);
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].expect("queued nodes have a distance");
            for &v in &self.adjacency[u] {
                if dist[v].is_none() {
                    dist[v] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        self.n() == 0 || self.distances_from(0).iter().all(Option::is_some)
    }

    pub fn require_connected(&self) -> Result<(), NetError> {
        if self.is_connected() {
            Ok(())
        } else {
            Err(NetError::Disconnected)
        }
    }

    /// Largest shortest-path hop distance over all pairs.
    pub fn diameter(&self) -> Result<usize, NetError> {
        let mut diameter = 0;
        for s in 0..self.n() {
            for d in self.distances_from(s) {
                diameter = diameter.max(d.ok_or(NetError::Disconnected)?);
            }
        }
        Ok(diameter)
    }
}

/// `G(n, p)`: every edge independently with probability `p`, redrawn on a
/// fresh random substream until the graph is connected.
pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Result<CommGraph, NetError> {
    if n < 2 {
        return Err(NetError::InvalidParameters(format!("need at least 2 agents, got {n}")));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(NetError::InvalidParameters(format!(
            "edge probability {p} is outside (0, 1]"
        )));
    }
    for attempt in 0..MAX_RESAMPLES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        let graph = CommGraph::new(n, edges)?;
        if graph.is_connected() {
            return Ok(graph);
        }
    }
    Err(NetError::ConnectivityNotReached { n, p })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    SelectedFrames(Arc<SelectionBuffer>),
    /// `x0_ij` sent by `i` to `j`, with `i`'s degree piggybacked.
    InitialScore {
        score: f64,
        degree: usize,
    },
    ScoreVec(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub src: usize,
    pub dst: usize,
    pub payload: Payload,
}

impl Message {
    pub fn new(src: usize, dst: usize, payload: Payload) -> Self {
        Self { src, dst, payload }
    }

    pub fn size_bytes(&self) -> u64 {
        HEADER_BYTES
            + match &self.payload {
                Payload::SelectedFrames(buffer) => buffer
                    .selected
                    .iter()
                    .map(|f| FRAME_INDEX_BYTES + SCALAR_BYTES * f.feature.len() as u64)
                    .sum(),
                Payload::InitialScore { .. } => SCORE_BYTES + DEGREE_BYTES,
                Payload::ScoreVec(v) => SCORE_BYTES * v.len() as u64,
            }
    }

    pub fn frame_count(&self) -> u64 {
        match &self.payload {
            Payload::SelectedFrames(buffer) => buffer.len() as u64,
            _ => 0,
        }
    }
}

/// Protocol phase, used to check that consensus traffic carries only scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    FrameExchange,
    Consensus,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Traffic {
    pub messages: u64,
    pub rounds: u64,
    pub frames_sent: u64,
    pub score_messages: u64,
    pub bytes_total: u64,
    /// Frames sent while in the consensus phase (should stay 0).
    pub consensus_frames: u64,
}

impl Traffic {
    fn add(&mut self, other: &Traffic) {
        self.messages += other.messages;
        self.rounds += other.rounds;
        self.frames_sent += other.frames_sent;
        self.score_messages += other.score_messages;
        self.bytes_total += other.bytes_total;
        self.consensus_frames += other.consensus_frames;
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommLedger {
    periods: Vec<Traffic>,
}

impl CommLedger {
    pub fn periods(&self) -> &[Traffic] {
        &self.periods
    }

    pub fn total(&self) -> Traffic {
        let mut total = Traffic::default();
        for p in &self.periods {
            total.add(p);
        }
        total
    }

    fn current(&mut self) -> &mut Traffic {
        if self.periods.is_empty() {
            self.periods.push(Traffic::default());
        }
        self.periods.last_mut().expect("nonempty")
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    graph: CommGraph,
    ledger: CommLedger,
    phase: Phase,
}

impl Network {
    pub fn new(graph: CommGraph) -> Self {
        Self {
            graph,
            ledger: CommLedger::default(),
            phase: Phase::FrameExchange,
        }
    }

    pub fn graph(&self) -> &CommGraph {
        &self.graph
    }

    pub fn ledger(&self) -> &CommLedger {
        &self.ledger
    }

    pub fn into_ledger(self) -> CommLedger {
        self.ledger
    }

    /// Opens a new accounting period and resets the phase.
    pub fn begin_period(&mut self) {
        self.ledger.periods.push(Traffic::default());
        self.phase = Phase::FrameExchange;
    }

    pub fn set_phase(&mut self, phase: Phase) {
        self.phase = phase;
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Delivers one synchronous round. `outboxes[i]` holds the messages
    /// agent `i` sends; the result holds each agent's inbox ordered by
    /// sender (and by send order for one sender).
    pub fn exchange_round(&mut self, outboxes: Vec<Vec<Message>>) -> Result<Vec<Vec<Message>>, NetError> {
        let n = self.graph.n();
        if outboxes.len() != n {
            return Err(NetError::OutboxCount {
                expected: n,
                found: outboxes.len(),
            });
        }
        for (agent, outbox) in outboxes.iter().enumerate() {
            for m in outbox {
                if m.src != agent {
                    return Err(NetError::WrongSource { agent, src: m.src });
                }
                if !self.graph.has_edge(m.src, m.dst) {
                    return Err(NetError::NotAnEdge { src: m.src, dst: m.dst });
                }
            }
        }
        let phase = self.phase;
        let traffic = self.ledger.current();
        traffic.rounds += 1;
        let mut inboxes: Vec<Vec<Message>> = vec![Vec::new(); n];
        for outbox in outboxes {
            for m in outbox {
                let frames = m.frame_count();
                traffic.messages += 1;
                traffic.bytes_total += m.size_bytes();
                traffic.frames_sent += frames;
                if phase == Phase::Consensus {
                    traffic.consensus_frames += frames;
                }
                if matches!(m.payload, Payload::InitialScore { .. } | Payload::ScoreVec(_)) {
                    traffic.score_messages += 1;
                }
                inboxes[m.dst].push(m);
            }
        }
        Ok(inboxes)
    }

    /// Every agent sends `payload_for(i)` to each of its neighbors.
    pub fn broadcast<F>(&mut self, mut payload_for: F) -> Result<Vec<Vec<Message>>, NetError>
    where
        F: FnMut(usize) -> Payload,
    {
        let outboxes = (0..self.graph.n())
            .map(|i| {
                let payload = payload_for(i);
                self.graph
                    .neighbors(i)
                    .iter()
                    .map(|&j| Message::new(i, j, payload.clone()))
                    .collect()
            })
            .collect();
        self.exchange_round(outboxes)
    }
}

/// One row of the ledger CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerRow {
    pub period: usize,
    pub frames_sent: u64,
    pub score_messages: u64,
    pub bytes_total: u64,
    pub bytes_fraction_of_raw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommReport {
    pub rows: Vec<LedgerRow>,
    pub total: Traffic,
    pub raw_bytes: u64,
    pub bytes_fraction_of_raw: f64,
}

/// Aggregates a ledger and relates it to the raw input size.
pub fn measure_communication(ledger: &CommLedger, raw_bytes: u64) -> CommReport {
    let fraction = |bytes: u64| {
        if raw_bytes == 0 {
            0.0
        } else {
            bytes as f64 / raw_bytes as f64
        }
    };
    let rows = ledger
        .periods()
        .iter()
        .enumerate()
        .map(|(period, t)| LedgerRow {
            period,
            frames_sent: t.frames_sent,
            score_messages: t.score_messages,
            bytes_total: t.bytes_total,
            bytes_fraction_of_raw: fraction(t.bytes_total),
        })
        .collect();
    let total = ledger.total();
    CommReport {
        rows,
        total,
        raw_bytes,
        bytes_fraction_of_raw: fraction(total.bytes_total),
    }
}

impl CommReport {
    pub fn write_csv<W: io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            w.serialize(row)?;
        }
        if self.rows.is_empty() {
            w.write_record([
                "period",
                "frames_sent",
                "score_messages",
                "bytes_total",
                "bytes_fraction_of_raw",
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
