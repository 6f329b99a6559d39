//! Agreement on a system-wide importance vector from the agents' initial
//! scores: weighted/average/own-score updates followed by max consensus, or
//! decentralized gradient methods on a separable least-squares objective.

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netsim::{CommGraph, Message, NetError, Network, Payload};
use crate::scoring::InitialScoreSet;

#[derive(Debug, Error)]
pub enum ConsensusError {
    #[error("the communication graph is disconnected")]
    Disconnected,
    #[error("agent {agent} is missing the score from neighborhood member {from}")]
    MissingEntry { agent: usize, from: usize },
    #[error("agent {agent} received degree 0 from {from}")]
    ZeroDegree { agent: usize, from: usize },
    #[error("expected {expected} agents, got {found}")]
    AgentCount { expected: usize, found: usize },
    #[error("{variant} produced a non-finite iterate at iteration {iteration}")]
    Diverged {
        variant: ConsensusVariant,
        iteration: usize,
    },
    #[error("unknown consensus variant {0:?} (expected dmvf, ave, one, dgd or extra)")]
    UnknownVariant(String),
    #[error("invalid consensus parameters: {0}")]
    InvalidParameters(String),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Length-N importance scores, one per agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScoreVector(pub Vec<f64>);

impl ScoreVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for ScoreVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsensusVariant {
    /// Degree-weighted update, then max consensus.
    Dmvf,
    /// Plain average update, then max consensus.
    Ave,
    /// Own score only, then max consensus.
    One,
    Dgd,
    Extra,
}

impl ConsensusVariant {
    pub const ALL: [ConsensusVariant; 5] = [Self::Dmvf, Self::Ave, Self::One, Self::Dgd, Self::Extra];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Dmvf => "dmvf",
            Self::Ave => "ave",
            Self::One => "one",
            Self::Dgd => "dgd",
            Self::Extra => "extra",
        }
    }

    pub fn is_max_consensus(self) -> bool {
        matches!(self, Self::Dmvf | Self::Ave | Self::One)
    }
}

impl fmt::Display for ConsensusVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConsensusVariant {
    type Err = ConsensusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| ConsensusError::UnknownVariant(s.to_string()))
    }
}

/// Stop when both the change between consecutive iterates and the spread
/// across agents (infinity norms) fall below `tolerance`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsensusParams {
    /// DGD stepsize at iteration t is `gamma0 / (t + 1)`.
    pub gamma0: f64,
    pub extra_alpha: f64,
    pub stop: StopRule,
}

impl Default for ConsensusParams {
    fn default() -> Self {
        Self {
            gamma0: 0.5,
            extra_alpha: 0.1,
            stop: StopRule::default(),
        }
    }
}

impl ConsensusParams {
    pub fn validate(&self) -> Result<(), ConsensusError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.gamma0) || !positive(self.extra_alpha) || !positive(self.stop.tolerance) {
            return Err(ConsensusError::InvalidParameters(
                "gamma0, extra_alpha and tolerance must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusReport {
    pub variant: ConsensusVariant,
    /// The agreed vector (agent average for the gradient methods).
    pub scores: ScoreVector,
    /// Every agent's vector when the algorithm stopped.
    pub per_agent: Vec<ScoreVector>,
    pub iterations: usize,
    pub message_rounds: usize,
    /// Final stop-rule quantity; 0 for exact max consensus.
    pub residual: f64,
}

#[derive(Debug, Serialize)]
struct ReportRow {
    variant: ConsensusVariant,
    iterations: usize,
    message_rounds: usize,
    residual: f64,
}

/// One CSV row per report: variant, iterations, message_rounds, residual.
pub fn write_reports_csv<W: io::Write>(reports: &[ConsensusReport], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in reports {
        w.serialize(ReportRow {
            variant: r.variant,
            iterations: r.iterations,
            message_rounds: r.message_rounds,
            residual: r.residual,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// A score received from a neighborhood member, with that member's degree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Received {
    pub score: f64,
    pub degree: usize,
}

/// `(sender, vector)` pairs delivered to one agent, ordered by sender.
pub type Inbox = Vec<(usize, Vec<f64>)>;

/// Synchronous neighbor-to-neighbor transport used by the protocols.
pub trait Exchange {
    fn graph(&self) -> &CommGraph;

    /// Each agent sends its vector to every neighbor; returns every agent's
    /// received `(sender, vector)` pairs ordered by sender.
    fn share(&mut self, vectors: &[Vec<f64>]) -> Result<Vec<Inbox>, ConsensusError>;

    /// Each agent `i` sends `x0_ij` and its degree to every neighbor `j`;
    /// returns, for every agent `j`, what each member of `V_j` (including
    /// `j` itself) said about `j`.
    fn share_initial(&mut self, sets: &[InitialScoreSet]) -> Result<Vec<BTreeMap<usize, Received>>, ConsensusError>;
}

/// Direct in-memory delivery with no accounting.
#[derive(Debug, Clone, Copy)]
pub struct DirectExchange<'a> {
    pub graph: &'a CommGraph,
}

fn own_entries(sets: &[InitialScoreSet]) -> Vec<BTreeMap<usize, Received>> {
    sets.iter()
        .enumerate()
        .map(|(j, s)| {
            let mut m = BTreeMap::new();
            if let Some(&score) = s.scores.get(&j) {
                m.insert(
                    j,
                    Received {
                        score,
                        degree: s.degree,
                    },
                );
            }
            m
        })
        .collect()
}

fn check_count(expected: usize, found: usize) -> Result<(), ConsensusError> {
    if expected == found {
        Ok(())
    } else {
        Err(ConsensusError::AgentCount { expected, found })
    }
}

impl Exchange for DirectExchange<'_> {
    fn graph(&self) -> &CommGraph {
        self.graph
    }

    fn share(&mut self, vectors: &[Vec<f64>]) -> Result<Vec<Inbox>, ConsensusError> {
        check_count(self.graph.n(), vectors.len())?;
        Ok((0..self.graph.n())
            .map(|i| {
                self.graph
                    .neighbors(i)
                    .iter()
                    .map(|&j| (j, vectors[j].clone()))
                    .collect()
            })
            .collect())
    }

    fn share_initial(&mut self, sets: &[InitialScoreSet]) -> Result<Vec<BTreeMap<usize, Received>>, ConsensusError> {
        check_count(self.graph.n(), sets.len())?;
        let mut out = own_entries(sets);
        for (j, entry) in out.iter_mut().enumerate() {
            for &i in self.graph.neighbors(j) {
                if let Some(&score) = sets[i].scores.get(&j) {
                    entry.insert(
                        i,
                        Received {
                            score,
                            degree: sets[i].degree,
                        },
                    );
                }
            }
        }
        Ok(out)
    }
}

impl Exchange for Network {
    fn graph(&self) -> &CommGraph {
        Network::graph(self)
    }

    fn share(&mut self, vectors: &[Vec<f64>]) -> Result<Vec<Inbox>, ConsensusError> {
        check_count(self.graph().n(), vectors.len())?;
        let inboxes = self.broadcast(|i| Payload::ScoreVec(vectors[i].clone()))?;
        Ok(inboxes
            .into_iter()
            .map(|inbox| {
                inbox
                    .into_iter()
                    .filter_map(|m| match m.payload {
                        Payload::ScoreVec(v) => Some((m.src, v)),
                        _ => None,
                    })
                    .collect()
            })
            .collect())
    }

    fn share_initial(&mut self, sets: &[InitialScoreSet]) -> Result<Vec<BTreeMap<usize, Received>>, ConsensusError> {
        let n = self.graph().n();
        check_count(n, sets.len())?;
        let outboxes = (0..n)
            .map(|i| {
                self.graph()
                    .neighbors(i)
                    .iter()
                    .map(|&j| {
                        Message::new(
                            i,
                            j,
                            Payload::InitialScore {
                                score: sets[i].get(j),
                                degree: sets[i].degree,
                            },
                        )
                    })
                    .collect()
            })
            .collect();
        let inboxes = self.exchange_round(outboxes)?;
        let mut out = own_entries(sets);
        for (j, inbox) in inboxes.into_iter().enumerate() {
            for m in inbox {
                if let Payload::InitialScore { score, degree } = m.payload {
                    out[j].insert(m.src, Received { score, degree });
                }
            }
        }
        Ok(out)
    }
}

fn collect_members<'a>(
    agent: usize,
    members: &[usize],
    received: &'a BTreeMap<usize, Received>,
) -> Result<Vec<&'a Received>, ConsensusError> {
    members
        .iter()
        .map(|&j| received.get(&j).ok_or(ConsensusError::MissingEntry { agent, from: j }))
        .collect()
}

/// `x_i = sum_j x0_ji / n_j / sum_j 1 / n_j` over `j` in `members` (`V_i`).
pub fn weighted_update(
    agent: usize,
    members: &[usize],
    received: &BTreeMap<usize, Received>,
) -> Result<f64, ConsensusError> {
    let entries = collect_members(agent, members, received)?;
    if let [only] = entries.as_slice() {
        return Ok(only.score);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (r, &from) in entries.iter().zip(members) {
        if r.degree == 0 {
            return Err(ConsensusError::ZeroDegree { agent, from });
        }
        let w = 1.0 / r.degree as f64;
        num += w * r.score;
        den += w;
    }
    Ok(num / den)
}

/// `x_i = sum_j x0_ji / (n_i + 1)` over `j` in `members` (`V_i`).
pub fn ave_update(
    agent: usize,
    members: &[usize],
    received: &BTreeMap<usize, Received>,
    degree: usize,
) -> Result<f64, ConsensusError> {
    let entries = collect_members(agent, members, received)?;
    Ok(entries.iter().map(|r| r.score).sum::<f64>() / (degree + 1) as f64)
}

/// `x_i = x0_ii`.
pub fn one_update(own_score: f64) -> f64 {
    own_score
}

/// Runs `rounds` synchronous rounds of elementwise max with neighbors.
pub fn max_consensus_rounds(
    exchange: &mut dyn Exchange,
    mut vectors: Vec<Vec<f64>>,
    rounds: usize,
) -> Result<Vec<Vec<f64>>, ConsensusError> {
    for _ in 0..rounds {
        let inboxes = exchange.share(&vectors)?;
        for (mine, inbox) in vectors.iter_mut().zip(inboxes) {
            for (_, theirs) in inbox {
                for (a, b) in mine.iter_mut().zip(theirs) {
                    *a = a.max(b);
                }
            }
        }
    }
    Ok(vectors)
}

/// Agent `i` starts with `values[i]` at position `i` and zeros elsewhere;
/// after `diameter` rounds every agent holds `values`.
pub fn maximal_consensus(
    variant: ConsensusVariant,
    values: &[f64],
    exchange: &mut dyn Exchange,
) -> Result<ConsensusReport, ConsensusError> {
    let n = exchange.graph().n();
    check_count(n, values.len())?;
    let diameter = exchange.graph().diameter().map_err(|_| ConsensusError::Disconnected)?;
    let local = (0..n)
        .map(|i| {
            let mut v = vec![0.0; n];
            v[i] = values[i];
            v
        })
        .collect();
    let finals = max_consensus_rounds(exchange, local, diameter)?;
    let scores = finals.first().cloned().unwrap_or_default();
    debug_assert!(finals.iter().all(|v| *v == scores));
    Ok(ConsensusReport {
        variant,
        scores: ScoreVector(scores),
        per_agent: finals.into_iter().map(ScoreVector).collect(),
        iterations: diameter,
        message_rounds: diameter,
        residual: 0.0,
    })
}

/// Row-stochastic mixing matrix: `1/(dmax+1)` on edges, the remainder on
/// the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusMatrix {
    n: usize,
    values: Vec<f64>,
}

impl ConsensusMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }
}

pub fn build_consensus_matrix(graph: &CommGraph) -> ConsensusMatrix {
    let n = graph.n();
    let scale = (graph.max_degree() + 1) as f64;
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for &j in graph.neighbors(i) {
            values[i * n + j] = 1.0 / scale;
        }
        values[i * n + i] = (scale - graph.degree(i) as f64) / scale;
    }
    ConsensusMatrix { n, values }
}

/// Dense `x0` table: `x0[i][j]` is agent `i`'s initial score for `j`.
pub fn initial_table(sets: &[InitialScoreSet]) -> Vec<Vec<f64>> {
    let n = sets.len();
    sets.iter().map(|s| (0..n).map(|j| s.get(j)).collect()).collect()
}

/// `sum_i (1/n_i) sum_{j in N(i)} (x_j - x0_ij)^2`.
pub fn objective(x: &[f64], x0: &[Vec<f64>], graph: &CommGraph) -> f64 {
    (0..graph.n())
        .filter(|&i| graph.degree(i) > 0)
        .map(|i| {
            let s: f64 = graph.neighbors(i).iter().map(|&j| (x[j] - x0[i][j]).powi(2)).sum();
            s / graph.degree(i) as f64
        })
        .sum()
}

/// Gradient of agent `i`'s term of [`objective`] at `x`.
pub fn local_gradient(i: usize, x: &[f64], x0: &[Vec<f64>], graph: &CommGraph) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let d = graph.degree(i);
    if d > 0 {
        for &j in graph.neighbors(i) {
            g[j] = 2.0 / d as f64 * (x[j] - x0[i][j]);
        }
    }
    g
}

pub fn objective_gradient(x: &[f64], x0: &[Vec<f64>], graph: &CommGraph) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    for i in 0..graph.n() {
        for (a, b) in g.iter_mut().zip(local_gradient(i, x, x0, graph)) {
            *a += b;
        }
    }
    g
}

/// Closed-form minimizer of [`objective`]: per coordinate, the
/// `1/n_i`-weighted mean of the neighbors' estimates. A coordinate nobody
/// else estimates keeps the owner's own score.
pub fn oracle_solve(x0: &[Vec<f64>], graph: &CommGraph) -> ScoreVector {
    let n = graph.n();
    ScoreVector(
        (0..n)
            .map(|j| {
                let (mut num, mut den) = (0.0, 0.0);
                for &i in graph.neighbors(j) {
                    let w = 1.0 / graph.degree(i) as f64;
                    num += w * x0[i][j];
                    den += w;
                }
                if den > 0.0 {
                    num / den
                } else {
                    x0[j][j]
                }
            })
            .collect(),
    )
}

/// Agent `i` starts from its own estimates over `V_i`, zero elsewhere.
fn starting_iterates(x0: &[Vec<f64>], graph: &CommGraph) -> Vec<Vec<f64>> {
    (0..graph.n())
        .map(|i| {
            let mut v = vec![0.0; graph.n()];
            for j in graph.neighborhood(i) {
                v[j] = x0[i][j];
            }
            v
        })
        .collect()
}

/// `P x` computed from each agent's own vector and what its neighbors sent.
fn mix(exchange: &mut dyn Exchange, p: &ConsensusMatrix, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, ConsensusError> {
    let inboxes = exchange.share(xs)?;
    Ok(xs
        .iter()
        .zip(inboxes)
        .enumerate()
        .map(|(i, (own, inbox))| {
            let mut out: Vec<f64> = own.iter().map(|v| p.get(i, i) * v).collect();
            for (j, theirs) in inbox {
                let w = p.get(i, j);
                for (o, t) in out.iter_mut().zip(theirs) {
                    *o += w * t;
                }
            }
            out
        })
        .collect())
}

fn gradients(xs: &[Vec<f64>], x0: &[Vec<f64>], graph: &CommGraph) -> Vec<Vec<f64>> {
    xs.iter()
        .enumerate()
        .map(|(i, x)| local_gradient(i, x, x0, graph))
        .collect()
}

fn mean(xs: &[Vec<f64>]) -> Vec<f64> {
    let n = xs.len() as f64;
    let mut m = vec![0.0; xs.first().map_or(0, Vec::len)];
    for x in xs {
        for (a, b) in m.iter_mut().zip(x) {
            *a += b / n;
        }
    }
    m
}

fn max_change(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max)
}

fn disagreement(xs: &[Vec<f64>]) -> f64 {
    let m = mean(xs);
    xs.iter()
        .flat_map(|x| x.iter().zip(&m).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max)
}

struct Tracker {
    variant: ConsensusVariant,
    stop: StopRule,
    residual: f64,
}

impl Tracker {
    /// Records a step from `prev` to `next`; true once the stop rule fires.
    fn step(&mut self, iteration: usize, prev: &[Vec<f64>], next: &[Vec<f64>]) -> Result<bool, ConsensusError> {
        if next.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ConsensusError::Diverged {
                variant: self.variant,
                iteration,
            });
        }
        let change = max_change(prev, next);
        let spread = disagreement(next);
        self.residual = change.max(spread);
        Ok(change < self.stop.tolerance && spread < self.stop.tolerance)
    }

    fn report(self, xs: Vec<Vec<f64>>, iterations: usize) -> ConsensusReport {
        ConsensusReport {
            variant: self.variant,
            scores: ScoreVector(mean(&xs)),
            per_agent: xs.into_iter().map(ScoreVector).collect(),
            iterations,
            message_rounds: iterations,
            residual: self.residual,
        }
    }
}

/// Decentralized gradient descent with diminishing stepsize
/// `gamma0 / (t + 1)`.
pub fn dgd_solve(
    x0: &[Vec<f64>],
    exchange: &mut dyn Exchange,
    gamma0: f64,
    stop: StopRule,
) -> Result<ConsensusReport, ConsensusError> {
    let graph = exchange.graph().clone();
    graph.require_connected()?;
    check_count(graph.n(), x0.len())?;
    let p = build_consensus_matrix(&graph);
    let mut xs = starting_iterates(x0, &graph);
    let mut tracker = Tracker {
        variant: ConsensusVariant::Dgd,
        stop,
        residual: f64::INFINITY,
    };
    let mut iterations = 0;
    while iterations < stop.max_iterations {
        let step = gamma0 / (iterations + 1) as f64;
        let mixed = mix(exchange, &p, &xs)?;
        let grads = gradients(&xs, x0, &graph);
        let next: Vec<Vec<f64>> = mixed
            .into_iter()
            .zip(grads)
            .map(|(m, g)| m.iter().zip(g).map(|(a, b)| a - step * b).collect())
            .collect();
        iterations += 1;
        let done = tracker.step(iterations, &xs, &next)?;
        xs = next;
        if done {
            break;
        }
    }
    Ok(tracker.report(xs, iterations))
}

/// EXTRA with constant stepsize `alpha`: one plain gradient step, then
/// `x2 = (I+P) x1 - (I+P)/2 x0 - alpha (grad(x1) - grad(x0))`.
pub fn extra_solve(
    x0: &[Vec<f64>],
    exchange: &mut dyn Exchange,
    alpha: f64,
    stop: StopRule,
) -> Result<ConsensusReport, ConsensusError> {
    let graph = exchange.graph().clone();
    graph.require_connected()?;
    check_count(graph.n(), x0.len())?;
    let p = build_consensus_matrix(&graph);
    let mut tracker = Tracker {
        variant: ConsensusVariant::Extra,
        stop,
        residual: f64::INFINITY,
    };
    let mut prev = starting_iterates(x0, &graph);
    if stop.max_iterations == 0 {
        return Ok(tracker.report(prev, 0));
    }
    let mut prev_mixed = mix(exchange, &p, &prev)?;
    let mut prev_grad = gradients(&prev, x0, &graph);
    let mut cur: Vec<Vec<f64>> = prev_mixed
        .iter()
        .zip(&prev_grad)
        .map(|(m, g)| m.iter().zip(g).map(|(a, b)| a - alpha * b).collect())
        .collect();
    let mut iterations = 1;
    if tracker.step(iterations, &prev, &cur)? {
        return Ok(tracker.report(cur, iterations));
    }
    while iterations < stop.max_iterations {
        let cur_mixed = mix(exchange, &p, &cur)?;
        let cur_grad = gradients(&cur, x0, &graph);
        let next: Vec<Vec<f64>> = (0..cur.len())
            .map(|i| {
                (0..cur[i].len())
                    .map(|k| {
                        // (I+P)x1 - (I+P)/2 x0, written with the mixed vectors.
                        let m1 = cur[i][k] + cur_mixed[i][k];
                        let m0 = (prev[i][k] + prev_mixed[i][k]) / 2.0;
                        m1 - m0 - alpha * (cur_grad[i][k] - prev_grad[i][k])
                    })
                    .collect()
            })
            .collect();
        iterations += 1;
        let done = tracker.step(iterations, &cur, &next)?;
        prev = std::mem::replace(&mut cur, next);
        prev_mixed = cur_mixed;
        prev_grad = cur_grad;
        if done {
            break;
        }
    }
    Ok(tracker.report(cur, iterations))
}

/// Full score-agreement protocol for one period, starting from every
/// agent's initial score set (indexed by owner).
pub fn run_consensus(
    variant: ConsensusVariant,
    initial: &[InitialScoreSet],
    exchange: &mut dyn Exchange,
    params: &ConsensusParams,
) -> Result<ConsensusReport, ConsensusError> {
    params.validate()?;
    let graph = exchange.graph().clone();
    check_count(graph.n(), initial.len())?;
    graph.require_connected().map_err(|_| ConsensusError::Disconnected)?;
    match variant {
        ConsensusVariant::Dmvf | ConsensusVariant::Ave => {
            let received = exchange.share_initial(initial)?;
            let values = (0..graph.n())
                .map(|i| {
                    let members = graph.neighborhood(i);
                    if variant == ConsensusVariant::Dmvf {
                        weighted_update(i, &members, &received[i])
                    } else {
                        ave_update(i, &members, &received[i], graph.degree(i))
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            let mut report = maximal_consensus(variant, &values, exchange)?;
            report.iterations += 1;
            report.message_rounds += 1;
            Ok(report)
        }
        ConsensusVariant::One => {
            let values: Vec<f64> = initial.iter().enumerate().map(|(i, s)| one_update(s.get(i))).collect();
            maximal_consensus(variant, &values, exchange)
        }
        ConsensusVariant::Dgd => dgd_solve(&initial_table(initial), exchange, params.gamma0, params.stop),
        ConsensusVariant::Extra => extra_solve(&initial_table(initial), exchange, params.extra_alpha, params.stop),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::erdos_renyi;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn received(entries: &[(usize, f64, usize)]) -> BTreeMap<usize, Received> {
        entries
            .iter()
            .map(|&(j, score, degree)| (j, Received { score, degree }))
            .collect()
    }

    #[test]
    fn weighted_update_examples() {
        let r = received(&[(0, 0.8, 1), (1, 0.2, 2)]);
        assert!((weighted_update(0, &[0, 1], &r).unwrap() - 0.6).abs() < 1e-12);
        let r = received(&[(0, 0.3, 2), (1, 0.5, 2), (2, 0.7, 2)]);
        assert!((weighted_update(0, &[0, 1, 2], &r).unwrap() - 0.5).abs() < 1e-12);
        let r = received(&[(4, 0.42, 0)]);
        assert_eq!(weighted_update(4, &[4], &r).unwrap(), 0.42);
        assert!(matches!(
            weighted_update(0, &[0, 1, 2], &received(&[(0, 0.3, 2), (1, 0.5, 2)])),
            Err(ConsensusError::MissingEntry { agent: 0, from: 2 })
        ));
    }

    #[test]
    fn ave_update_examples() {
        let r = received(&[(3, 0.4, 1), (5, 0.6, 1)]);
        assert!((ave_update(3, &[3, 5], &r, 1).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(ave_update(0, &[0], &received(&[(0, 0.7, 0)]), 0).unwrap(), 0.7);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let d = rng.random_range(1..6);
            let entries: Vec<(usize, f64, usize)> = (0..=d).map(|j| (j, rng.random::<f64>(), d)).collect();
            let members: Vec<usize> = (0..=d).collect();
            let r = received(&entries);
            let a = ave_update(0, &members, &r, d).unwrap();
            let w = weighted_update(0, &members, &r).unwrap();
            assert!((a - w).abs() < 1e-12);
        }
    }

    #[test]
    fn one_update_is_identity() {
        for v in [0.0, 0.3, 1.0] {
            assert_eq!(one_update(v), v);
        }
    }

    #[test]
    fn max_consensus_path_trace() {
        let g = CommGraph::path(3);
        let mut ex = DirectExchange { graph: &g };
        let start = vec![vec![0.3, 0.0, 0.0], vec![0.0, 0.9, 0.0], vec![0.0, 0.0, 0.5]];
        let one = max_consensus_rounds(&mut ex, start.clone(), 1).unwrap();
        assert_eq!(one[0], vec![0.3, 0.9, 0.0]);
        let two = max_consensus_rounds(&mut ex, start, 2).unwrap();
        assert_eq!(two[0], vec![0.3, 0.9, 0.5]);
        assert!(two.iter().all(|v| *v == two[0]));
    }

    #[test]
    fn max_consensus_complete_graph_one_round() {
        let g = CommGraph::complete(5);
        let values = [0.1, 0.5, 0.2, 0.9, 0.3];
        let report = maximal_consensus(ConsensusVariant::Dmvf, &values, &mut DirectExchange { graph: &g }).unwrap();
        assert_eq!(report.message_rounds, 1);
        assert_eq!(report.scores.as_slice(), &values);
    }

    #[test]
    fn max_consensus_fixed_point() {
        let g = CommGraph::ring(5);
        let same = vec![vec![0.2, 0.4, 0.6, 0.8, 1.0]; 5];
        let out = max_consensus_rounds(&mut DirectExchange { graph: &g }, same.clone(), 3).unwrap();
        assert_eq!(out, same);
    }

    #[test]
    fn max_consensus_rejects_disconnected() {
        let g = CommGraph::new(3, [(0, 1)]).unwrap();
        assert!(matches!(
            maximal_consensus(
                ConsensusVariant::One,
                &[0.1, 0.2, 0.3],
                &mut DirectExchange { graph: &g }
            ),
            Err(ConsensusError::Disconnected)
        ));
    }

    #[test]
    fn matrix_examples() {
        let star = build_consensus_matrix(&CommGraph::star(4));
        assert!((star.get(0, 1) - 0.25).abs() < 1e-15);
        assert!((star.get(0, 0) - 0.25).abs() < 1e-15);
        assert!((star.get(1, 1) - 0.75).abs() < 1e-15);
        assert_eq!(star.get(1, 2), 0.0);
        let single = build_consensus_matrix(&CommGraph::complete(1));
        assert_eq!(single.row(0), &[1.0]);
        for seed in 0..20 {
            let g = erdos_renyi(7, 0.4, seed).unwrap();
            let p = build_consensus_matrix(&g);
            for i in 0..7 {
                assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for j in 0..7 {
                    assert_eq!(p.get(i, j) > 0.0, i == j || g.has_edge(i, j), "({i},{j})");
                }
            }
        }
    }

    fn random_instance(seed: u64) -> (CommGraph, Vec<Vec<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(3..=10);
        let g = erdos_renyi(n, rng.random_range(0.3..0.9), seed).unwrap();
        let mut x0 = vec![vec![0.0; n]; n];
        for (i, row) in x0.iter_mut().enumerate() {
            for j in g.neighborhood(i) {
                row[j] = rng.random();
            }
        }
        (g, x0)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for seed in 0..10 {
            let (g, x0) = random_instance(seed);
            let x: Vec<f64> = (0..g.n()).map(|_| rng.random_range(-1.0..2.0)).collect();
            let grad = objective_gradient(&x, &x0, &g);
            let h = 1e-6;
            for k in 0..g.n() {
                let (mut a, mut b) = (x.clone(), x.clone());
                a[k] += h;
                b[k] -= h;
                let fd = (objective(&a, &x0, &g) - objective(&b, &x0, &g)) / (2.0 * h);
                assert!((fd - grad[k]).abs() <= 1e-6 * grad[k].abs().max(1.0));
            }
        }
    }

    #[test]
    fn oracle_is_stationary() {
        for seed in 0..10 {
            let (g, x0) = random_instance(seed);
            let xs = oracle_solve(&x0, &g);
            let h = 1e-5;
            for k in 0..g.n() {
                let (mut a, mut b) = (xs.0.clone(), xs.0.clone());
                a[k] += h;
                b[k] -= h;
                let fd = (objective(&a, &x0, &g) - objective(&b, &x0, &g)) / (2.0 * h);
                assert!(fd.abs() < 1e-10, "seed {seed} coord {k}: {fd}");
            }
        }
    }

    fn constant_instance(g: &CommGraph, c: f64) -> Vec<Vec<f64>> {
        (0..g.n())
            .map(|i| {
                let mut row = vec![0.0; g.n()];
                for j in g.neighborhood(i) {
                    row[j] = c;
                }
                row
            })
            .collect()
    }

    #[test]
    fn constant_scores_give_constant_minimizer() {
        let g = erdos_renyi(6, 0.5, 1).unwrap();
        let x0 = constant_instance(&g, 0.7);
        assert!(oracle_solve(&x0, &g).0.iter().all(|v| (v - 0.7).abs() < 1e-15));
        let extra = extra_solve(&x0, &mut DirectExchange { graph: &g }, 0.1, StopRule::default()).unwrap();
        assert!(extra.scores.0.iter().all(|v| (v - 0.7).abs() < 1e-6));
        let dgd = dgd_solve(&x0, &mut DirectExchange { graph: &g }, 0.5, StopRule::default()).unwrap();
        // DGD moves toward the constant but its stepsize decays too fast to
        // get close; only check it improves on the start.
        let start = mean(&starting_iterates(&x0, &g));
        let err = |v: &[f64]| v.iter().map(|x| (x - 0.7).abs()).fold(0.0, f64::max);
        assert!(err(&dgd.scores.0) < err(&start));
    }

    #[test]
    fn extra_matches_oracle() {
        for seed in 0..5 {
            let (g, x0) = random_instance(seed);
            let report = extra_solve(&x0, &mut DirectExchange { graph: &g }, 0.1, StopRule::default()).unwrap();
            let oracle = oracle_solve(&x0, &g);
            let err = report
                .scores
                .0
                .iter()
                .zip(&oracle.0)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-4, "seed {seed}: {err}");
            assert!(report.iterations < StopRule::default().max_iterations);
            assert!(disagreement(&report.per_agent.iter().map(|v| v.0.clone()).collect::<Vec<_>>()) < 1e-8);
        }
    }

    #[test]
    fn solvers_report_divergence() {
        let (g, x0) = random_instance(3);
        let err = extra_solve(&x0, &mut DirectExchange { graph: &g }, 1e200, StopRule::default()).unwrap_err();
        assert!(matches!(
            err,
            ConsensusError::Diverged {
                variant: ConsensusVariant::Extra,
                ..
            }
        ));
    }

    fn score_sets(g: &CommGraph, x0: &[Vec<f64>]) -> Vec<InitialScoreSet> {
        (0..g.n())
            .map(|i| InitialScoreSet {
                owner: i,
                degree: g.degree(i),
                scores: g.neighborhood(i).into_iter().map(|j| (j, x0[i][j])).collect(),
            })
            .collect()
    }

    #[test]
    fn one_equals_max_consensus_over_own_scores() {
        let (g, x0) = random_instance(8);
        let sets = score_sets(&g, &x0);
        let report = run_consensus(
            ConsensusVariant::One,
            &sets,
            &mut DirectExchange { graph: &g },
            &ConsensusParams::default(),
        )
        .unwrap();
        let own: Vec<f64> = (0..g.n()).map(|i| x0[i][i]).collect();
        assert_eq!(report.scores.0, own);
        assert_eq!(report.message_rounds, g.diameter().unwrap());
    }

    #[test]
    fn dmvf_applies_weighted_update_per_agent() {
        let g = CommGraph::star(4);
        let x0: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..4).map(|j| ((i * 4 + j) as f64) / 16.0).collect())
            .collect();
        let sets = score_sets(&g, &x0);
        let report = run_consensus(
            ConsensusVariant::Dmvf,
            &sets,
            &mut DirectExchange { graph: &g },
            &ConsensusParams::default(),
        )
        .unwrap();
        for (j, &score) in report.scores.0.iter().enumerate() {
            let (mut num, mut den) = (0.0, 0.0);
            for i in g.neighborhood(j) {
                num += x0[i][j] / g.degree(i) as f64;
                den += 1.0 / g.degree(i) as f64;
            }
            assert!((score - num / den).abs() < 1e-12);
        }
        assert_eq!(report.message_rounds, 1 + 2);
    }

    #[test]
    fn network_and_direct_exchange_agree() {
        for variant in ConsensusVariant::ALL {
            let (g, x0) = random_instance(11);
            let sets = score_sets(&g, &x0);
            let params = ConsensusParams::default();
            let direct = run_consensus(variant, &sets, &mut DirectExchange { graph: &g }, &params).unwrap();
            let mut net = Network::new(g.clone());
            net.begin_period();
            let networked = run_consensus(variant, &sets, &mut net, &params).unwrap();
            assert_eq!(direct, networked, "{variant}");
            let t = net.ledger().total();
            assert_eq!(t.rounds as usize, networked.message_rounds);
            assert_eq!(t.frames_sent, 0);
            assert_eq!(t.score_messages, t.messages);
        }
    }

    #[test]
    fn scale_equivariance() {
        let (g, x0) = random_instance(5);
        let lambda = 0.37;
        let scaled: Vec<Vec<f64>> = x0.iter().map(|r| r.iter().map(|v| v * lambda).collect()).collect();
        let params = ConsensusParams::default();
        for variant in ConsensusVariant::ALL {
            let a = run_consensus(
                variant,
                &score_sets(&g, &x0),
                &mut DirectExchange { graph: &g },
                &params,
            )
            .unwrap();
            let b = run_consensus(
                variant,
                &score_sets(&g, &scaled),
                &mut DirectExchange { graph: &g },
                &params,
            )
            .unwrap();
            for (u, v) in a.scores.0.iter().zip(&b.scores.0) {
                // The gradient methods stop on an absolute tolerance.
                let tol = if variant.is_max_consensus() { 1e-12 } else { 1e-3 };
                assert!((u * lambda - v).abs() < tol, "{variant}: {u} vs {v}");
            }
        }
    }

    #[test]
    fn variant_parsing() {
        for v in ConsensusVariant::ALL {
            assert_eq!(v.as_str().parse::<ConsensusVariant>().unwrap(), v);
        }
        assert!("gossip".parse::<ConsensusVariant>().is_err());
    }

    #[test]
    fn report_csv() {
        let g = CommGraph::path(3);
        let report = maximal_consensus(
            ConsensusVariant::One,
            &[0.1, 0.2, 0.3],
            &mut DirectExchange { graph: &g },
        )
        .unwrap();
        let mut out = Vec::new();
        write_reports_csv(&[report], &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "variant,iterations,message_rounds,residual\none,2,2,0.0\n"
        );
    }
}
