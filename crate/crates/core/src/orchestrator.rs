//! Period-by-period driver: fast-forward, exchange buffers, score, agree,
//! reassign strategies. Also the evaluation metrics.

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{fast_forward_period, SelectionBuffer, SkipPolicy, StrategyKind};
use crate::consensus::{run_consensus, ConsensusError, ConsensusParams, ConsensusVariant, ScoreVector};
use crate::netsim::{measure_communication, CommGraph, CommLedger, CommReport, NetError, Network, Payload, Phase};
use crate::scoring::{initial_scores, ScoringError, DEFAULT_ALPHA};
use crate::stream::Scene;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("invalid requirement {0:?}: expected X/Y/Z with nonnegative integers")]
    RequirementSyntax(String),
    #[error("requirement {requirement} sums to {sum}, but there are {agents} agents")]
    RequirementSize {
        requirement: SystemRequirement,
        sum: usize,
        agents: usize,
    },
    #[error("score vector has {found} entries for {expected} agents")]
    ScoreLength { expected: usize, found: usize },
    #[error("graph has {graph} agents but the scene has {scene} views")]
    GraphSize { graph: usize, scene: usize },
    #[error("period length must be at least 1")]
    ZeroPeriod,
    #[error("window, alpha or period misconfigured: {0}")]
    InvalidConfig(String),
    #[error("period {period}: {source}")]
    Scoring {
        period: usize,
        #[source]
        source: ScoringError,
    },
    #[error("period {period}: {source}")]
    Consensus {
        period: usize,
        #[source]
        source: ConsensusError,
    },
    #[error("period {period}: {source}")]
    Net {
        period: usize,
        #[source]
        source: NetError,
    },
}

/// Number of agents required on each strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SystemRequirement {
    pub fast: usize,
    pub normal: usize,
    pub slow: usize,
}

impl SystemRequirement {
    pub fn new(fast: usize, normal: usize, slow: usize) -> Self {
        Self { fast, normal, slow }
    }

    pub fn total(&self) -> usize {
        self.fast + self.normal + self.slow
    }

    pub fn count(&self, kind: StrategyKind) -> usize {
        match kind {
            StrategyKind::Fast => self.fast,
            StrategyKind::Normal => self.normal,
            StrategyKind::Slow => self.slow,
        }
    }

    pub fn check(&self, agents: usize) -> Result<(), OrchestratorError> {
        if self.total() == agents {
            Ok(())
        } else {
            Err(OrchestratorError::RequirementSize {
                requirement: *self,
                sum: self.total(),
                agents,
            })
        }
    }

    /// Whether `assignment` has exactly the required counts.
    pub fn is_met_by(&self, assignment: &[StrategyKind]) -> bool {
        StrategyKind::ALL
            .iter()
            .all(|&k| assignment.iter().filter(|&&a| a == k).count() == self.count(k))
    }
}

impl fmt::Display for SystemRequirement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.fast, self.normal, self.slow)
    }
}

impl FromStr for SystemRequirement {
    type Err = OrchestratorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.trim().split('/').collect();
        let bad = || OrchestratorError::RequirementSyntax(s.to_string());
        if parts.len() != 3 {
            return Err(bad());
        }
        let nums = parts
            .iter()
            .map(|p| p.trim().parse::<usize>().map_err(|_| bad()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(nums[0], nums[1], nums[2]))
    }
}

impl Serialize for SystemRequirement {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SystemRequirement {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Ranks agents by score (descending, ties to the lower id): the top
/// `slow` agents go Slow, the next `normal` Normal, the rest Fast.
pub fn select_strategies(scores: &[f64], req: SystemRequirement) -> Result<Vec<StrategyKind>, OrchestratorError> {
    req.check(scores.len())?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut out = vec![StrategyKind::Fast; scores.len()];
    for (rank, &agent) in order.iter().enumerate() {
        out[agent] = if rank < req.slow {
            StrategyKind::Slow
        } else if rank < req.slow + req.normal {
            StrategyKind::Normal
        } else {
            StrategyKind::Fast
        };
    }
    Ok(out)
}

/// Starting assignment: agent `i` takes Fast, Normal, Slow in rotation from
/// position `i mod 3`, skipping kinds whose quota is already filled.
pub fn initial_strategies(req: SystemRequirement) -> Vec<StrategyKind> {
    let mut left = [req.fast, req.normal, req.slow];
    (0..req.total())
        .map(|i| {
            let k = (0..3)
                .map(|d| (i + d) % 3)
                .find(|&k| left[k] > 0)
                .expect("quota remains");
            left[k] -= 1;
            StrategyKind::ALL[k]
        })
        .collect()
}

/// One policy per strategy kind.
#[derive(Debug, Clone)]
pub struct PolicySet {
    pub fast: Arc<dyn SkipPolicy>,
    pub normal: Arc<dyn SkipPolicy>,
    pub slow: Arc<dyn SkipPolicy>,
}

impl PolicySet {
    /// The same policy for every strategy.
    pub fn uniform(policy: Arc<dyn SkipPolicy>) -> Self {
        Self {
            fast: policy.clone(),
            normal: policy.clone(),
            slow: policy,
        }
    }

    pub fn get(&self, kind: StrategyKind) -> &dyn SkipPolicy {
        match kind {
            StrategyKind::Fast => self.fast.as_ref(),
            StrategyKind::Normal => self.normal.as_ref(),
            StrategyKind::Slow => self.slow.as_ref(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coordination {
    Collaborative {
        requirement: SystemRequirement,
        variant: ConsensusVariant,
    },
    /// No communication; every agent keeps `kind` for the whole run.
    Independent { kind: StrategyKind },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub period: usize,
    pub alpha: f64,
    pub window: usize,
    pub consensus: ConsensusParams,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            period: 100,
            alpha: DEFAULT_ALPHA,
            window: 4,
            consensus: ConsensusParams::default(),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        if self.period == 0 {
            return Err(OrchestratorError::ZeroPeriod);
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(OrchestratorError::InvalidConfig(format!(
                "alpha {} must be positive",
                self.alpha
            )));
        }
        self.consensus
            .validate()
            .map_err(|e| OrchestratorError::InvalidConfig(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodRecord {
    pub period: usize,
    pub strategies: Vec<StrategyKind>,
    pub buffers: Vec<Arc<SelectionBuffer>>,
    pub processed: Vec<usize>,
    /// Agreed scores; `None` without communication.
    pub scores: Option<ScoreVector>,
    pub consensus_iterations: usize,
    pub message_rounds: usize,
    pub next_strategies: Vec<StrategyKind>,
}

/// Mutable per-run state carried between periods.
#[derive(Debug, Clone)]
pub struct RunState {
    pub strategies: Vec<StrategyKind>,
    pub offsets: Vec<usize>,
    rngs: Vec<ChaCha8Rng>,
    network: Network,
}

impl RunState {
    pub fn new(graph: CommGraph, strategies: Vec<StrategyKind>, seed: u64) -> Self {
        let n = strategies.len();
        let rngs = (0..n)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                rng
            })
            .collect();
        Self {
            strategies,
            offsets: vec![0; n],
            rngs,
            network: Network::new(graph),
        }
    }

    pub fn ledger(&self) -> &CommLedger {
        self.network.ledger()
    }
}

/// Executes period `t`: every agent fast-forwards its segment, then (when
/// collaborating) neighbors swap selections, score each other, agree on a
/// score vector and pick next period's strategies.
pub fn run_period(
    state: &mut RunState,
    scene: &Scene,
    t: usize,
    policies: &PolicySet,
    coordination: Coordination,
    config: &RunConfig,
) -> Result<PeriodRecord, OrchestratorError> {
    let n = scene.n_views();
    let start = (t * config.period).min(scene.len());
    let end = ((t + 1) * config.period).min(scene.len());
    let strategies = state.strategies.clone();

    let results: Vec<(SelectionBuffer, usize)> = state
        .rngs
        .par_iter_mut()
        .enumerate()
        .map(|(i, rng)| {
            let segment = &scene.stream(i).frames()[start..end];
            fast_forward_period(policies.get(strategies[i]), i, t, segment, state.offsets[i], rng)
        })
        .collect();
    let mut buffers = Vec::with_capacity(n);
    for (i, (buffer, carry)) in results.into_iter().enumerate() {
        state.offsets[i] = carry;
        buffers.push(Arc::new(buffer));
    }
    let processed: Vec<usize> = buffers.iter().map(|b| b.processed_count()).collect();
    state.network.begin_period();

    let (scores, iterations, rounds, next) = match coordination {
        Coordination::Independent { .. } => (None, 0, 0, strategies.clone()),
        Coordination::Collaborative { requirement, variant } => {
            let net_err = |source| OrchestratorError::Net { period: t, source };
            let inboxes = state
                .network
                .broadcast(|i| Payload::SelectedFrames(buffers[i].clone()))
                .map_err(net_err)?;
            let graph = state.network.graph();
            let sets = inboxes
                .par_iter()
                .enumerate()
                .map(|(i, inbox)| {
                    let mut visible: BTreeMap<usize, &SelectionBuffer> = BTreeMap::new();
                    visible.insert(i, buffers[i].as_ref());
                    for m in inbox {
                        if let Payload::SelectedFrames(b) = &m.payload {
                            visible.insert(m.src, b.as_ref());
                        }
                    }
                    initial_scores(i, &visible, graph, config.alpha)
                })
                .collect::<Result<Vec<_>, _>>()
                .map_err(|source| OrchestratorError::Scoring { period: t, source })?;
            state.network.set_phase(Phase::Consensus);
            let report = run_consensus(variant, &sets, &mut state.network, &config.consensus)
                .map_err(|source| OrchestratorError::Consensus { period: t, source })?;
            let next = select_strategies(report.scores.as_slice(), requirement)?;
            (Some(report.scores), report.iterations, report.message_rounds, next)
        }
    };
    state.strategies = next.clone();
    Ok(PeriodRecord {
        period: t,
        strategies,
        buffers,
        processed,
        scores,
        consensus_iterations: iterations,
        message_rounds: rounds,
        next_strategies: next,
    })
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub coverage: f64,
    pub processing_rate: f64,
    pub records: Vec<PeriodRecord>,
    /// Coverage of important frames up to the end of each period.
    pub coverage_so_far: Vec<f64>,
    pub comm: CommReport,
    pub n_agents: usize,
    pub len: usize,
}

impl RunSummary {
    pub fn mean_iterations(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.consensus_iterations as f64).sum::<f64>() / self.records.len() as f64
    }

    pub fn bytes_total(&self) -> u64 {
        self.comm.total.bytes_total
    }

    /// One row per period (strategies, processed counts, coverage so far)
    /// and a final row with coverage, processing rate and bytes.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(writer);
        let mut header = vec!["period".to_string()];
        header.extend((0..self.n_agents).map(|i| format!("strategy_{i}")));
        header.extend((0..self.n_agents).map(|i| format!("processed_{i}")));
        header.push("coverage_so_far".into());
        w.write_record(&header)?;
        for (r, cov) in self.records.iter().zip(&self.coverage_so_far) {
            let mut row = vec![r.period.to_string()];
            row.extend(r.strategies.iter().map(|s| s.to_string()));
            row.extend(r.processed.iter().map(|p| p.to_string()));
            row.push(cov.to_string());
            w.write_record(&row)?;
        }
        w.write_record(["final", "coverage", "processing_rate", "bytes_total"])?;
        w.write_record([
            "final".to_string(),
            self.coverage.to_string(),
            self.processing_rate.to_string(),
            self.bytes_total().to_string(),
        ])?;
        w.flush()?;
        Ok(())
    }
}

/// Runs every period of `scene` and aggregates the metrics.
pub fn run_experiment(
    scene: &Scene,
    graph: &CommGraph,
    policies: &PolicySet,
    coordination: Coordination,
    config: &RunConfig,
) -> Result<RunSummary, OrchestratorError> {
    config.validate()?;
    let n = scene.n_views();
    if graph.n() != n {
        return Err(OrchestratorError::GraphSize {
            graph: graph.n(),
            scene: n,
        });
    }
    let strategies = match coordination {
        Coordination::Collaborative { requirement, .. } => {
            requirement.check(n)?;
            if !graph.is_connected() {
                return Err(OrchestratorError::Consensus {
                    period: 0,
                    source: ConsensusError::Disconnected,
                });
            }
            initial_strategies(requirement)
        }
        Coordination::Independent { kind } => vec![kind; n],
    };
    let mut state = RunState::new(graph.clone(), strategies, config.seed);
    let periods = scene.len().div_ceil(config.period).max(1);
    let mut records = Vec::with_capacity(periods);
    let mut coverage_so_far = Vec::with_capacity(periods);
    let truth = scene.global_truth();
    let mut selected: Vec<usize> = Vec::new();
    for t in 0..periods {
        let record = run_period(&mut state, scene, t, policies, coordination, config)?;
        for b in &record.buffers {
            selected.extend(b.indices());
        }
        let end = ((t + 1) * config.period).min(scene.len());
        coverage_so_far.push(coverage(&selected, &truth[..end], config.window));
        records.push(record);
    }
    let comm = measure_communication(state.ledger(), scene.raw_bytes());
    Ok(RunSummary {
        coverage: coverage(&selected, truth, config.window),
        processing_rate: processing_rate(&records, n, scene.len()),
        records,
        coverage_so_far,
        comm,
        n_agents: n,
        len: scene.len(),
    })
}

/// Fraction of important frames within `window` of some selected index;
/// 1 when nothing is important.
pub fn coverage(selected: &[usize], truth: &[bool], window: usize) -> f64 {
    let total = truth.iter().filter(|&&b| b).count();
    if total == 0 {
        return 1.0;
    }
    // Difference array over the extended intervals.
    let mut diff = vec![0i64; truth.len() + 1];
    for &s in selected {
        let lo = s.saturating_sub(window);
        if lo >= truth.len() {
            continue;
        }
        let hi = (s.saturating_add(window) + 1).min(truth.len());
        diff[lo] += 1;
        diff[hi] -= 1;
    }
    let mut depth = 0;
    let mut covered = 0;
    for (k, &imp) in truth.iter().enumerate() {
        depth += diff[k];
        if imp && depth > 0 {
            covered += 1;
        }
    }
    covered as f64 / total as f64
}

/// Processed frames over all agents and periods, divided by `N * L`.
pub fn processing_rate(records: &[PeriodRecord], n_agents: usize, len: usize) -> f64 {
    if n_agents == 0 || len == 0 {
        return 0.0;
    }
    let processed: usize = records.iter().flat_map(|r| &r.processed).sum();
    processed as f64 / (n_agents * len) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::FixedSkip;
    use crate::stream::{generate_scene, EventSpec, FrameRecord, SceneSpec, VideoStream};

    #[test]
    fn requirement_parsing() {
        let r: SystemRequirement = "3/2/1".parse().unwrap();
        assert_eq!(r, SystemRequirement::new(3, 2, 1));
        assert_eq!(r.to_string(), "3/2/1");
        assert!("3/2".parse::<SystemRequirement>().is_err());
        assert!("a/2/1".parse::<SystemRequirement>().is_err());
        assert!("-1/2/1".parse::<SystemRequirement>().is_err());
    }

    #[test]
    fn select_examples() {
        let all_slow = select_strategies(&[0.3, 0.1, 0.9], SystemRequirement::new(0, 0, 3)).unwrap();
        assert_eq!(all_slow, vec![StrategyKind::Slow; 3]);

        let scores = [0.2, 0.9, 0.4, 0.1, 0.7, 0.3];
        let req = SystemRequirement::new(3, 2, 1);
        let s = select_strategies(&scores, req).unwrap();
        use StrategyKind::*;
        assert_eq!(s, vec![Fast, Slow, Normal, Fast, Normal, Fast]);
        assert!(req.is_met_by(&s));

        let tied = select_strategies(&[0.5; 6], req).unwrap();
        assert_eq!(tied, vec![Slow, Normal, Normal, Fast, Fast, Fast]);

        assert!(matches!(
            select_strategies(&[0.1, 0.2], req),
            Err(OrchestratorError::RequirementSize { .. })
        ));
    }

    #[test]
    fn selection_is_rank_monotone_and_scale_invariant() {
        let scores = [0.31, 0.77, 0.05, 0.42, 0.42, 0.9];
        let req = SystemRequirement::new(2, 3, 1);
        let s = select_strategies(&scores, req).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                if scores[i] > scores[j] {
                    assert!(s[i] >= s[j]);
                }
            }
        }
        let scaled: Vec<f64> = scores.iter().map(|v| v * 7.5).collect();
        assert_eq!(select_strategies(&scaled, req).unwrap(), s);
    }

    #[test]
    fn initial_round_robin() {
        use StrategyKind::*;
        assert_eq!(
            initial_strategies(SystemRequirement::new(2, 2, 2)),
            vec![Fast, Normal, Slow, Fast, Normal, Slow]
        );
        assert_eq!(
            initial_strategies(SystemRequirement::new(3, 2, 1)),
            vec![Fast, Normal, Slow, Fast, Normal, Fast]
        );
        assert_eq!(
            initial_strategies(SystemRequirement::new(5, 0, 1)),
            vec![Fast, Slow, Fast, Fast, Fast, Fast]
        );
    }

    #[test]
    fn coverage_examples() {
        let mut truth = vec![false; 30];
        truth[10] = true;
        truth[20] = true;
        assert_eq!(coverage(&[12], &truth, 2), 0.5);
        assert_eq!(coverage(&[], &truth, 2), 0.0);
        let all: Vec<usize> = (0..30).collect();
        assert_eq!(coverage(&all, &truth, 0), 1.0);
        assert_eq!(coverage(&[3], &[false; 5], 1), 1.0);
        assert_eq!(coverage(&[100], &truth, 4), 0.0);
    }

    #[test]
    fn coverage_matches_brute_force() {
        let truth: Vec<bool> = (0..200).map(|k| (k * 7919) % 13 < 4).collect();
        let selected: Vec<usize> = (0..200).filter(|k| k % 17 == 3).collect();
        for w in 0..6 {
            let important: Vec<usize> = (0..200).filter(|&k| truth[k]).collect();
            let covered = important
                .iter()
                .filter(|&&k| selected.iter().any(|&s| s.abs_diff(k) <= w))
                .count();
            assert_eq!(coverage(&selected, &truth, w), covered as f64 / important.len() as f64);
        }
    }

    fn one_view_scene(len: usize) -> Scene {
        let frames = (0..len)
            .map(|index| FrameRecord {
                index,
                feature: vec![0.0],
                important: false,
            })
            .collect();
        Scene::new(vec![VideoStream::new(0, 1, frames).unwrap()]).unwrap()
    }

    #[test]
    fn processing_rate_examples() {
        let scene = one_view_scene(100);
        let graph = CommGraph::complete(1);
        let run = |stride| {
            run_experiment(
                &scene,
                &graph,
                &PolicySet::uniform(Arc::new(FixedSkip { stride })),
                Coordination::Independent {
                    kind: StrategyKind::Normal,
                },
                &RunConfig::default(),
            )
            .unwrap()
        };
        assert_eq!(run(1).processing_rate, 1.0);
        assert_eq!(run(25).processing_rate, 0.04);
    }

    fn policies() -> PolicySet {
        PolicySet {
            fast: Arc::new(FixedSkip { stride: 30 }),
            normal: Arc::new(FixedSkip { stride: 10 }),
            slow: Arc::new(FixedSkip { stride: 3 }),
        }
    }

    #[test]
    fn single_agent_run_sends_nothing() {
        let scene = one_view_scene(350);
        let summary = run_experiment(
            &scene,
            &CommGraph::complete(1),
            &policies(),
            Coordination::Collaborative {
                requirement: SystemRequirement::new(0, 1, 0),
                variant: ConsensusVariant::Dmvf,
            },
            &RunConfig::default(),
        )
        .unwrap();
        assert_eq!(summary.records.len(), 4);
        assert!(summary
            .records
            .iter()
            .all(|r| r.next_strategies == vec![StrategyKind::Normal]));
        assert_eq!(summary.comm.total.messages, 0);
    }

    fn small_scene(seed: u64) -> Scene {
        let events = vec![
            EventSpec {
                start: 40,
                end: 160,
                views: vec![0, 1],
            },
            EventSpec {
                start: 260,
                end: 380,
                views: vec![2, 3],
            },
        ];
        generate_scene(&SceneSpec::new(4, 450, 6, events, 0.1, seed)).unwrap()
    }

    #[test]
    fn every_period_meets_the_requirement() {
        let scene = small_scene(1);
        let graph = CommGraph::ring(4);
        let req = SystemRequirement::new(2, 1, 1);
        for variant in ConsensusVariant::ALL {
            let s = run_experiment(
                &scene,
                &graph,
                &policies(),
                Coordination::Collaborative {
                    requirement: req,
                    variant,
                },
                &RunConfig::default(),
            )
            .unwrap();
            assert_eq!(s.records.len(), 5);
            for r in &s.records {
                assert!(req.is_met_by(&r.next_strategies), "{variant}");
                assert_eq!(s.records.len(), s.coverage_so_far.len());
            }
            assert!((0.0..=1.0).contains(&s.coverage));
            assert!((0.0..=1.0).contains(&s.processing_rate));
            assert_eq!(s.comm.total.consensus_frames, 0);
        }
    }

    #[test]
    fn processing_rate_is_mean_of_agent_rates() {
        let scene = small_scene(2);
        let s = run_experiment(
            &scene,
            &CommGraph::complete(4),
            &policies(),
            Coordination::Collaborative {
                requirement: SystemRequirement::new(1, 2, 1),
                variant: ConsensusVariant::Dmvf,
            },
            &RunConfig::default(),
        )
        .unwrap();
        let per_agent: Vec<f64> = (0..4)
            .map(|i| s.records.iter().map(|r| r.processed[i]).sum::<usize>() as f64 / scene.len() as f64)
            .collect();
        let mean = per_agent.iter().sum::<f64>() / 4.0;
        assert!((s.processing_rate - mean).abs() < 1e-12);
    }

    #[test]
    fn short_scene_is_one_period() {
        let scene = one_view_scene(40);
        let s = run_experiment(
            &scene,
            &CommGraph::complete(1),
            &policies(),
            Coordination::Independent {
                kind: StrategyKind::Fast,
            },
            &RunConfig::default(),
        )
        .unwrap();
        assert_eq!(s.records.len(), 1);
        assert_eq!(s.coverage, 1.0);
        assert_eq!(s.processing_rate, 2.0 / 40.0);
    }

    #[test]
    fn runs_are_deterministic_and_csv_has_footer() {
        let scene = small_scene(3);
        let go = || {
            let s = run_experiment(
                &scene,
                &CommGraph::path(4),
                &policies(),
                Coordination::Collaborative {
                    requirement: SystemRequirement::new(2, 1, 1),
                    variant: ConsensusVariant::Ave,
                },
                &RunConfig::default(),
            )
            .unwrap();
            let mut out = Vec::new();
            s.write_csv(&mut out).unwrap();
            String::from_utf8(out).unwrap()
        };
        let a = go();
        assert_eq!(a, go());
        let lines: Vec<&str> = a.lines().collect();
        assert_eq!(
            lines[0],
            "period,strategy_0,strategy_1,strategy_2,strategy_3,processed_0,processed_1,processed_2,processed_3,coverage_so_far"
        );
        assert_eq!(lines.len(), 1 + 5 + 2);
        assert!(lines[6].starts_with("final,coverage"));
    }

    #[test]
    fn agent_covering_both_views_ranks_higher() {
        // Agent 0 saw frames resembling both views; agent 1 only its own.
        let frames = |feats: &[f32]| {
            feats
                .iter()
                .enumerate()
                .map(|(index, &f)| FrameRecord {
                    index,
                    feature: vec![f],
                    important: false,
                })
                .collect::<Vec<_>>()
        };
        let scene = Scene::new(vec![
            VideoStream::new(0, 1, frames(&[0.0, 20.0])).unwrap(),
            VideoStream::new(1, 1, frames(&[20.0, 20.0])).unwrap(),
        ])
        .unwrap();
        let s = run_experiment(
            &scene,
            &CommGraph::path(2),
            &PolicySet::uniform(Arc::new(FixedSkip { stride: 1 })),
            Coordination::Collaborative {
                requirement: SystemRequirement::new(1, 0, 1),
                variant: ConsensusVariant::Dmvf,
            },
            &RunConfig::default(),
        )
        .unwrap();
        // x0_00 = x0_10 = sim(v0 covers v1) = 1; x0_11 = x0_01 = sim(v1 covers v0) = (e^-1 + 1)/2.
        let x = s.records[0].scores.as_ref().unwrap();
        assert!((x.0[0] - 1.0).abs() < 1e-12);
        assert!((x.0[1] - ((-1.0f64).exp() + 1.0) / 2.0).abs() < 1e-12);
        assert_eq!(
            s.records[0].next_strategies,
            vec![StrategyKind::Slow, StrategyKind::Fast]
        );
    }
}
