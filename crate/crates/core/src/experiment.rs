//! JSON-described experiments: scene and graph construction, policy
//! training, single runs and parameter sweeps.
//!
//! Every output is a pure function of the config, so rerunning a command
//! reproduces its CSV files byte for byte regardless of the thread count.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    fast_forward_period, train_q, training_streams, AgentError, CheckpointError, QPolicy, SkipPolicy, StrategyKind,
    StrategySpec, TrainConfig,
};
use crate::consensus::{ConsensusParams, ConsensusVariant};
use crate::netsim::{erdos_renyi, CommGraph, NetError};
use crate::orchestrator::{
    coverage, run_experiment, Coordination, OrchestratorError, PolicySet, RunConfig, RunSummary, SystemRequirement,
};
use crate::scoring::DEFAULT_ALPHA;
use crate::stream::{generate_scene, load_scene, random_bursts, save_scene, BurstPlan, Scene, SceneError, SceneSpec};

/// The requirement trade-off points, from most to least processing.
pub const REQUIREMENT_SWEEP: [&str; 5] = ["2/2/2", "2/3/1", "3/2/1", "4/1/1", "5/0/1"];

pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot read config {path}: {source}")]
    ConfigIo {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("cannot parse config {path}: {source}")]
    ConfigParse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("graph: {0}")]
    Graph(#[from] NetError),
    #[error(transparent)]
    Run(#[from] OrchestratorError),
    #[error("training: {0}")]
    Agent(#[from] AgentError),
    #[error("policy checkpoint {path}: {source}")]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: CheckpointError,
    },
    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ExperimentError> {
    Err(ExperimentError::Invalid(msg.into()))
}

/// Recipe for a synthetic scene; events come from [`random_bursts`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticScene {
    pub n_views: usize,
    pub length: usize,
    pub dim: usize,
    pub noise_sigma: f64,
    pub visibility: f64,
    pub event_gain: f64,
    pub seed: u64,
    pub bursts: BurstPlan,
}

impl Default for SyntheticScene {
    fn default() -> Self {
        Self {
            n_views: 6,
            length: 3000,
            dim: 16,
            noise_sigma: 0.3,
            visibility: 1.0,
            event_gain: 3.0,
            seed: 0,
            bursts: BurstPlan::default(),
        }
    }
}

impl SyntheticScene {
    /// The scene this recipe yields for `seed` (its own seed is ignored).
    pub fn spec(&self, seed: u64) -> SceneSpec {
        let events = random_bursts(self.n_views, self.length, &self.bursts, seed);
        let mut spec = SceneSpec::new(self.n_views, self.length, self.dim, events, self.noise_sigma, seed);
        spec.visibility = self.visibility;
        spec.event_gain = self.event_gain;
        spec
    }

    pub fn generate(&self, seed: u64) -> Result<Scene, SceneError> {
        generate_scene(&self.spec(seed))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneSource {
    Synthetic(SyntheticScene),
    Manifest { path: PathBuf },
}

impl Default for SceneSource {
    fn default() -> Self {
        SceneSource::Synthetic(SyntheticScene::default())
    }
}

impl SceneSource {
    pub fn load(&self) -> Result<Scene, SceneError> {
        match self {
            SceneSource::Synthetic(s) => s.generate(s.seed),
            SceneSource::Manifest { path } => load_scene(path),
        }
    }

    /// View count, when known without touching the disk.
    pub fn n_views(&self) -> Option<usize> {
        match self {
            SceneSource::Synthetic(s) => Some(s.n_views),
            SceneSource::Manifest { .. } => None,
        }
    }
}

/// Communication graph description.
///
/// The compact text form accepted by [`FromStr`] is one of `ring:N`,
/// `path:N`, `complete:N`, `star:N`, `er:N:P:SEED` or `edges:N:0-1,1-2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphSpec {
    Edges { n: usize, edges: Vec<(usize, usize)> },
    ErdosRenyi { n: usize, p: f64, seed: u64 },
    Ring { n: usize },
    Path { n: usize },
    Complete { n: usize },
    Star { n: usize },
}

impl Default for GraphSpec {
    fn default() -> Self {
        GraphSpec::Ring { n: 6 }
    }
}

impl GraphSpec {
    pub fn n(&self) -> usize {
        match *self {
            GraphSpec::Edges { n, .. }
            | GraphSpec::ErdosRenyi { n, .. }
            | GraphSpec::Ring { n }
            | GraphSpec::Path { n }
            | GraphSpec::Complete { n }
            | GraphSpec::Star { n } => n,
        }
    }

    pub fn build(&self) -> Result<CommGraph, NetError> {
        match self {
            GraphSpec::Edges { n, edges } => CommGraph::new(*n, edges.iter().copied()),
            GraphSpec::ErdosRenyi { n, p, seed } => erdos_renyi(*n, *p, *seed),
            GraphSpec::Ring { n } => Ok(CommGraph::ring(*n)),
            GraphSpec::Path { n } => Ok(CommGraph::path(*n)),
            GraphSpec::Complete { n } => Ok(CommGraph::complete(*n)),
            GraphSpec::Star { n } => Ok(CommGraph::star(*n)),
        }
    }
}

impl FromStr for GraphSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |k: usize| -> Result<usize, String> {
            parts
                .get(k)
                .and_then(|p| p.parse().ok())
                .ok_or_else(|| format!("graph {s:?}: field {k} is not a count"))
        };
        let arity = |want: usize| {
            if parts.len() == want {
                Ok(())
            } else {
                Err(format!("graph {s:?}: expected {want} ':'-separated fields"))
            }
        };
        match parts[0] {
            "ring" | "path" | "complete" | "star" => {
                arity(2)?;
                let n = num(1)?;
                Ok(match parts[0] {
                    "ring" => GraphSpec::Ring { n },
                    "path" => GraphSpec::Path { n },
                    "complete" => GraphSpec::Complete { n },
                    _ => GraphSpec::Star { n },
                })
            }
            "er" => {
                arity(4)?;
                let p = parts[2].parse().map_err(|_| format!("graph {s:?}: bad probability"))?;
                let seed = parts[3].parse().map_err(|_| format!("graph {s:?}: bad seed"))?;
                Ok(GraphSpec::ErdosRenyi { n: num(1)?, p, seed })
            }
            "edges" => {
                arity(3)?;
                let mut edges = Vec::new();
                for pair in parts[2].split(',').filter(|p| !p.is_empty()) {
                    let (a, b) = pair
                        .split_once('-')
                        .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
                        .ok_or_else(|| format!("graph {s:?}: bad edge {pair:?}"))?;
                    edges.push((a, b));
                }
                Ok(GraphSpec::Edges { n: num(1)?, edges })
            }
            other => Err(format!(
                "unknown graph kind {other:?} (ring, path, complete, star, er, edges)"
            )),
        }
    }
}

/// Policy training corpus and hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSpec {
    /// Synthetic corpus size; scenes use seeds `first_seed..first_seed+scenes`
    /// and the experiment's synthetic recipe.
    pub scenes: usize,
    pub first_seed: u64,
    /// Scene manifests to train on instead of the synthetic corpus.
    pub manifests: Vec<PathBuf>,
    /// Leading fraction of the corpus used for training; the rest is held out.
    pub train_fraction: f64,
    pub config: TrainConfig,
}

impl Default for TrainingSpec {
    fn default() -> Self {
        Self {
            scenes: 5,
            first_seed: 1000,
            manifests: Vec::new(),
            train_fraction: 0.8,
            config: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Requirement,
    ConnectivityP,
    ConsensusVariant,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Requirement => "requirement",
            SweepAxis::ConnectivityP => "connectivity_p",
            SweepAxis::ConsensusVariant => "consensus_variant",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "requirement" => Ok(SweepAxis::Requirement),
            "connectivity_p" => Ok(SweepAxis::ConnectivityP),
            "consensus_variant" => Ok(SweepAxis::ConsensusVariant),
            _ => Err(format!(
                "unknown sweep axis {s:?} (requirement, connectivity_p, consensus_variant)"
            )),
        }
    }
}

/// Values swept along each axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub requirements: Vec<SystemRequirement>,
    pub p_values: Vec<f64>,
    /// Random graphs drawn per edge probability.
    pub graphs_per_p: usize,
    pub variants: Vec<ConsensusVariant>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            requirements: REQUIREMENT_SWEEP
                .iter()
                .map(|r| r.parse().expect("valid requirement"))
                .collect(),
            p_values: (2..=10).map(|k| k as f64 / 10.0).collect(),
            graphs_per_p: 5,
            variants: ConsensusVariant::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scene: SceneSource,
    pub graph: GraphSpec,
    pub requirement: SystemRequirement,
    pub consensus: ConsensusVariant,
    pub period: usize,
    pub alpha: f64,
    pub window: usize,
    pub consensus_params: ConsensusParams,
    /// One trained policy set and one run per seed.
    pub seeds: Vec<u64>,
    /// Checkpoint directory; defaults to `<out>/policies`.
    pub policy_dir: Option<PathBuf>,
    /// Strategy of the no-communication baseline.
    pub baseline: StrategyKind,
    pub training: TrainingSpec,
    pub sweep: SweepSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scene: SceneSource::default(),
            graph: GraphSpec::default(),
            requirement: SystemRequirement::new(3, 2, 1),
            consensus: ConsensusVariant::Dmvf,
            period: 100,
            alpha: DEFAULT_ALPHA,
            window: 4,
            consensus_params: ConsensusParams::default(),
            seeds: (0..5).collect(),
            policy_dir: None,
            baseline: StrategyKind::Normal,
            training: TrainingSpec::default(),
            sweep: SweepSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|source| ExperimentError::ConfigIo {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ExperimentError::ConfigParse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn run_config(&self, seed: u64) -> RunConfig {
        RunConfig {
            period: self.period,
            alpha: self.alpha,
            window: self.window,
            consensus: self.consensus_params,
            seed,
        }
    }

    pub fn policy_dir(&self, out: &Path) -> PathBuf {
        self.policy_dir.clone().unwrap_or_else(|| out.join("policies"))
    }

    /// Checks every invariant that does not need the scene files. Builds
    /// the graph, so a disconnected explicit graph is rejected here.
    pub fn validate(&self) -> Result<CommGraph, ExperimentError> {
        self.run_config(0).validate()?;
        if self.seeds.is_empty() {
            return invalid("seeds must not be empty");
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return invalid("seeds must be distinct");
        }
        let graph = self.graph.build()?;
        graph.require_connected()?;
        self.requirement.check(graph.n())?;
        if let Some(n) = self.scene.n_views() {
            if n != graph.n() {
                return Err(OrchestratorError::GraphSize {
                    graph: graph.n(),
                    scene: n,
                }
                .into());
            }
        }
        if let SceneSource::Synthetic(s) = &self.scene {
            if s.length == 0 || s.dim == 0 {
                return invalid("synthetic scenes need positive length and dim");
            }
        }
        let t = &self.training;
        if !(t.train_fraction > 0.0 && t.train_fraction <= 1.0) {
            return invalid(format!("train_fraction {} is outside (0, 1]", t.train_fraction));
        }
        let s = &self.sweep;
        if s.p_values.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            return invalid("sweep p_values must lie in (0, 1]");
        }
        if s.graphs_per_p == 0 {
            return invalid("sweep graphs_per_p must be positive");
        }
        for r in &s.requirements {
            r.check(graph.n())?;
        }
        Ok(graph)
    }

    /// Loads the scene and checks it against the graph.
    pub fn load_scene(&self, graph: &CommGraph) -> Result<Scene, ExperimentError> {
        let scene = self.scene.load()?;
        if scene.n_views() != graph.n() {
            return Err(OrchestratorError::GraphSize {
                graph: graph.n(),
                scene: scene.n_views(),
            }
            .into());
        }
        Ok(scene)
    }

    /// Training and held-out scenes, in that order.
    pub fn training_corpus(&self) -> Result<(Vec<Scene>, Vec<Scene>), ExperimentError> {
        let t = &self.training;
        let scenes: Vec<Scene> = if t.manifests.is_empty() {
            let SceneSource::Synthetic(recipe) = &self.scene else {
                return invalid("training for a manifest scene needs training.manifests");
            };
            (0..t.scenes as u64)
                .into_par_iter()
                .map(|k| recipe.generate(t.first_seed + k))
                .collect::<Result<_, _>>()?
        } else {
            t.manifests.iter().map(|p| load_scene(p)).collect::<Result<_, _>>()?
        };
        if scenes.is_empty() {
            return invalid("the training corpus is empty");
        }
        let n_train = ((scenes.len() as f64 * t.train_fraction).round() as usize).clamp(1, scenes.len());
        let mut train = scenes;
        let held_out = train.split_off(n_train);
        Ok((train, held_out))
    }
}

pub fn checkpoint_path(dir: &Path, seed: u64, kind: StrategyKind) -> PathBuf {
    dir.join(format!("seed-{seed}")).join(format!("{kind}.qpol"))
}

fn output_err(path: &Path) -> impl FnOnce(io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Output {
        path: path.to_path_buf(),
        source,
    }
}

fn create_dir(path: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(path).map_err(output_err(path))
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ExperimentError> {
    let csv_err = |source| ExperimentError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(output_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(output_err(path))
}

/// Writes the resolved config next to a command's outputs.
pub fn write_resolved_config(config: &ExperimentConfig, out: &Path) -> Result<PathBuf, ExperimentError> {
    create_dir(out)?;
    let path = out.join(CONFIG_FILE);
    fs::write(&path, config.to_json() + "\n").map_err(output_err(&path))?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub seed: u64,
    pub strategy: StrategyKind,
    pub processing_rate: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub checkpoints: Vec<PathBuf>,
    pub held_out: usize,
    pub eval: Vec<EvalRow>,
}

#[derive(Debug, Serialize)]
struct EpisodeRow {
    episode: usize,
    stream: usize,
    start: usize,
    steps: usize,
    total_reward: f64,
    epsilon: f64,
}

/// Processing rate and coverage of `policy` run alone over every view of
/// `scenes`, each view judged against its own labels.
pub fn evaluate_policy(policy: &dyn SkipPolicy, scenes: &[Scene], window: usize) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut processed, mut frames, mut cov, mut views) = (0usize, 0usize, 0.0, 0usize);
    for scene in scenes {
        for stream in scene.streams() {
            let (buf, _) = fast_forward_period(policy, stream.view_id(), 0, stream.frames(), 0, &mut rng);
            processed += buf.processed_count();
            frames += stream.len();
            let picked: Vec<usize> = buf.indices().collect();
            cov += coverage(&picked, &stream.labels(), window);
            views += 1;
        }
    }
    if views == 0 {
        return (0.0, 0.0);
    }
    (processed as f64 / frames as f64, cov / views as f64)
}

/// Trains the three strategies once per seed, writes the checkpoints, a
/// per-episode reward CSV per policy and a held-out evaluation CSV.
pub fn cmd_train(config: &ExperimentConfig, out: &Path) -> Result<TrainReport, ExperimentError> {
    config.validate()?;
    let (train, held_out) = config.training_corpus()?;
    let streams = training_streams(&train);
    let dir = config.policy_dir(out);
    write_resolved_config(config, out)?;
    let log_dir = out.join("train");
    create_dir(&log_dir)?;

    let jobs: Vec<(u64, StrategyKind)> = config
        .seeds
        .iter()
        .flat_map(|&s| StrategyKind::ALL.map(|k| (s, k)))
        .collect();
    let trained = jobs
        .par_iter()
        .map(|&(seed, kind)| train_q(&streams, StrategySpec::default_for(kind), &config.training.config, seed))
        .collect::<Result<Vec<_>, _>>()?;

    let mut checkpoints = Vec::new();
    let mut eval = Vec::new();
    for (&(seed, kind), outcome) in jobs.iter().zip(&trained) {
        let path = checkpoint_path(&dir, seed, kind);
        create_dir(path.parent().expect("checkpoint has a parent"))?;
        outcome
            .policy
            .save(&path)
            .map_err(|source| ExperimentError::Checkpoint {
                path: path.clone(),
                source,
            })?;
        checkpoints.push(path);
        let rows: Vec<EpisodeRow> = outcome
            .log
            .iter()
            .map(|e| EpisodeRow {
                episode: e.episode,
                stream: e.stream,
                start: e.start,
                steps: e.steps,
                total_reward: e.total_reward,
                epsilon: e.epsilon,
            })
            .collect();
        write_rows(&log_dir.join(format!("seed-{seed}-{kind}.csv")), &rows)?;
        let judged = if held_out.is_empty() { &train } else { &held_out };
        let (processing_rate, coverage) = evaluate_policy(&outcome.policy, judged, config.window);
        eval.push(EvalRow {
            seed,
            strategy: kind,
            processing_rate,
            coverage,
        });
    }
    write_rows(&out.join("train_eval.csv"), &eval)?;
    Ok(TrainReport {
        checkpoints,
        held_out: held_out.len(),
        eval,
    })
}

/// Loads the checkpoints of every configured seed.
pub fn load_policies(config: &ExperimentConfig, out: &Path, dim: usize) -> Result<Vec<PolicySet>, ExperimentError> {
    let dir = config.policy_dir(out);
    config
        .seeds
        .iter()
        .map(|&seed| {
            let load = |kind: StrategyKind| -> Result<Arc<dyn SkipPolicy>, ExperimentError> {
                let path = checkpoint_path(&dir, seed, kind);
                let policy = QPolicy::load(&path).map_err(|source| ExperimentError::Checkpoint {
                    path: path.clone(),
                    source,
                })?;
                if policy.strategy().kind != kind {
                    return invalid(format!("{} holds a {} policy", path.display(), policy.strategy().kind));
                }
                if policy.dim() != dim {
                    return invalid(format!(
                        "{} expects {}-dimensional features, the scene has {dim}",
                        path.display(),
                        policy.dim()
                    ));
                }
                Ok(Arc::new(policy))
            };
            Ok(PolicySet {
                fast: load(StrategyKind::Fast)?,
                normal: load(StrategyKind::Normal)?,
                slow: load(StrategyKind::Slow)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedRow {
    pub seed: String,
    pub coverage: f64,
    pub processing_rate: f64,
    pub bytes_total: f64,
    pub mean_iterations: f64,
    pub baseline_coverage: f64,
    pub baseline_processing_rate: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summaries: Vec<RunSummary>,
    pub baseline: Vec<RunSummary>,
    pub rows: Vec<SeedRow>,
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// One collaborative run and one baseline run per seed.
pub fn run_seeds(
    config: &ExperimentConfig,
    scene: &Scene,
    graph: &CommGraph,
    policies: &[PolicySet],
) -> Result<(Vec<RunSummary>, Vec<RunSummary>), ExperimentError> {
    let collaborative = Coordination::Collaborative {
        requirement: config.requirement,
        variant: config.consensus,
    };
    let independent = Coordination::Independent { kind: config.baseline };
    let pairs = config
        .seeds
        .par_iter()
        .zip(policies)
        .map(|(&seed, set)| {
            let rc = config.run_config(seed);
            let run = run_experiment(scene, graph, set, collaborative, &rc)?;
            let base = run_experiment(scene, graph, set, independent, &rc)?;
            Ok((run, base))
        })
        .collect::<Result<Vec<_>, OrchestratorError>>()?;
    Ok(pairs.into_iter().unzip())
}

/// Runs the configured experiment for every seed. Writes per-seed period
/// CSVs and communication ledgers, plus `summary.csv` with one row per seed
/// and a closing `mean` row.
pub fn cmd_run(config: &ExperimentConfig, out: &Path) -> Result<RunOutcome, ExperimentError> {
    let graph = config.validate()?;
    let scene = config.load_scene(&graph)?;
    let policies = load_policies(config, out, scene.dim())?;
    write_resolved_config(config, out)?;
    let (summaries, baseline) = run_seeds(config, &scene, &graph, &policies)?;

    let dir = out.join("run");
    create_dir(&dir)?;
    let mut rows = Vec::new();
    for ((seed, run), base) in config.seeds.iter().zip(&summaries).zip(&baseline) {
        let path = dir.join(format!("seed-{seed}.csv"));
        let file = fs::File::create(&path).map_err(output_err(&path))?;
        run.write_csv(file).map_err(|source| ExperimentError::Csv {
            path: path.clone(),
            source,
        })?;
        let path = dir.join(format!("comm-seed-{seed}.csv"));
        let file = fs::File::create(&path).map_err(output_err(&path))?;
        run.comm.write_csv(file).map_err(|source| ExperimentError::Csv {
            path: path.clone(),
            source,
        })?;
        rows.push(SeedRow {
            seed: seed.to_string(),
            coverage: run.coverage,
            processing_rate: run.processing_rate,
            bytes_total: run.bytes_total() as f64,
            mean_iterations: run.mean_iterations(),
            baseline_coverage: base.coverage,
            baseline_processing_rate: base.processing_rate,
        });
    }
    let mean_row = SeedRow {
        seed: "mean".into(),
        coverage: mean(rows.iter().map(|r| r.coverage)),
        processing_rate: mean(rows.iter().map(|r| r.processing_rate)),
        bytes_total: mean(rows.iter().map(|r| r.bytes_total)),
        mean_iterations: mean(rows.iter().map(|r| r.mean_iterations)),
        baseline_coverage: mean(rows.iter().map(|r| r.baseline_coverage)),
        baseline_processing_rate: mean(rows.iter().map(|r| r.baseline_processing_rate)),
    };
    rows.push(mean_row);
    write_rows(&dir.join("summary.csv"), &rows)?;
    Ok(RunOutcome {
        summaries,
        baseline,
        rows,
    })
}

/// One sweep point: its label, the edge count for connectivity sweeps, and
/// every run made for it.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub label: String,
    pub edges: Option<usize>,
    pub graphs: usize,
    pub runs: Vec<RunSummary>,
}

/// Averages of one sweep point over its runs. Baseline columns average the
/// no-communication runs of the same seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub point: String,
    pub edges: Option<usize>,
    pub graphs: usize,
    pub runs: usize,
    pub coverage: f64,
    pub processing_rate: f64,
    pub bytes_total: f64,
    pub iterations: f64,
    pub message_rounds: f64,
    pub consensus_frames: f64,
    pub baseline_coverage: f64,
    pub baseline_processing_rate: f64,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub points: Vec<SweepPoint>,
    pub baseline: Vec<RunSummary>,
    pub rows: Vec<SweepRow>,
}

/// Runs every point of `axis` for every seed, in parallel. Connectivity
/// points are grouped by the edge count of the drawn graphs.
pub fn sweep(
    config: &ExperimentConfig,
    axis: SweepAxis,
    scene: &Scene,
    graph: &CommGraph,
    policies: &[PolicySet],
) -> Result<SweepOutcome, ExperimentError> {
    let n = scene.n_views();
    let runs_for = |g: &CommGraph, req: SystemRequirement, variant: ConsensusVariant| {
        config
            .seeds
            .par_iter()
            .zip(policies)
            .map(|(&seed, set)| {
                let coordination = Coordination::Collaborative {
                    requirement: req,
                    variant,
                };
                run_experiment(scene, g, set, coordination, &config.run_config(seed))
            })
            .collect::<Result<Vec<_>, _>>()
    };
    let baseline = config
        .seeds
        .par_iter()
        .zip(policies)
        .map(|(&seed, set)| {
            let coordination = Coordination::Independent { kind: config.baseline };
            run_experiment(scene, graph, set, coordination, &config.run_config(seed))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let points = match axis {
        SweepAxis::Requirement => config
            .sweep
            .requirements
            .par_iter()
            .map(|&req| {
                Ok(SweepPoint {
                    label: req.to_string(),
                    edges: None,
                    graphs: 1,
                    runs: runs_for(graph, req, config.consensus)?,
                })
            })
            .collect::<Result<Vec<_>, OrchestratorError>>()?,
        SweepAxis::ConsensusVariant => config
            .sweep
            .variants
            .par_iter()
            .map(|&variant| {
                Ok(SweepPoint {
                    label: variant.to_string(),
                    edges: None,
                    graphs: 1,
                    runs: runs_for(graph, config.requirement, variant)?,
                })
            })
            .collect::<Result<Vec<_>, OrchestratorError>>()?,
        SweepAxis::ConnectivityP => {
            let per_p = config.sweep.graphs_per_p;
            let draws: Vec<(usize, u64)> = (0..config.sweep.p_values.len())
                .flat_map(|pi| (0..per_p as u64).map(move |g| (pi, pi as u64 * per_p as u64 + g)))
                .collect();
            let graphs = draws
                .iter()
                .map(|&(pi, gseed)| erdos_renyi(n, config.sweep.p_values[pi], gseed))
                .collect::<Result<Vec<_>, _>>()?;
            let results = graphs
                .par_iter()
                .map(|g| Ok((g.edge_count(), runs_for(g, config.requirement, config.consensus)?)))
                .collect::<Result<Vec<_>, OrchestratorError>>()?;
            let mut grouped: BTreeMap<usize, (usize, Vec<RunSummary>)> = BTreeMap::new();
            for (edges, runs) in results {
                let entry = grouped.entry(edges).or_default();
                entry.0 += 1;
                entry.1.extend(runs);
            }
            grouped
                .into_iter()
                .map(|(edges, (graphs, runs))| SweepPoint {
                    label: edges.to_string(),
                    edges: Some(edges),
                    graphs,
                    runs,
                })
                .collect()
        }
    };

    let base_cov = mean(baseline.iter().map(|r| r.coverage));
    let base_rate = mean(baseline.iter().map(|r| r.processing_rate));
    let rows = points
        .iter()
        .map(|p| SweepRow {
            axis,
            point: p.label.clone(),
            edges: p.edges,
            graphs: p.graphs,
            runs: p.runs.len(),
            coverage: mean(p.runs.iter().map(|r| r.coverage)),
            processing_rate: mean(p.runs.iter().map(|r| r.processing_rate)),
            bytes_total: mean(p.runs.iter().map(|r| r.bytes_total() as f64)),
            iterations: mean(p.runs.iter().map(|r| r.mean_iterations())),
            message_rounds: mean(
                p.runs
                    .iter()
                    .map(|r| mean(r.records.iter().map(|rec| rec.message_rounds as f64))),
            ),
            consensus_frames: mean(p.runs.iter().map(|r| r.comm.total.consensus_frames as f64)),
            baseline_coverage: base_cov,
            baseline_processing_rate: base_rate,
        })
        .collect();
    Ok(SweepOutcome { points, baseline, rows })
}

/// Runs a sweep and writes `sweep-<axis>.csv` with one averaged row per point.
pub fn cmd_sweep(config: &ExperimentConfig, axis: SweepAxis, out: &Path) -> Result<SweepOutcome, ExperimentError> {
    let graph = config.validate()?;
    let scene = config.load_scene(&graph)?;
    let policies = load_policies(config, out, scene.dim())?;
    write_resolved_config(config, out)?;
    let outcome = sweep(config, axis, &scene, &graph, &policies)?;
    write_rows(&out.join(format!("sweep-{axis}.csv")), &outcome.rows)?;
    Ok(outcome)
}

/// Writes the configured synthetic scene under `<out>/scene` and returns the
/// manifest path.
pub fn cmd_gen_scene(config: &ExperimentConfig, out: &Path) -> Result<PathBuf, ExperimentError> {
    let SceneSource::Synthetic(recipe) = &config.scene else {
        return invalid("gen-scene needs a synthetic scene source");
    };
    let scene = recipe.generate(recipe.seed)?;
    write_resolved_config(config, out)?;
    Ok(save_scene(&scene, &out.join("scene"))?)
}

/// Facts about a validated config, for display.
#[derive(Debug, Clone, PartialEq)]
pub struct Validation {
    pub agents: usize,
    pub edges: usize,
    pub diameter: usize,
    pub frames: usize,
    pub periods: usize,
}

/// Validates the config and loads its scene without running anything.
pub fn cmd_validate(config: &ExperimentConfig) -> Result<Validation, ExperimentError> {
    let graph = config.validate()?;
    let scene = config.load_scene(&graph)?;
    Ok(Validation {
        agents: graph.n(),
        edges: graph.edge_count(),
        diameter: graph.diameter()?,
        frames: scene.len(),
        periods: scene.len().div_ceil(config.period).max(1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_json() {
        let c = ExperimentConfig::default();
        let back: ExperimentConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
        let partial: ExperimentConfig =
            serde_json::from_str(r#"{"requirement": "2/2/2", "graph": {"kind": "path", "n": 6}}"#).unwrap();
        assert_eq!(partial.requirement, SystemRequirement::new(2, 2, 2));
        assert_eq!(partial.graph, GraphSpec::Path { n: 6 });
        assert_eq!(partial.period, 100);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"perod": 5}"#).is_err());
    }

    #[test]
    fn graph_text_forms() {
        assert_eq!("ring:6".parse::<GraphSpec>().unwrap(), GraphSpec::Ring { n: 6 });
        assert_eq!(
            "er:6:0.4:7".parse::<GraphSpec>().unwrap(),
            GraphSpec::ErdosRenyi { n: 6, p: 0.4, seed: 7 }
        );
        assert_eq!(
            "edges:3:0-1,1-2".parse::<GraphSpec>().unwrap(),
            GraphSpec::Edges {
                n: 3,
                edges: vec![(0, 1), (1, 2)]
            }
        );
        assert!("ring".parse::<GraphSpec>().is_err());
        assert!("edges:3:0-x".parse::<GraphSpec>().is_err());
        assert!("torus:4".parse::<GraphSpec>().is_err());
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let ok = ExperimentConfig::default();
        assert!(ok.validate().is_ok());

        let disconnected = ExperimentConfig {
            graph: GraphSpec::Edges {
                n: 6,
                edges: vec![(0, 1), (2, 3), (4, 5)],
            },
            ..ok.clone()
        };
        assert!(matches!(
            disconnected.validate(),
            Err(ExperimentError::Graph(NetError::Disconnected))
        ));

        let wrong_sum = ExperimentConfig {
            requirement: SystemRequirement::new(1, 1, 1),
            ..ok.clone()
        };
        assert!(matches!(
            wrong_sum.validate(),
            Err(ExperimentError::Run(OrchestratorError::RequirementSize { .. }))
        ));

        let zero_period = ExperimentConfig {
            period: 0,
            ..ok.clone()
        };
        assert!(matches!(
            zero_period.validate(),
            Err(ExperimentError::Run(OrchestratorError::ZeroPeriod))
        ));

        let size = ExperimentConfig {
            graph: GraphSpec::Ring { n: 5 },
            requirement: SystemRequirement::new(2, 2, 1),
            ..ok.clone()
        };
        assert!(matches!(
            size.validate(),
            Err(ExperimentError::Run(OrchestratorError::GraphSize { .. }))
        ));

        let no_seeds = ExperimentConfig {
            seeds: vec![],
            ..ok.clone()
        };
        assert!(matches!(no_seeds.validate(), Err(ExperimentError::Invalid(_))));

        let mut bad_sweep = ok.clone();
        bad_sweep.sweep.p_values = vec![0.0];
        assert!(matches!(bad_sweep.validate(), Err(ExperimentError::Invalid(_))));
    }

    #[test]
    fn corpus_split_is_eighty_twenty() {
        let mut c = ExperimentConfig::default();
        if let SceneSource::Synthetic(s) = &mut c.scene {
            s.length = 50;
            s.dim = 4;
        }
        let (train, held) = c.training_corpus().unwrap();
        assert_eq!((train.len(), held.len()), (4, 1));
        c.training.scenes = 0;
        assert!(matches!(c.training_corpus(), Err(ExperimentError::Invalid(_))));
        c.training.scenes = 5;
        c.scene = SceneSource::Manifest {
            path: PathBuf::from("scene/manifest.json"),
        };
        assert!(matches!(c.training_corpus(), Err(ExperimentError::Invalid(_))));
    }

    #[test]
    fn sweep_axis_names() {
        for axis in [
            SweepAxis::Requirement,
            SweepAxis::ConnectivityP,
            SweepAxis::ConsensusVariant,
        ] {
            assert_eq!(axis.as_str().parse::<SweepAxis>().unwrap(), axis);
        }
        assert!("edges".parse::<SweepAxis>().is_err());
    }
}
