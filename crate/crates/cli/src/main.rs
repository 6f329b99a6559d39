use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use dmvf_core::consensus::ConsensusVariant;
use dmvf_core::experiment::{
    cmd_gen_scene, cmd_run, cmd_sweep, cmd_train, cmd_validate, ExperimentConfig, GraphSpec, SceneSource, SweepAxis,
};
use dmvf_core::orchestrator::SystemRequirement;

#[derive(Parser)]
#[command(name = "dmvf", about = "Distributed multi-view video fast-forwarding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train Fast/Normal/Slow policies, one set per seed.
    Train(Common),
    /// Run the configured experiment for every seed.
    Run(Common),
    /// Run a parameter sweep and write one averaged row per point.
    Sweep {
        #[arg(long, value_parser = parse_axis)]
        axis: SweepAxis,
        #[command(flatten)]
        common: Common,
    },
    /// Write the configured synthetic scene to disk.
    GenScene(Common),
    /// Check the config and load its scene without running anything.
    Validate(Common),
}

/// Flags override the matching fields of the JSON config.
#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scene manifest to use instead of the synthetic scene.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// ring:N, path:N, complete:N, star:N, er:N:P:SEED or edges:N:0-1,1-2
    #[arg(long)]
    graph: Option<GraphSpec>,
    /// Fast/Normal/Slow counts, e.g. 3/2/1.
    #[arg(long)]
    req: Option<SystemRequirement>,
    #[arg(long)]
    consensus: Option<ConsensusVariant>,
    #[arg(long)]
    period: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    policies: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn parse_axis(s: &str) -> Result<SweepAxis, String> {
    s.parse()
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::from_path(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(path) = &self.scene {
            config.scene = SceneSource::Manifest { path: path.clone() };
        }
        if let Some(graph) = &self.graph {
            config.graph = graph.clone();
        }
        if let Some(req) = self.req {
            config.requirement = req;
        }
        if let Some(variant) = self.consensus {
            config.consensus = variant;
        }
        if let Some(period) = self.period {
            config.period = period;
        }
        if let Some(alpha) = self.alpha {
            config.alpha = alpha;
        }
        if let Some(window) = self.window {
            config.window = window;
        }
        if let Some(seed) = self.seed {
            config.seeds = vec![seed];
        }
        if let Some(dir) = &self.policies {
            config.policy_dir = Some(dir.clone());
        }
        Ok(config)
    }
}

fn show(path: &Path) -> String {
    path.display().to_string()
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Train(c) => {
            let config = c.resolve()?;
            let report = cmd_train(&config, &c.out).context("train failed")?;
            for row in &report.eval {
                println!(
                    "seed {} {:<6} held-out rate {:.4} coverage {:.4}",
                    row.seed, row.strategy, row.processing_rate, row.coverage
                );
            }
            println!(
                "wrote {} checkpoints under {}",
                report.checkpoints.len(),
                show(&config.policy_dir(&c.out))
            );
        }
        Command::Run(c) => {
            let config = c.resolve()?;
            let outcome = cmd_run(&config, &c.out).context("run failed")?;
            let mean = outcome.rows.last().expect("mean row");
            println!(
                "coverage {:.4} processing rate {:.4} bytes {:.0} (baseline coverage {:.4} rate {:.4})",
                mean.coverage,
                mean.processing_rate,
                mean.bytes_total,
                mean.baseline_coverage,
                mean.baseline_processing_rate
            );
            println!("wrote {}", show(&c.out.join("run")));
        }
        Command::Sweep { axis, common: c } => {
            let config = c.resolve()?;
            let outcome = cmd_sweep(&config, axis, &c.out).context("sweep failed")?;
            for row in &outcome.rows {
                println!(
                    "{:>8}  coverage {:.4}  rate {:.4}  bytes {:.0}  iterations {:.1}",
                    row.point, row.coverage, row.processing_rate, row.bytes_total, row.iterations
                );
            }
            println!("wrote {}", show(&c.out.join(format!("sweep-{axis}.csv"))));
        }
        Command::GenScene(c) => {
            let config = c.resolve()?;
            let manifest = cmd_gen_scene(&config, &c.out).context("gen-scene failed")?;
            println!("wrote {}", show(&manifest));
        }
        Command::Validate(c) => {
            let config = c.resolve()?;
            let v = cmd_validate(&config).context("validation failed")?;
            println!(
                "ok: {} agents, {} edges, diameter {}, {} frames in {} periods, requirement {}",
                v.agents, v.edges, v.diameter, v.frames, v.periods, config.requirement
            );
        }
    }
    Ok(())
}

/// The error chain, skipping causes already spelled out by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}
