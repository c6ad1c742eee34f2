//! Command-line surface. Every subcommand flag is optional so that a TOML
//! file passed with `--config` can supply it; flags given on the command
//! line win over the file, and built-in defaults fill the rest.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "contingent", version, about = "Contingency planning with autoregressive flows")]
pub struct Cli {
    /// TOML file with default values for the subcommand's flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Roll out the scripted expert and write a JSON-lines dataset.
    GenData(GenDataArgs),
    /// Fit the flow by maximum likelihood; writes a checkpoint and curve.csv.
    Train(TrainArgs),
    /// Plan once from the start of one episode and dump the plan.
    Plan(PlanArgs),
    /// Closed-loop episodes; writes per-episode and aggregate metrics.
    Eval(EvalArgs),
    /// Exhaustive representability check of discrete flows.
    AnalyzeDiscrete(DiscreteArgs),
    /// Value orderings of the four planner families on random tabular games.
    Valuelab(ValuelabArgs),
    /// Finite-difference checks of every differentiable piece.
    GradCheck(GradCheckArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Train(_) => "train",
            Command::Plan(_) => "plan",
            Command::Eval(_) => "eval",
            Command::AnalyzeDiscrete(_) => "analyze-discrete",
            Command::Valuelab(_) => "valuelab",
            Command::GradCheck(_) => "grad-check",
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDataArgs {
    /// Scenario name or "all".
    #[arg(long)]
    pub scenario: Option<String>,
    /// Episodes per scenario.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Training windows cut from each episode.
    #[arg(long)]
    pub windows: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Hidden layer widths, comma separated.
    #[arg(long)]
    pub hidden: Option<String>,
    /// Number of past steps the conditioner sees.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub scenario: Option<String>,
    /// Seed of the episode whose initial state is planned from.
    #[arg(long)]
    pub episode_seed: Option<u64>,
    /// One of cfo, joint, underconfident.
    #[arg(long)]
    pub planner: Option<String>,
    #[arg(long)]
    pub mc_samples: Option<usize>,
    #[arg(long)]
    pub ascent_steps: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub constraint_weight: Option<f64>,
    #[arg(long)]
    pub goal_sigma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalArgs {
    /// Required for the learned planners only.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Comma-separated scenario names or "all".
    #[arg(long)]
    pub scenario: Option<String>,
    /// Comma-separated planner names.
    #[arg(long)]
    pub planner: Option<String>,
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Ascent steps of each warm-started replan after the first.
    #[arg(long)]
    pub replan_steps: Option<usize>,
    #[arg(long)]
    pub mc_samples: Option<usize>,
    #[arg(long)]
    pub ascent_steps: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub constraint_weight: Option<f64>,
    #[arg(long)]
    pub goal_sigma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscreteArgs {
    /// Random flows per horizon.
    #[arg(long)]
    pub seeds: Option<u64>,
    /// Largest horizon; every horizon from 1 up to it is analyzed.
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub alphabet: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValuelabArgs {
    #[arg(long)]
    pub games: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Actions per player per step.
    #[arg(long)]
    pub actions: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckArgs {
    /// Model to check; a freshly initialized one when absent.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Random probe points per op.
    #[arg(long)]
    pub probes: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
