//! Subcommand implementations. Each one resolves its flags against the
//! config file and the defaults, does its work, writes its outputs into
//! `--out` and finishes with `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use contingent_core::discrete::{characterize, DiscreteFlow};
use contingent_core::flow::{train, FlowHyper, FlowModel, TrainConfig, TrainReport};
use contingent_core::planner::{plan_cfo, plan_joint, plan_underconfident, PlanConfig};
use contingent_core::simworld::{
    generate_dataset_windows, robot_candidates, Episode, EvalOptions, PlannerKind, ScenarioConfig, CONTEXT_DIM,
};
use contingent_core::valuelab::{self, check_orderings, FiniteGame};
use contingent_core::{EpisodeRecord, Goal, JointTrajectory, Observation, Position, RngStream, ScenarioId};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::bench::{run_cell, summary_rows, MetricsRow, SummaryRow};
use crate::cli::*;
use crate::config::{load_file, merge};
use crate::gradcheck::{self, GradRow};
use crate::io;
use crate::{CliError, Result};

/// Gradient checks pass below this relative error.
pub const GRAD_TOL: f64 = 1e-4;

pub fn run(cli: Cli) -> Result<()> {
    let name = cli.command.name();
    let file = match &cli.config {
        Some(p) => load_file(p, name)?,
        None => Map::new(),
    };
    match cli.command {
        Command::GenData(a) => gen_data(&merge(file, &a)?.resolve()?),
        Command::Train(a) => train_cmd(&merge(file, &a)?.resolve()?),
        Command::Plan(a) => plan_cmd(&merge(file, &a)?.resolve()?),
        Command::Eval(a) => eval_cmd(&merge(file, &a)?.resolve()?),
        Command::AnalyzeDiscrete(a) => analyze_discrete(&merge(file, &a)?.resolve()?),
        Command::Valuelab(a) => valuelab_cmd(&merge(file, &a)?.resolve()?),
        Command::GradCheck(a) => grad_check_cmd(&merge(file, &a)?.resolve()?),
    }
}

fn out_dir(out: &Option<PathBuf>, command: &str) -> PathBuf {
    out.clone().unwrap_or_else(|| PathBuf::from("runs").join(command))
}

fn prepare(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))
}

fn write_manifest<T: Serialize>(out: &Path, command: &str, seed: u64, config: &T) -> Result<()> {
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "config": config,
    });
    io::write_json(&out.join("manifest.json"), &manifest).map_err(CliError::runtime)
}

fn csv_out<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    io::write_csv(path, rows).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn parse_scenarios(s: &str) -> Result<Vec<ScenarioId>> {
    if s == "all" {
        return Ok(ScenarioId::ALL.to_vec());
    }
    s.split(',')
        .map(|x| ScenarioId::parse(x.trim()).ok_or_else(|| CliError::Config(format!("unknown scenario {x:?}"))))
        .collect()
}

fn join_scenarios(ids: &[ScenarioId]) -> String {
    ids.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(",")
}

fn parse_hidden(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|w| w.trim().parse::<usize>().map_err(|_| CliError::Config(format!("bad hidden width {w:?}"))))
        .collect()
}

fn parse_planner(s: &str) -> Result<PlannerKind> {
    PlannerKind::parse(s.trim()).ok_or_else(|| CliError::Config(format!("unknown planner {s:?}")))
}

fn load_model(path: &Path) -> Result<FlowModel> {
    if !path.exists() {
        return Err(CliError::Config(format!("missing checkpoint {}", path.display())));
    }
    let ck = io::read_checkpoint(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    FlowModel::from_checkpoint(&ck).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn require(path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    path.clone().ok_or_else(|| CliError::Config(format!("--{what} is required")))
}

// ---------------------------------------------------------------- gen-data

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct GenDataConfig {
    /// Comma-separated scenario names.
    pub scenario: String,
    pub episodes: usize,
    pub windows: usize,
    pub seed: u64,
    pub out: PathBuf,
}

impl GenDataArgs {
    pub fn resolve(&self) -> Result<GenDataConfig> {
        let scenarios = parse_scenarios(self.scenario.as_deref().unwrap_or("all"))?;
        let c = GenDataConfig {
            scenario: join_scenarios(&scenarios),
            episodes: self.episodes.unwrap_or(400),
            windows: self.windows.unwrap_or(8),
            seed: self.seed.unwrap_or(0),
            out: out_dir(&self.out, "gen-data"),
        };
        if c.episodes == 0 || c.windows == 0 {
            return Err(CliError::Config("episodes and windows must be ≥ 1".into()));
        }
        Ok(c)
    }
}

/// Seeded expert demonstrations for every requested scenario, scenario
/// by scenario in the given order.
pub fn generate(c: &GenDataConfig) -> Vec<EpisodeRecord> {
    let root = RngStream::new(c.seed);
    let mut records = Vec::new();
    for id in parse_scenarios(&c.scenario).expect("resolved scenario") {
        let seed = root.fork(id.as_str()).next_u64();
        records.extend(generate_dataset_windows(&ScenarioConfig::for_scenario(id), c.episodes, seed, c.windows));
    }
    records
}

pub fn gen_data(c: &GenDataConfig) -> Result<()> {
    prepare(&c.out)?;
    let records = generate(c);
    io::write_dataset(&c.out.join("dataset.jsonl"), &records).map_err(CliError::runtime)?;
    println!("gen-data: {} records from {} -> {}", records.len(), c.scenario, c.out.display());
    write_manifest(&c.out, "gen-data", c.seed, c)
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct TrainCmdConfig {
    pub dataset: PathBuf,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Comma-separated hidden widths.
    pub hidden: String,
    pub window: usize,
    pub val_fraction: f64,
    pub seed: u64,
    pub out: PathBuf,
}

impl TrainArgs {
    pub fn resolve(&self) -> Result<TrainCmdConfig> {
        let hidden = parse_hidden(self.hidden.as_deref().unwrap_or("64,64"))?;
        let c = TrainCmdConfig {
            dataset: require(&self.dataset, "dataset")?,
            epochs: self.epochs.unwrap_or(100),
            batch_size: self.batch_size.unwrap_or(64),
            learning_rate: self.learning_rate.unwrap_or(1e-3),
            hidden: hidden.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","),
            window: self.window.unwrap_or(4),
            val_fraction: self.val_fraction.unwrap_or(0.15),
            seed: self.seed.unwrap_or(0),
            out: out_dir(&self.out, "train"),
        };
        if c.batch_size == 0 || c.window == 0 || hidden.contains(&0) {
            return Err(CliError::Config("batch_size, window and hidden widths must be ≥ 1".into()));
        }
        if !(c.learning_rate > 0.0) || !(0.0..1.0).contains(&c.val_fraction) {
            return Err(CliError::Config("learning_rate must be > 0 and val_fraction in [0, 1)".into()));
        }
        Ok(c)
    }
}

/// Sizes a model from the first record, fits input normalization on the
/// whole dataset and trains.
pub fn fit(records: &[EpisodeRecord], c: &TrainCmdConfig) -> Result<(FlowModel, TrainReport)> {
    let first = records.first().ok_or_else(|| CliError::Config("empty dataset".into()))?;
    let mut hyper = FlowHyper::new(first.observation.past().len(), first.future.len(), first.future.agents(), first.observation.context().len());
    hyper.window = c.window;
    hyper.hidden = parse_hidden(&c.hidden)?;
    let mut model = FlowModel::new(hyper, &mut RngStream::new(c.seed).fork("init"));
    model.fit_normalization(records).map_err(CliError::runtime)?;
    let tc = TrainConfig {
        epochs: c.epochs,
        batch_size: c.batch_size,
        learning_rate: c.learning_rate,
        seed: c.seed,
        val_fraction: c.val_fraction,
        ..TrainConfig::default()
    };
    let report = train(&mut model, records, &tc).map_err(CliError::runtime)?;
    Ok((model, report))
}

#[derive(Serialize)]
struct CurveRow {
    epoch: usize,
    train_nll: f64,
    val_nll: f64,
}

pub fn train_cmd(c: &TrainCmdConfig) -> Result<()> {
    if !c.dataset.exists() {
        return Err(CliError::Config(format!("missing dataset {}", c.dataset.display())));
    }
    let records = io::read_dataset(&c.dataset).map_err(|e| CliError::Config(format!("{}: {e}", c.dataset.display())))?;
    prepare(&c.out)?;
    let (model, report) = fit(&records, c)?;
    io::write_checkpoint(&c.out.join("checkpoint.json"), &model.to_checkpoint()).map_err(CliError::runtime)?;
    let curve: Vec<CurveRow> =
        report.curve.iter().map(|e| CurveRow { epoch: e.epoch, train_nll: e.train_nll, val_nll: e.val_nll }).collect();
    csv_out(&c.out.join("curve.csv"), &curve)?;
    let last = report.curve.last().expect("curve includes epoch 0");
    println!(
        "train: {} train / {} val records, best epoch {}, final val NLL {:.4} -> {}",
        report.train_records,
        report.val_records,
        report.best_epoch,
        last.val_nll,
        c.out.display()
    );
    write_manifest(&c.out, "train", c.seed, c)
}

// ---------------------------------------------------------------- plan

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct PlanSettings {
    pub mc_samples: usize,
    pub ascent_steps: usize,
    pub step_size: f64,
    pub constraint_weight: f64,
    pub goal_sigma: f64,
}

impl PlanSettings {
    fn from_flags(
        mc_samples: Option<usize>,
        ascent_steps: Option<usize>,
        step_size: Option<f64>,
        constraint_weight: Option<f64>,
        goal_sigma: Option<f64>,
    ) -> Result<Self> {
        let d = EvalOptions::default().plan;
        let s = PlanSettings {
            mc_samples: mc_samples.unwrap_or(d.mc_samples),
            ascent_steps: ascent_steps.unwrap_or(d.ascent_steps),
            step_size: step_size.unwrap_or(d.step_size),
            constraint_weight: constraint_weight.unwrap_or(d.constraint_weight),
            goal_sigma: goal_sigma.unwrap_or(d.goal_sigma),
        };
        s.to_config(0).validate().map_err(CliError::config)?;
        Ok(s)
    }

    pub fn to_config(&self, seed: u64) -> PlanConfig {
        PlanConfig {
            mc_samples: self.mc_samples,
            ascent_steps: self.ascent_steps,
            step_size: self.step_size,
            constraint_weight: self.constraint_weight,
            goal_sigma: self.goal_sigma,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct PlanCmdConfig {
    pub checkpoint: PathBuf,
    pub scenario: String,
    pub episode_seed: u64,
    pub planner: String,
    #[serde(flatten)]
    pub planning: PlanSettings,
    pub seed: u64,
    pub out: PathBuf,
}

impl PlanArgs {
    pub fn resolve(&self) -> Result<PlanCmdConfig> {
        let scenario = parse_scenarios(self.scenario.as_deref().unwrap_or("left-turn"))?;
        if scenario.len() != 1 {
            return Err(CliError::Config("plan takes exactly one scenario".into()));
        }
        let planner = self.planner.clone().unwrap_or_else(|| "cfo".into());
        if !matches!(parse_planner(&planner)?, PlannerKind::Cfo | PlannerKind::Joint | PlannerKind::Underconfident) {
            return Err(CliError::Config(format!("plan supports cfo, joint and underconfident, not {planner:?}")));
        }
        Ok(PlanCmdConfig {
            checkpoint: require(&self.checkpoint, "checkpoint")?,
            scenario: scenario[0].as_str().to_string(),
            episode_seed: self.episode_seed.unwrap_or(0),
            planner,
            planning: PlanSettings::from_flags(self.mc_samples, self.ascent_steps, self.step_size, self.constraint_weight, self.goal_sigma)?,
            seed: self.seed.unwrap_or(0),
            out: out_dir(&self.out, "plan"),
        })
    }
}

/// Observation and goal at the first step of an episode, with as much
/// history as `past_len` asks for.
pub fn initial_observation(episode: &Episode, past_len: usize) -> Result<(Observation, Goal)> {
    let mut past = episode.pre_history();
    past.push(episode.initial_state().joint());
    if past.len() < past_len {
        return Err(CliError::Config(format!("model wants {past_len} past steps, the scenario has {}", past.len())));
    }
    let past = past[past.len() - past_len..].to_vec();
    let obs = Observation::new(past, episode.context()).map_err(CliError::runtime)?;
    Ok((obs, episode.config.goal()))
}

fn robot_path(t: &JointTrajectory) -> Vec<[f64; 2]> {
    t.steps().iter().map(|s| s.robot().to_array()).collect()
}

fn spread(points: &[Position]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.max(a.distance(b));
        }
    }
    best
}

/// Plans once from the episode's first step and returns the JSON dump.
pub fn plan_once(model: &FlowModel, c: &PlanCmdConfig) -> Result<Value> {
    let id = ScenarioId::parse(&c.scenario).expect("resolved scenario");
    let episode = Episode::sample(&ScenarioConfig::for_scenario(id), c.episode_seed);
    let (obs, goal) = initial_observation(&episode, model.hyper().past_len)?;
    let config = c.planning.to_config(c.seed);
    let header = json!({
        "planner": c.planner,
        "scenario": c.scenario,
        "episode_seed": c.episode_seed,
        "intention": episode.intention.as_str(),
    });
    let body = match parse_planner(&c.planner)? {
        PlannerKind::Cfo => {
            let p = plan_cfo(model, &obs, &goal, &config).map_err(CliError::runtime)?;
            let rolls = p.rollouts(model, &obs).map_err(CliError::runtime)?;
            let divergence: Vec<f64> = (0..model.horizon())
                .map(|t| spread(&rolls.iter().map(|r| r.step(t).robot()).collect::<Vec<_>>()))
                .collect();
            json!({
                "objective": p.objective,
                "objective_history": p.objective_history,
                "zr": p.zr,
                "robot_divergence": divergence,
                "robot_rollouts": rolls.iter().map(robot_path).collect::<Vec<_>>(),
                "human_rollouts": rolls.iter().map(|r| r.agent_path(1).iter().map(|q| q.to_array()).collect::<Vec<_>>()).collect::<Vec<_>>(),
            })
        }
        PlannerKind::Joint => {
            let p = plan_joint(model, &obs, &goal, &config).map_err(CliError::runtime)?;
            let r = model.rollout(&obs, &p.z).map_err(CliError::runtime)?;
            json!({
                "objective": p.objective,
                "objective_history": p.objective_history,
                "zr": p.zr(),
                "rollout": r.steps().iter().map(io::state_to_pairs).collect::<Vec<_>>(),
            })
        }
        _ => {
            let cands = robot_candidates(&episode.initial_state(), &episode, model.horizon());
            let p = plan_underconfident(model, &obs, &goal, &cands, &config).map_err(CliError::runtime)?;
            json!({
                "index": p.index,
                "scores": p.scores,
                "path": p.path.iter().map(|q| q.to_array()).collect::<Vec<_>>(),
                "robot_divergence": vec![0.0; model.horizon()],
            })
        }
    };
    let mut out = header;
    out.as_object_mut().expect("object").extend(body.as_object().expect("object").clone());
    Ok(out)
}

pub fn plan_cmd(c: &PlanCmdConfig) -> Result<()> {
    let model = load_model(&c.checkpoint)?;
    prepare(&c.out)?;
    let dump = plan_once(&model, c)?;
    io::write_json(&c.out.join("plan.json"), &dump).map_err(CliError::runtime)?;
    println!("plan: {} on {} episode {} -> {}", c.planner, c.scenario, c.episode_seed, c.out.display());
    write_manifest(&c.out, "plan", c.seed, c)
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct EvalCmdConfig {
    pub checkpoint: Option<PathBuf>,
    /// Comma-separated scenario names.
    pub scenario: String,
    /// Comma-separated planner names.
    pub planner: String,
    pub episodes: usize,
    pub replan_steps: usize,
    #[serde(flatten)]
    pub planning: PlanSettings,
    pub seed: u64,
    pub out: PathBuf,
}

impl EvalArgs {
    pub fn resolve(&self) -> Result<EvalCmdConfig> {
        let episodes = self.episodes.unwrap_or(30);
        if episodes == 0 {
            return Err(CliError::Config("episodes must be ≥ 1".into()));
        }
        let scenarios = parse_scenarios(self.scenario.as_deref().unwrap_or("all"))?;
        let planners: Vec<PlannerKind> =
            self.planner.as_deref().unwrap_or("cfo,underconfident,joint").split(',').map(parse_planner).collect::<Result<_>>()?;
        if self.checkpoint.is_none() && planners.iter().any(|p| p.needs_model()) {
            return Err(CliError::Config("--checkpoint is required for learned planners".into()));
        }
        Ok(EvalCmdConfig {
            checkpoint: self.checkpoint.clone(),
            scenario: join_scenarios(&scenarios),
            planner: planners.iter().map(|p| p.as_str()).collect::<Vec<_>>().join(","),
            episodes,
            replan_steps: self.replan_steps.unwrap_or(EvalOptions::default().replan_steps),
            planning: PlanSettings::from_flags(self.mc_samples, self.ascent_steps, self.step_size, self.constraint_weight, self.goal_sigma)?,
            seed: self.seed.unwrap_or(0),
            out: out_dir(&self.out, "eval"),
        })
    }
}

#[derive(Serialize)]
struct EpisodeLine<'a> {
    method: &'a str,
    scenario: &'a str,
    seed: u64,
    intention: &'a str,
    robot: Vec<[f64; 2]>,
    human: Vec<[f64; 2]>,
    divergence: &'a [(usize, f64)],
    diagnostic: Option<&'a str>,
}

/// Runs every (planner, scenario) cell; rows come back planner-major.
pub fn evaluate(model: Option<&FlowModel>, c: &EvalCmdConfig) -> Result<Vec<crate::bench::Cell>> {
    let options = EvalOptions { plan: c.planning.to_config(0), replan_steps: c.replan_steps };
    let mut cells = Vec::new();
    for p in c.planner.split(',') {
        let kind = parse_planner(p)?;
        for id in parse_scenarios(&c.scenario)? {
            cells.push(run_cell(kind, id, model, c.episodes, c.seed, &options));
        }
    }
    Ok(cells)
}

pub fn eval_cmd(c: &EvalCmdConfig) -> Result<()> {
    let model = c.checkpoint.as_deref().map(load_model).transpose()?;
    prepare(&c.out)?;
    let cells = evaluate(model.as_ref(), c)?;
    let metrics: Vec<&MetricsRow> = cells.iter().flat_map(|cell| &cell.rows).collect();
    csv_out(&c.out.join("metrics.csv"), &metrics)?;
    let summary: Vec<SummaryRow> = cells.iter().flat_map(summary_rows).collect();
    csv_out(&c.out.join("summary.csv"), &summary)?;
    let mut lines = Vec::new();
    for cell in &cells {
        for (row, o) in cell.rows.iter().zip(&cell.outcomes) {
            lines.push(EpisodeLine {
                method: &row.method,
                scenario: &row.scenario,
                seed: row.seed,
                intention: &row.intention,
                robot: o.states.iter().map(|w| w.robot.position.to_array()).collect(),
                human: o.states.iter().map(|w| w.human.position.to_array()).collect(),
                divergence: &o.divergence,
                diagnostic: o.metrics.diagnostic.as_deref(),
            });
        }
    }
    io::write_json_lines(&c.out.join("episodes.jsonl"), &lines).map_err(CliError::runtime)?;
    for s in summary.iter().filter(|s| s.subset == "all") {
        println!("eval: {:<15} {:<11} RG {:>3}/{:<3} RG* {:>3}/{:<3} near-collision {:>3}/{}", s.method, s.scenario, s.rg, s.episodes, s.rg_star, s.episodes, s.near_collision, s.episodes);
    }
    write_manifest(&c.out, "eval", c.seed, c)
}

// ---------------------------------------------------------------- analyze-discrete

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct DiscreteCmdConfig {
    pub seeds: u64,
    pub horizon: usize,
    pub alphabet: usize,
    pub seed: u64,
    pub out: PathBuf,
}

impl DiscreteArgs {
    pub fn resolve(&self) -> Result<DiscreteCmdConfig> {
        let c = DiscreteCmdConfig {
            seeds: self.seeds.unwrap_or(200),
            horizon: self.horizon.unwrap_or(3),
            alphabet: self.alphabet.unwrap_or(2),
            seed: self.seed.unwrap_or(0),
            out: out_dir(&self.out, "analyze-discrete"),
        };
        if c.horizon == 0 || c.alphabet < 2 {
            return Err(CliError::Config("horizon must be ≥ 1 and alphabet ≥ 2".into()));
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct DiscreteRow {
    pub horizon: usize,
    pub seed: u64,
    pub total: usize,
    pub representable: usize,
    pub rank_consistent: usize,
    pub matches: bool,
    pub ties: bool,
}

#[derive(Serialize)]
struct Counterexample {
    horizon: usize,
    seed: u64,
    actions: Vec<Vec<usize>>,
}

/// Flow `i` of horizon `t` is seeded from an independent fork.
pub fn discrete_rows(c: &DiscreteCmdConfig) -> Result<(Vec<DiscreteRow>, Vec<(usize, u64, Vec<Vec<usize>>)>)> {
    let root = RngStream::new(c.seed);
    let mut rows = Vec::new();
    let mut ces = Vec::new();
    for t in 1..=c.horizon {
        for i in 0..c.seeds {
            let seed = root.fork_index(t as u64).fork_index(i).next_u64();
            let flow = DiscreteFlow::random(&mut RngStream::new(seed), t, 2, c.alphabet).map_err(CliError::runtime)?;
            let ch = characterize(&flow, 2).map_err(CliError::runtime)?;
            ces.extend(ch.counterexamples.iter().map(|p| (t, seed, p.actions.clone())));
            rows.push(DiscreteRow {
                horizon: t,
                seed,
                total: ch.total,
                representable: ch.representable,
                rank_consistent: ch.rank_consistent,
                matches: ch.matches,
                ties: ch.ties,
            });
        }
    }
    Ok((rows, ces))
}

pub fn analyze_discrete(c: &DiscreteCmdConfig) -> Result<()> {
    prepare(&c.out)?;
    let (rows, ces) = discrete_rows(c)?;
    csv_out(&c.out.join("report.csv"), &rows)?;
    let ces: Vec<Counterexample> = ces.into_iter().map(|(horizon, seed, actions)| Counterexample { horizon, seed, actions }).collect();
    io::write_json_lines(&c.out.join("counterexamples.jsonl"), &ces).map_err(CliError::runtime)?;
    for t in 1..=c.horizon {
        let of_t: Vec<&DiscreteRow> = rows.iter().filter(|r| r.horizon == t).collect();
        let matched = of_t.iter().filter(|r| r.matches).count();
        println!(
            "analyze-discrete: T={t} flows {} matched {} representable/total {}/{}",
            of_t.len(),
            matched,
            of_t[0].representable,
            of_t[0].total
        );
    }
    write_manifest(&c.out, "analyze-discrete", c.seed, c)
}

// ---------------------------------------------------------------- valuelab

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ValuelabCmdConfig {
    pub games: usize,
    pub horizon: usize,
    pub actions: usize,
    pub seed: u64,
    pub out: PathBuf,
}

impl ValuelabArgs {
    pub fn resolve(&self) -> Result<ValuelabCmdConfig> {
        let c = ValuelabCmdConfig {
            games: self.games.unwrap_or(1000),
            horizon: self.horizon.unwrap_or(2),
            actions: self.actions.unwrap_or(2),
            seed: self.seed.unwrap_or(0),
            out: out_dir(&self.out, "valuelab"),
        };
        if c.games == 0 || c.horizon == 0 || c.actions == 0 {
            return Err(CliError::Config("games, horizon and actions must be ≥ 1".into()));
        }
        if c.horizon > valuelab::MAX_HORIZON || c.actions > valuelab::MAX_ACTIONS {
            return Err(CliError::Config(format!(
                "horizon ≤ {} and actions ≤ {} keep enumeration tractable",
                valuelab::MAX_HORIZON,
                valuelab::MAX_ACTIONS
            )));
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct GameRow {
    pub game: String,
    pub horizon: usize,
    pub v_nl: f64,
    pub v_rl: f64,
    pub v_hl: f64,
    pub v_cl: f64,
    pub true_value_nl: f64,
    pub true_value_hl: f64,
    pub min_margin: f64,
    pub violations: usize,
}

/// Ordering margins below `-ORDER_TOL` count as violations.
pub const ORDER_TOL: f64 = 1e-12;

fn game_row(name: String, g: &FiniteGame) -> Result<GameRow> {
    let r = check_orderings(g).map_err(CliError::runtime)?;
    let v = &r.report.v;
    Ok(GameRow {
        game: name,
        horizon: g.horizon(),
        v_nl: v[0],
        v_rl: v[1],
        v_hl: v[2],
        v_cl: v[3],
        true_value_nl: r.report.true_value_nl,
        true_value_hl: r.report.true_value_hl,
        min_margin: r.min_margin(),
        violations: r.violations(ORDER_TOL),
    })
}

/// Random games `0..games`, each from its own fork of `seed`.
pub fn random_game_rows(c: &ValuelabCmdConfig) -> Result<Vec<GameRow>> {
    let root = RngStream::new(c.seed).fork_index(c.horizon as u64);
    (0..c.games)
        .map(|i| {
            let sizes = vec![c.actions; c.horizon];
            let g = FiniteGame::random(&mut root.fork_index(i as u64), sizes.clone(), sizes).map_err(CliError::runtime)?;
            game_row(format!("random-{i}"), &g)
        })
        .collect()
}

/// The two hand-built games: one where contingency is worth 0.5 over
/// open loop, one where only the co-leader probes.
pub fn constructed_game_rows() -> Result<Vec<GameRow>> {
    Ok(vec![game_row("g0".into(), &valuelab::game_g0())?, game_row("probe".into(), &valuelab::game_probe())?])
}

#[derive(Serialize)]
struct ValuelabSummary {
    horizon: usize,
    games: usize,
    violations: usize,
    min_margin: f64,
}

pub fn valuelab_cmd(c: &ValuelabCmdConfig) -> Result<()> {
    prepare(&c.out)?;
    let rows = random_game_rows(c)?;
    csv_out(&c.out.join("games.csv"), &rows)?;
    let summary = ValuelabSummary {
        horizon: c.horizon,
        games: rows.len(),
        violations: rows.iter().map(|r| r.violations).sum(),
        min_margin: rows.iter().map(|r| r.min_margin).fold(f64::INFINITY, f64::min),
    };
    csv_out(&c.out.join("summary.csv"), std::slice::from_ref(&summary))?;
    let constructed = constructed_game_rows()?;
    csv_out(&c.out.join("constructed.csv"), &constructed)?;
    println!(
        "valuelab: {} games T={} violations {} min margin {:.3e}; probe game gap {:.3}",
        summary.games,
        c.horizon,
        summary.violations,
        summary.min_margin,
        constructed[1].v_cl - constructed[1].true_value_hl
    );
    write_manifest(&c.out, "valuelab", c.seed, c)
}

// ---------------------------------------------------------------- grad-check

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct GradCheckCmdConfig {
    pub checkpoint: Option<PathBuf>,
    pub probes: u64,
    pub seed: u64,
    pub out: PathBuf,
}

impl GradCheckArgs {
    pub fn resolve(&self) -> Result<GradCheckCmdConfig> {
        Ok(GradCheckCmdConfig {
            checkpoint: self.checkpoint.clone(),
            probes: self.probes.unwrap_or(20).max(1),
            seed: self.seed.unwrap_or(0),
            out: out_dir(&self.out, "grad-check"),
        })
    }
}

/// The model a grad check without a checkpoint runs on.
pub fn default_model(seed: u64) -> FlowModel {
    FlowModel::new(FlowHyper::new(4, 12, 2, CONTEXT_DIM), &mut RngStream::new(seed).fork("init"))
}

pub fn grad_check_cmd(c: &GradCheckCmdConfig) -> Result<()> {
    let model = match &c.checkpoint {
        Some(p) => load_model(p)?,
        None => default_model(c.seed),
    };
    prepare(&c.out)?;
    let rows: Vec<GradRow> = gradcheck::run(&model, c.seed, c.probes)?;
    csv_out(&c.out.join("gradcheck.csv"), &rows)?;
    for r in &rows {
        println!("grad-check: {:<28} coords {:>5} max rel error {:.3e}", r.check, r.coordinates, r.max_rel_error);
    }
    write_manifest(&c.out, "grad-check", c.seed, c)?;
    let worst = rows.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    if worst >= GRAD_TOL {
        return Err(CliError::Runtime(format!("max relative error {worst:.3e} ≥ {GRAD_TOL:e}")));
    }
    Ok(())
}
