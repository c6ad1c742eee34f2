//! Parallel closed-loop evaluation. Episodes run on the rayon pool; results
//! come back in episode order, so outputs do not depend on the thread count.

use contingent_core::flow::FlowModel;
use contingent_core::simworld::{run_episode, EpisodeOutcome, EvalOptions, PlannerKind, ScenarioConfig};
use contingent_core::{Intention, RngStream, ScenarioId};
use rayon::prelude::*;
use serde::Serialize;

/// Seed of evaluation episode `index`. Each scenario gets its own fork so
/// that adding a scenario does not shift the others' episodes.
pub fn episode_seed(seed: u64, scenario: ScenarioId, index: usize) -> u64 {
    RngStream::new(seed).fork(scenario.as_str()).fork_index(index as u64).next_u64()
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct MetricsRow {
    pub method: String,
    pub scenario: String,
    pub seed: u64,
    #[serde(rename = "RG")]
    pub rg: u8,
    #[serde(rename = "RG*")]
    pub rg_star: u8,
    pub near_collision: u8,
    /// Empty when the goal was not reached.
    pub steps: Option<usize>,
    pub intention: String,
    pub expert_steps: Option<usize>,
    pub min_distance: f64,
    /// Largest spread of the robot position three steps ahead across the
    /// plan's human samples, over all replans; contingent planner only.
    pub max_divergence: Option<f64>,
    pub diagnostic: String,
}

/// Evaluated episodes of one (planner, scenario) cell.
#[derive(Debug, Clone)]
pub struct Cell {
    pub planner: PlannerKind,
    pub scenario: ScenarioId,
    pub rows: Vec<MetricsRow>,
    pub outcomes: Vec<EpisodeOutcome>,
}

pub fn run_cell(
    planner: PlannerKind,
    scenario: ScenarioId,
    model: Option<&FlowModel>,
    episodes: usize,
    seed: u64,
    options: &EvalOptions,
) -> Cell {
    let config = ScenarioConfig::for_scenario(scenario);
    let outcomes: Vec<(u64, EpisodeOutcome)> = (0..episodes)
        .into_par_iter()
        .map(|i| {
            let s = episode_seed(seed, scenario, i);
            (s, run_episode(planner, model, &config, s, options))
        })
        .collect();
    let rows = outcomes
        .iter()
        .map(|(s, o)| {
            let m = &o.metrics;
            MetricsRow {
                method: planner.as_str().to_string(),
                scenario: scenario.as_str().to_string(),
                seed: *s,
                rg: m.reached_goal as u8,
                rg_star: m.near_expert as u8,
                near_collision: m.near_collision as u8,
                steps: m.steps_to_goal,
                intention: m.intention.as_str().to_string(),
                expert_steps: m.expert_steps,
                min_distance: m.min_distance,
                max_divergence: o.divergence.iter().map(|d| d.1).reduce(f64::max),
                diagnostic: m.diagnostic.clone().unwrap_or_default(),
            }
        })
        .collect();
    Cell { planner, scenario, rows, outcomes: outcomes.into_iter().map(|(_, o)| o).collect() }
}

/// One row of `summary.csv`: counts and rates over a cell, overall and
/// split by the human's hidden intention.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub scenario: String,
    pub subset: String,
    pub episodes: usize,
    pub rg: usize,
    pub rg_star: usize,
    pub near_collision: usize,
    pub rg_rate: f64,
    pub rg_star_rate: f64,
    pub near_collision_rate: f64,
}

fn summarize(method: &str, scenario: &str, subset: &str, rows: &[&MetricsRow]) -> SummaryRow {
    let n = rows.len();
    let count = |f: fn(&MetricsRow) -> u8| rows.iter().map(|r| f(r) as usize).sum::<usize>();
    let (rg, rg_star, nc) = (count(|r| r.rg), count(|r| r.rg_star), count(|r| r.near_collision));
    let rate = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    SummaryRow {
        method: method.to_string(),
        scenario: scenario.to_string(),
        subset: subset.to_string(),
        episodes: n,
        rg,
        rg_star,
        near_collision: nc,
        rg_rate: rate(rg),
        rg_star_rate: rate(rg_star),
        near_collision_rate: rate(nc),
    }
}

/// Rows for subsets `all`, `yield` and `no-yield`.
pub fn summary_rows(cell: &Cell) -> Vec<SummaryRow> {
    let method = cell.planner.as_str();
    let scenario = cell.scenario.as_str();
    let all: Vec<&MetricsRow> = cell.rows.iter().collect();
    let by = |i: Intention| -> Vec<&MetricsRow> { cell.rows.iter().filter(|r| r.intention == i.as_str()).collect() };
    vec![
        summarize(method, scenario, "all", &all),
        summarize(method, scenario, Intention::Yield.as_str(), &by(Intention::Yield)),
        summarize(method, scenario, Intention::NoYield.as_str(), &by(Intention::NoYield)),
    ]
}
