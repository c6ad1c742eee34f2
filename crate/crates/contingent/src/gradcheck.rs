//! Central-difference checks of the training and planning gradients on a
//! real model, next to the per-op suite from `diffkit`.

use contingent_core::diffkit::op_gradient_suite;
use contingent_core::flow::{FlowModel, ZSequence};
use contingent_core::planner::{cfo_objective, cfo_objective_and_grad, draw_human_samples, PlanConfig};
use contingent_core::simworld::{generate_dataset_windows, Episode, EvalOptions, ScenarioConfig};
use contingent_core::{EpisodeRecord, Goal, Observation, RngStream, ScenarioId};
use serde::Serialize;

use crate::{CliError, Result};

/// Step of the central differences.
pub const FD_STEP: f64 = 1e-5;

/// Every `NLL_STRIDE`-th parameter is probed; the stride is prime so that
/// every layer and both weights and biases are hit.
pub const NLL_STRIDE: usize = 37;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct GradRow {
    pub check: String,
    pub coordinates: usize,
    pub max_rel_error: f64,
}

fn rel(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Largest relative error of the mean-NLL gradient over strided parameters.
pub fn nll_check(model: &FlowModel, records: &[EpisodeRecord], stride: usize) -> Result<(usize, f64)> {
    let (_, grad) = model.nll_and_grad(records).map_err(CliError::runtime)?;
    let p = model.params_flat();
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    let mut n = 0;
    for i in (0..p.len()).step_by(stride.max(1)) {
        let mut q = p.clone();
        q[i] += FD_STEP;
        probe.set_params_flat(&q);
        let fp = probe.mean_nll(records).map_err(CliError::runtime)?;
        q[i] -= 2.0 * FD_STEP;
        probe.set_params_flat(&q);
        let fm = probe.mean_nll(records).map_err(CliError::runtime)?;
        worst = worst.max(rel(grad[i], (fp - fm) / (2.0 * FD_STEP)));
        n += 1;
    }
    Ok((n, worst))
}

/// Largest relative error of the contingent objective's gradient in every
/// coordinate of `zr`.
pub fn cfo_check(
    model: &FlowModel,
    obs: &Observation,
    goal: &Goal,
    zr: &[[f64; 2]],
    zh: &[ZSequence],
    config: &PlanConfig,
) -> Result<(usize, f64)> {
    let (_, grad) = cfo_objective_and_grad(model, obs, goal, zr, zh, config).map_err(CliError::runtime)?;
    let mut worst = 0.0f64;
    for i in 0..2 * zr.len() {
        let mut p = zr.to_vec();
        p[i / 2][i % 2] += FD_STEP;
        let fp = cfo_objective(model, obs, goal, &p, zh, config).map_err(CliError::runtime)?;
        p[i / 2][i % 2] -= 2.0 * FD_STEP;
        let fm = cfo_objective(model, obs, goal, &p, zh, config).map_err(CliError::runtime)?;
        worst = worst.max(rel(grad[i], (fp - fm) / (2.0 * FD_STEP)));
    }
    Ok((2 * zr.len(), worst))
}

/// Starting observation of a left-turn episode.
pub fn episode_observation(seed: u64) -> (Observation, Goal) {
    let episode = Episode::sample(&ScenarioConfig::for_scenario(ScenarioId::LeftTurn), seed);
    let mut past = episode.pre_history();
    past.push(episode.initial_state().joint());
    let keep = episode.config.past_len;
    let past = past[past.len() - keep..].to_vec();
    (Observation::new(past, episode.context()).expect("finite episode"), episode.config.goal())
}

/// The op suite, the NLL gradient on a few simulated records and the
/// contingent objective's gradient at `probes` random `zr` points.
pub fn run(model: &FlowModel, seed: u64, probes: u64) -> Result<Vec<GradRow>> {
    let mut rows: Vec<GradRow> = op_gradient_suite(probes)
        .map_err(CliError::runtime)?
        .into_iter()
        .map(|r| GradRow { check: format!("op/{}", r.name), coordinates: probes as usize, max_rel_error: r.max_rel_error })
        .collect();

    let root = RngStream::new(seed);
    let cfg = ScenarioConfig::for_scenario(ScenarioId::LeftTurn);
    let records = generate_dataset_windows(&cfg, 2, root.fork("nll-data").next_u64(), 2);
    let (n, worst) = nll_check(model, &records, NLL_STRIDE)?;
    rows.push(GradRow { check: "nll/theta".into(), coordinates: n, max_rel_error: worst });

    let plan = PlanConfig { mc_samples: 8, seed: root.fork("cfo-samples").next_u64(), ..EvalOptions::default().plan };
    let zh = draw_human_samples(model, &plan);
    let mut rng = root.fork("cfo-probes");
    let (mut coords, mut worst) = (0, 0.0f64);
    for _ in 0..probes.max(1) {
        let (obs, goal) = episode_observation(rng.next_u64());
        let zr: Vec<[f64; 2]> = (0..model.horizon()).map(|_| [rng.normal(), rng.normal()]).collect();
        let (n, w) = cfo_check(model, &obs, &goal, &zr, &zh, &plan)?;
        coords += n;
        worst = worst.max(w);
    }
    rows.push(GradRow { check: "cfo/zr".into(), coordinates: coords, max_rel_error: worst });
    Ok(rows)
}
