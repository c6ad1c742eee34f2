use alloc::vec::Vec;

use crate::domain::{EpisodeRecord, JointState, JointTrajectory, Observation, RngStream};

use super::{min_separation, suboptimal_expert, Branch, Episode, HumanMode, ScenarioConfig, WorldState};

/// Outcome leaves of the decision tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Leaf {
    /// Robot waited outside and completed after the human passed.
    WaitOutside,
    /// Robot probed and the human yielded.
    EnterYielded,
    /// Robot probed, the human did not yield, robot waited.
    EnterWaited,
    /// Robot probed, the human did not yield, robot completed anyway.
    EnterNearCollision,
}

impl Leaf {
    pub const ALL: [Leaf; 4] = [Leaf::WaitOutside, Leaf::EnterYielded, Leaf::EnterWaited, Leaf::EnterNearCollision];

    pub fn as_str(self) -> &'static str {
        match self {
            Leaf::WaitOutside => "wait-outside",
            Leaf::EnterYielded => "enter-yielded",
            Leaf::EnterWaited => "enter-waited",
            Leaf::EnterNearCollision => "enter-near-collision",
        }
    }
}

/// Steps `0..=horizon_steps` of the scripted expert on `branch`.
pub fn simulate_expert(episode: &Episode, branch: Branch) -> Vec<WorldState> {
    let mut state = episode.initial_state();
    let mut states = Vec::with_capacity(episode.config.horizon_steps + 1);
    states.push(state);
    for _ in 0..episode.config.horizon_steps {
        let target = suboptimal_expert(&state, branch, episode);
        state = episode.advance(&state, target);
        states.push(state);
    }
    states
}

/// Leaf of a simulated episode: whether the robot was inside the entry zone
/// before the human cleared, whether the human yielded, and whether the
/// agents came closer than `d_safe`, all up to the robot reaching the goal.
pub fn classify_leaf(episode: &Episode, states: &[WorldState]) -> Leaf {
    let c = &episode.config;
    let upto = states.iter().position(|s| c.goal_region.contains(s.robot.position)).map_or(states.len(), |k| k + 1);
    let states = &states[..upto];
    let entered = states.iter().any(|s| c.entry_zone.contains(s.robot.position) && !episode.human_cleared(s));
    let yielded = states.iter().any(|s| s.human_mode != HumanMode::Cruising);
    let near = min_separation(states) < c.d_safe;
    match (entered, yielded, near) {
        (false, _, _) => Leaf::WaitOutside,
        (true, true, _) => Leaf::EnterYielded,
        (true, false, true) => Leaf::EnterNearCollision,
        (true, false, false) => Leaf::EnterWaited,
    }
}

fn episode_seeds(config: &ScenarioConfig, n: usize, seed: u64) -> Vec<u64> {
    let root = RngStream::new(seed).fork(config.scenario_id.as_str());
    (0..n as u64).map(|i| root.fork_index(i).next_u64()).collect()
}

/// One record per episode; see [`generate_dataset_windows`].
pub fn generate_dataset(config: &ScenarioConfig, n_episodes: usize, seed: u64) -> Vec<EpisodeRecord> {
    generate_dataset_windows(config, n_episodes, seed, 1)
}

/// Simulates `n_episodes` expert episodes (branch and intention drawn per
/// episode) and cuts up to `windows` distinct (past, future) records from
/// each. Window starts are uniform over steps up to the robot reaching the
/// goal region.
pub fn generate_dataset_windows(config: &ScenarioConfig, n_episodes: usize, seed: u64, windows: usize) -> Vec<EpisodeRecord> {
    let (hp, tt) = (config.past_len, config.future_len);
    let mut out = Vec::with_capacity(n_episodes * windows);
    for ep_seed in episode_seeds(config, n_episodes, seed) {
        let ep = Episode::sample(config, ep_seed);
        let states = simulate_expert(&ep, ep.branch);
        let mut log: Vec<JointState> = ep.pre_history();
        log.extend(states.iter().map(WorldState::joint));
        // log[hp - 1 + k] is step k.
        let goal_step = states.iter().position(|s| ep.config.goal_region.contains(s.robot.position)).unwrap_or(states.len());
        let last_start = goal_step.min(states.len() - 1 - tt);
        let mut starts: Vec<usize> = (0..=last_start).collect();
        let mut rng = RngStream::new(ep_seed).fork("windows");
        rng.shuffle(&mut starts);
        starts.truncate(windows);
        starts.sort_unstable();
        let context = ep.context();
        for k in starts {
            let i = hp - 1 + k;
            let past = log[i + 1 - hp..=i].to_vec();
            let future = log[i + 1..=i + tt].to_vec();
            out.push(EpisodeRecord {
                observation: Observation::new(past, context.clone()).expect("simulated states are finite"),
                future: JointTrajectory::from_raw(future),
                scenario_id: config.scenario_id,
                human_intention: ep.intention,
                seed: ep_seed,
            });
        }
    }
    out
}
