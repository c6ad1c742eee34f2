use alloc::vec::Vec;

use proptest::prelude::*;

use super::*;
use crate::domain::Intention;

fn world(robot: Position, human: Position) -> WorldState {
    WorldState {
        robot: AgentState { position: robot, velocity: Position::ORIGIN },
        human: AgentState { position: human, velocity: Position::ORIGIN },
        intention: Intention::Yield,
        human_mode: HumanMode::Cruising,
        step: 0,
    }
}

fn episode(id: ScenarioId, seed: u64, intention: Intention) -> Episode {
    Episode::sample(&ScenarioConfig::for_scenario(id), seed).with_intention(intention)
}

/// Runs `episode` with a fixed robot policy.
fn simulate(ep: &Episode, mut robot: impl FnMut(&WorldState) -> Position) -> Vec<WorldState> {
    let mut s = ep.initial_state();
    let mut out = alloc::vec![s];
    for _ in 0..ep.config.horizon_steps {
        let t = robot(&s);
        s = ep.advance(&s, t);
        out.push(s);
    }
    out
}

#[test]
fn env_step_equilibrium() {
    let s = world(Position::new(3.0, -2.0), Position::new(-1.0, 4.0));
    let g = ControllerGains::deadbeat(0.4);
    let n = env_step(&s, s.robot.position, s.human.position, &g, 0.4);
    assert_eq!(n.robot, s.robot);
    assert_eq!(n.human, s.human);
    assert_eq!(n.step, 1);
}

#[test]
fn env_step_arithmetic() {
    let s = world(Position::ORIGIN, Position::new(0.0, 10.0));
    let g = ControllerGains { kp: 1.0, kd: 0.0, max_accel: f64::INFINITY, max_speed: f64::INFINITY };
    let n = env_step(&s, Position::new(1.0, 0.0), s.human.position, &g, 1.0);
    assert_eq!(n.robot.velocity, Position::new(1.0, 0.0));
    assert_eq!(n.robot.position, Position::new(1.0, 0.0));
}

/// Independent re-implementation of one semi-implicit PD step.
fn oracle_step(x: [f64; 2], v: [f64; 2], target: [f64; 2], g: &ControllerGains, dt: f64) -> ([f64; 2], [f64; 2]) {
    let mut a = [g.kp * (target[0] - x[0]) - g.kd * v[0], g.kp * (target[1] - x[1]) - g.kd * v[1]];
    let an = (a[0] * a[0] + a[1] * a[1]).sqrt();
    if an > g.max_accel {
        a = [a[0] * g.max_accel / an, a[1] * g.max_accel / an];
    }
    let mut nv = [v[0] + a[0] * dt, v[1] + a[1] * dt];
    let vn = (nv[0] * nv[0] + nv[1] * nv[1]).sqrt();
    if vn > g.max_speed {
        nv = [nv[0] * g.max_speed / vn, nv[1] * g.max_speed / vn];
    }
    ([x[0] + nv[0] * dt, x[1] + nv[1] * dt], nv)
}

#[test]
fn shipped_gains_step_response_settles() {
    let cfg = ScenarioConfig::left_turn();
    let target = Position::new(20.0, 0.0);
    let mut s = world(Position::ORIGIN, Position::new(0.0, 50.0));
    let (mut x, mut v) = ([0.0, 0.0], [0.0, 0.0]);
    for _ in 0..20 {
        s = env_step(&s, target, s.human.position, &cfg.gains, cfg.dt);
        (x, v) = oracle_step(x, v, [20.0, 0.0], &cfg.gains, cfg.dt);
        assert!((s.robot.position.x - x[0]).abs() < 1e-12 && (s.robot.velocity.x - v[0]).abs() < 1e-12);
    }
    assert!(s.robot.position.distance(&target) < 2.0, "{}", s.robot.position);
}

#[test]
fn scenario_configs_validate() {
    for id in ScenarioId::ALL {
        let c = ScenarioConfig::for_scenario(id);
        assert_eq!(c.validate(), Ok(()), "{id}");
        let t = c.translated(Position::new(7.0, -3.0));
        assert_eq!(t.validate(), Ok(()));
        assert!((t.robot_path.point_at(t.robot_probe) - c.robot_path.point_at(c.robot_probe) - Position::new(7.0, -3.0)).norm() < 1e-12);
    }
    let mut c = ScenarioConfig::left_turn();
    c.p_yield = 1.5;
    assert!(c.validate().is_err());
    let mut c = ScenarioConfig::left_turn();
    c.gains.kp = 0.0;
    assert!(c.validate().is_err());
}

#[test]
fn robot_outside_entry_zone_means_nominal_crossing() {
    for id in ScenarioId::ALL {
        for intention in [Intention::Yield, Intention::NoYield] {
            let ep = episode(id, 11, intention);
            let states = simulate(&ep, |s| s.robot.position);
            assert!(states.iter().all(|s| s.human_mode == HumanMode::Cruising));
            assert!(states.iter().all(|s| (s.human.speed() - ep.human_speed).abs() < 1e-9), "{id}");
        }
    }
}

#[test]
fn no_yield_human_keeps_speed_when_probed() {
    for id in ScenarioId::ALL {
        let ep = episode(id, 5, Intention::NoYield);
        let probe = Branch { enter: true, complete: Completion::Never };
        let states = simulate(&ep, |s| suboptimal_expert(s, probe, &ep));
        assert!(states.iter().any(|s| ep.config.entry_zone.contains(s.robot.position)));
        assert!(states.iter().all(|s| (s.human.speed() - ep.human_speed).abs() < 1e-9), "{id}");
    }
}

#[test]
fn probed_yield_human_stops_before_conflict_zone() {
    for id in ScenarioId::ALL {
        for seed in 0..20 {
            let ep = episode(id, seed, Intention::Yield);
            let probe = Branch { enter: true, complete: Completion::Never };
            let states = simulate(&ep, |s| suboptimal_expert(s, probe, &ep));
            let yielding: Vec<&WorldState> = states.iter().filter(|s| matches!(s.human_mode, HumanMode::Yielding { .. })).collect();
            assert!(!yielding.is_empty(), "{id} seed {seed}");
            assert!(yielding.iter().all(|s| !ep.config.conflict_zone.contains(s.human.position)));
            let slowest = yielding.iter().map(|s| s.human.speed()).fold(f64::INFINITY, f64::min);
            assert!(slowest < 0.1, "{id} seed {seed}: {slowest}");
        }
    }
}

#[test]
fn active_contingency_witness() {
    // Matched seeds: identical episodes except whether the robot probes.
    let probe = Branch { enter: true, complete: Completion::Never };
    for id in ScenarioId::ALL {
        for seed in 0..30 {
            for intention in [Intention::Yield, Intention::NoYield] {
                let ep = episode(id, seed, intention);
                let stopped = |b: Branch| simulate(&ep, |s| suboptimal_expert(s, b, &ep)).iter().any(|s| s.human.speed() < 0.1);
                let expect = intention == Intention::Yield;
                assert_eq!(stopped(probe), expect, "{id} seed {seed} {intention}");
                assert!(!stopped(Branch::HOLD_OUTSIDE), "{id} seed {seed} {intention}");
            }
        }
    }
}

#[test]
fn conservative_branch_holds_outside_until_human_clears() {
    for id in ScenarioId::ALL {
        for intention in [Intention::Yield, Intention::NoYield] {
            let ep = episode(id, 3, intention);
            let states = simulate_expert(&ep, Branch::HOLD_OUTSIDE);
            for s in &states {
                if ep.config.entry_zone.contains(s.robot.position) {
                    assert!(ep.human_cleared(s), "{id}");
                }
            }
            assert!(states.iter().any(|s| ep.config.goal_region.contains(s.robot.position)));
        }
    }
}

#[test]
fn risky_branch_on_no_yield_is_a_near_collision() {
    let opts = EvalOptions::default();
    for id in ScenarioId::ALL {
        let cfg = ScenarioConfig::for_scenario(id);
        let (mut n, mut hits) = (0, 0);
        for seed in 0..80 {
            let ep = Episode::sample(&cfg, seed);
            if ep.intention != Intention::NoYield {
                continue;
            }
            let m = run_episode(PlannerKind::Expert(Branch::RISKY), None, &cfg, seed, &opts).metrics;
            assert!(!(m.near_collision && m.near_expert), "{id} seed {seed}: {m:?}");
            n += 1;
            hits += m.near_collision as usize;
        }
        // A late-starting human occasionally lets the left turn slip through.
        assert!(hits * 10 >= n * 9, "{id}: {hits}/{n}");
    }
}

#[test]
fn oracle_expert_is_near_expert_on_both_intentions() {
    let opts = EvalOptions::default();
    for id in ScenarioId::ALL {
        let cfg = ScenarioConfig::for_scenario(id);
        let mut seen = [false; 2];
        for seed in 0..40 {
            let m = run_episode(PlannerKind::Expert(Branch::EXPERT), None, &cfg, seed, &opts).metrics;
            assert!(m.reached_goal && m.near_expert && !m.near_collision, "{id} seed {seed}: {m:?}");
            assert_eq!(m.steps_to_goal, m.expert_steps);
            seen[(m.intention == Intention::Yield) as usize] = true;
        }
        assert_eq!(seen, [true, true]);
    }
}

#[test]
fn yielding_makes_the_expert_faster_by_more_than_the_slack() {
    // The gap the frozen robot pays: waiting for a human who would have
    // yielded costs more than the near-expert slack.
    for id in ScenarioId::ALL {
        for seed in 0..20 {
            let y = episode(id, seed, Intention::Yield);
            let fast = expert_time(&y).unwrap();
            let outside = simulate_expert(&y, Branch::HOLD_OUTSIDE);
            let slow = outside.iter().position(|s| y.config.goal_region.contains(s.robot.position)).unwrap();
            assert!(slow > fast + y.config.slack_steps, "{id} seed {seed}: {fast} vs {slow}");
        }
    }
}

#[test]
fn stationary_robot_never_reaches_goal() {
    let m = run_episode(PlannerKind::Stationary, None, &ScenarioConfig::left_turn(), 4, &EvalOptions::default()).metrics;
    assert!(!m.reached_goal && !m.near_expert);
    assert_eq!(m.steps_to_goal, None);
}

#[test]
fn learned_planner_without_model_is_a_recorded_failure() {
    let out = run_episode(PlannerKind::Cfo, None, &ScenarioConfig::left_turn(), 4, &EvalOptions::default());
    assert!(!out.metrics.reached_goal);
    assert!(out.metrics.diagnostic.as_deref().unwrap().contains("needs a model"));
}

#[test]
fn metrics_are_a_function_of_the_log() {
    let cfg = ScenarioConfig::overtake();
    let out = run_episode(PlannerKind::Expert(Branch::RISKY), None, &cfg, 8, &EvalOptions::default());
    let ep = Episode::sample(&cfg, 8);
    assert_eq!(metrics_from_log(&ep, &out.states, expert_time(&ep), None), out.metrics);
}

#[test]
fn episodes_replay_exactly() {
    let cfg = ScenarioConfig::right_turn();
    let a = run_episode(PlannerKind::Expert(Branch::EXPERT), None, &cfg, 21, &EvalOptions::default());
    let b = run_episode(PlannerKind::Expert(Branch::EXPERT), None, &cfg, 21, &EvalOptions::default());
    assert_eq!(a, b);
}

/// Leaf probabilities implied by the branch mixture and `p_yield`, assuming
/// every probe is seen in time and every risky completion against a
/// non-yielding human is a near collision.
fn leaf_probabilities(p_yield: f64) -> [f64; 4] {
    let enter = 0.6;
    [1.0 - enter, enter * p_yield, enter * (1.0 - p_yield) * 0.75, enter * (1.0 - p_yield) * 0.25]
}

#[test]
fn dataset_covers_every_leaf() {
    let n = 400;
    for id in ScenarioId::ALL {
        let cfg = ScenarioConfig::for_scenario(id);
        let mut counts = [0usize; 4];
        let root = RngStream::new(77).fork(id.as_str());
        for i in 0..n as u64 {
            let ep = Episode::sample(&cfg, root.fork_index(i).next_u64());
            let leaf = classify_leaf(&ep, &simulate_expert(&ep, ep.branch));
            counts[Leaf::ALL.iter().position(|l| *l == leaf).unwrap()] += 1;
        }
        for (k, p) in leaf_probabilities(cfg.p_yield).iter().enumerate() {
            let mean = p * n as f64;
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((counts[k] as f64 - mean).abs() <= 4.0 * sd, "{id} {:?}: {} vs {mean:.1}", Leaf::ALL[k], counts[k]);
            assert!(counts[k] >= 15, "{id} {:?}: {}", Leaf::ALL[k], counts[k]);
        }
    }
}

#[test]
fn dataset_is_seeded_and_well_formed() {
    let cfg = ScenarioConfig::left_turn();
    let a = generate_dataset(&cfg, 12, 5);
    assert_eq!(a, generate_dataset(&cfg, 12, 5));
    assert_ne!(a, generate_dataset(&cfg, 12, 6));
    assert_eq!(a.len(), 12);

    let one = generate_dataset(&cfg, 1, 9);
    assert_eq!(one.len(), 1);
    let r = &one[0];
    assert!(r.is_finite());
    assert_eq!(r.future.len(), cfg.future_len);
    assert_eq!(r.observation.past().len(), cfg.past_len);
    assert_eq!(r.observation.context().len(), CONTEXT_DIM);
    assert_eq!(r.observation.context()[0], 1.0);
    assert_eq!(r.scenario_id, ScenarioId::LeftTurn);

    let w = generate_dataset_windows(&cfg, 3, 5, 6);
    assert_eq!(w.len(), 18);
    // Windows of one episode are consecutive slices of the same log.
    assert!(w[..6].iter().all(|r| r.seed == w[0].seed));
}

#[test]
fn candidates_follow_the_route() {
    let ep = episode(ScenarioId::LeftTurn, 2, Intention::Yield);
    let s = ep.initial_state();
    let cands = robot_candidates(&s, &ep, 12);
    assert_eq!(cands.len(), 1 + 2 * 12);
    assert!(cands.iter().all(|c| c.len() == 12));
    // Holding the whole horizon at the outside point never enters the zone.
    assert!(cands[12].iter().all(|p| !ep.config.entry_zone.contains(*p)));
    for c in &cands {
        for p in c {
            let q = ep.config.robot_path.point_at(ep.config.robot_path.project(*p));
            assert!(p.distance(&q) < 0.5);
        }
    }
}

proptest! {
    #[test]
    fn min_separation_matches_dense_sampling(
        pts in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0, -10.0f64..10.0, -10.0f64..10.0), 2..6)
    ) {
        let states: Vec<WorldState> = pts.iter().map(|&(a, b, c, d)| world(Position::new(a, b), Position::new(c, d))).collect();
        let mut dense = f64::INFINITY;
        for w in states.windows(2) {
            for k in 0..=2000 {
                let u = k as f64 / 2000.0;
                let r = w[0].robot.position + (w[1].robot.position - w[0].robot.position) * u;
                let h = w[0].human.position + (w[1].human.position - w[0].human.position) * u;
                dense = dense.min(r.distance(&h));
            }
        }
        let exact = min_separation(&states);
        prop_assert!(exact <= dense + 1e-12);
        prop_assert!(dense - exact < 0.05);
    }
}
