use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;

use super::*;

const TOL: f64 = 1e-12;

fn random_game(seed: u64, horizon: usize, actions: usize) -> FiniteGame {
    let mut rng = RngStream::new(seed);
    FiniteGame::random(&mut rng, vec![actions; horizon], vec![actions; horizon]).unwrap()
}

/// Brute-force oracle for the open-loop planners: enumerate every robot
/// sequence and every human sequence and weight by the product of
/// conditionals. The orange operator is the ratio of joint marginals
/// under the robot prior.
fn oracle_open_loop(game: &FiniteGame, active: bool, first: usize) -> f64 {
    let horizon = game.horizon();
    let rs: Vec<Vec<usize>> = sequences(&(0..horizon).map(|t| game.robot_actions(t)).collect::<Vec<_>>());
    let hs: Vec<Vec<usize>> = sequences(&(0..horizon).map(|t| game.human_actions(t)).collect::<Vec<_>>());
    // Joint probability of a human prefix of length `k` given a robot sequence.
    let like = |r: &[usize], h: &[usize]| -> f64 { (0..h.len()).map(|s| game.green(r, &h[..s])[h[s]]).product() };
    // Marginal of a human prefix under the uniform prior, unnormalized.
    let marginal = |h: &[usize]| -> f64 { rs.iter().map(|r| like(r, h)).sum() };
    let mut best = f64::NEG_INFINITY;
    for r in rs.iter().filter(|r| r[0] == first) {
        let mut total = 0.0;
        for h in &hs {
            let p = if active {
                like(r, h)
            } else {
                (1..=horizon).map(|k| marginal(&h[..k]) / marginal(&h[..k - 1])).product()
            };
            total += p * game.return_of(r, h);
        }
        best = best.max(total);
    }
    best
}

#[test]
fn g0_matches_hand_values() {
    let g = game_g0();
    assert!((q_nl(&g, 0).unwrap()).abs() < TOL);
    assert!((q_rl(&g, 0).unwrap()).abs() < TOL);
    assert!((q_hl(&g, 0).unwrap() - 0.5).abs() < TOL);
    assert!((q_cl(&g, 0).unwrap() - 0.5).abs() < TOL);
    let r = value_report(&g).unwrap();
    assert!((r.v_of(PlannerKind::HumanLeader) - r.v_of(PlannerKind::NoLeader) - 0.5).abs() < TOL);
    assert!((r.true_value_hl - r.v_of(PlannerKind::CoLeader)).abs() < TOL);
}

#[test]
fn probe_game_has_a_strict_human_leader_gap() {
    let g = game_probe();
    let r = value_report(&g).unwrap();
    assert_eq!(r.argmax[PlannerKind::HumanLeader as usize], 0, "human leader waits");
    assert_eq!(r.argmax[PlannerKind::CoLeader as usize], 1, "co-leader probes");
    assert!((r.true_value_hl - 0.0).abs() < TOL);
    assert!((r.v_of(PlannerKind::CoLeader) - 0.9).abs() < TOL);
    assert!(r.true_value_hl < r.v_of(PlannerKind::CoLeader) - 0.5);
    // The orange model averages the probe away.
    let o = orange_conditional(&g).unwrap();
    assert!((o.row(&[0])[0] - 0.5).abs() < TOL);
}

#[test]
fn two_step_forms_agree_with_recursion() {
    for seed in 0..100 {
        let g = random_game(seed, 2, 2 + (seed as usize % 2));
        for a in 0..g.robot_actions(0) {
            let pairs = [
                (q_nl(&g, a).unwrap(), PlannerKind::NoLeader),
                (q_rl(&g, a).unwrap(), PlannerKind::RobotLeader),
                (q_hl(&g, a).unwrap(), PlannerKind::HumanLeader),
                (q_cl(&g, a).unwrap(), PlannerKind::CoLeader),
            ];
            for (direct, kind) in pairs {
                let rec = q_tstep(&g, kind, a).unwrap();
                assert!((direct - rec).abs() < TOL, "seed {seed} {kind:?}: {direct} vs {rec}");
            }
        }
    }
}

#[test]
fn open_loop_matches_brute_force_oracle() {
    for seed in 0..30 {
        let g = random_game(seed, 3, 2);
        for a in 0..2 {
            let nl = q_tstep(&g, PlannerKind::NoLeader, a).unwrap();
            let rl = q_tstep(&g, PlannerKind::RobotLeader, a).unwrap();
            assert!((nl - oracle_open_loop(&g, false, a)).abs() < 1e-10, "seed {seed}");
            assert!((rl - oracle_open_loop(&g, true, a)).abs() < 1e-10, "seed {seed}");
        }
    }
}

#[test]
fn orange_rows_are_distributions() {
    for seed in 0..20 {
        let g = random_game(seed, 4, 2);
        let o = orange_conditional(&g).unwrap();
        for layer in &o.rows {
            for row in layer {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn robot_prior_moves_the_orange_operator() {
    let g = game_probe().with_robot_prior(vec![vec![0.2, 0.8], vec![0.5, 0.5]]).unwrap();
    let o = orange_conditional(&g).unwrap();
    assert!((o.row(&[0])[0] - 0.8).abs() < TOL);
    assert!(game_probe().with_robot_prior(vec![vec![1.0]]).is_err());
}

#[test]
fn two_step_forms_reject_other_horizons() {
    let g = random_game(3, 3, 2);
    assert_eq!(q_nl(&g, 0), Err(ValueError::NotTwoStep(3)));
    assert!(matches!(q_tstep(&g, PlannerKind::CoLeader, 5), Err(ValueError::Action { .. })));
}

#[test]
fn guard_rejects_large_games() {
    let g = random_game(1, 6, 2);
    assert!(matches!(value_report(&g), Err(ValueError::Guard { .. })));
    let g = random_game(1, 2, 4);
    assert!(matches!(q_tstep(&g, PlannerKind::NoLeader, 0), Err(ValueError::Guard { .. })));
}

#[test]
fn constructor_validates() {
    assert!(FiniteGame::new(vec![1], vec![2], vec![0.5, 0.6], vec![], vec![0.0, 0.0]).is_err());
    assert!(FiniteGame::new(vec![1, 1], vec![1], vec![1.0], vec![], vec![0.0]).is_err());
    assert!(FiniteGame::new(vec![1], vec![1], vec![1.0], vec![], vec![f64::NAN]).is_err());
    assert!(FiniteGame::new(vec![1], vec![1], vec![1.0], vec![], vec![2.0]).is_ok());
}

#[test]
fn orderings_hold_on_random_games() {
    for seed in 0..200 {
        let horizon = 2 + (seed as usize % 3);
        let g = random_game(seed, horizon, 2);
        let r = check_orderings(&g).unwrap();
        assert_eq!(r.violations(TOL), 0, "seed {seed}: {:?}", r.checks);
    }
}

#[test]
fn degenerate_human_collapses_all_values() {
    for seed in 0..40 {
        let mut rng = RngStream::new(seed);
        let g = FiniteGame::random(&mut rng, vec![2, 3, 2], vec![1, 1, 1]).unwrap();
        let r = value_report(&g).unwrap();
        for kind in PlannerKind::ALL {
            assert!((r.v_of(kind) - r.v[0]).abs() < TOL);
        }
        assert!((r.true_value_hl - r.v[0]).abs() < TOL);
    }
}

#[test]
fn zero_returns_give_zero_values() {
    let g = random_game(9, 3, 3).map_returns(|_| 0.0);
    let r = check_orderings(&g).unwrap();
    assert!(r.report.v.iter().all(|&v| v == 0.0));
    assert!(r.checks.iter().all(|c| c.margin == 0.0));
}

#[test]
fn single_robot_action_value_is_its_q() {
    let g = FiniteGame::random(&mut RngStream::new(4), vec![1, 2], vec![2, 2]).unwrap();
    for kind in PlannerKind::ALL {
        let (value, a) = v(kind, &g).unwrap();
        assert_eq!(a, 0);
        assert_eq!(value, q_tstep(&g, kind, 0).unwrap());
    }
}

#[test]
fn green_without_robot_dependence_equals_orange() {
    // A human that ignores the robot: each row depends only on the human history.
    for seed in 0..40 {
        let g = random_game(seed, 3, 2);
        let mut flat = g.clone();
        for t in 1..3 {
            for idx in 0..flat.green[t - 1].len() {
                flat.green[t - 1][idx] = g.green[t - 1][human_only_index(&g, t, idx)].clone();
            }
        }
        let r = value_report(&flat).unwrap();
        assert!((r.true_value_hl - r.v_of(PlannerKind::CoLeader)).abs() < 1e-12);
        let q = &r.q;
        for a in 0..2 {
            assert!((q[0][a] - q[1][a]).abs() < 1e-12, "seed {seed}");
            assert!((q[2][a] - q[3][a]).abs() < 1e-12, "seed {seed}");
        }
    }
}

/// Joint prefix index with the same human actions as `idx` and every robot
/// action set to zero.
fn human_only_index(g: &FiniteGame, t: usize, idx: usize) -> usize {
    let mut h = vec![0; t];
    let mut rest = idx;
    for s in (0..t).rev() {
        h[s] = rest % g.human_actions(s);
        rest /= g.human_actions(s);
        rest /= g.robot_actions(s);
    }
    g.joint_index(&vec![0; t], &h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn positive_scaling_keeps_the_argmax(seed in 0u64..10_000, scale in 0.01f64..100.0, horizon in 2usize..4) {
        let g = random_game(seed, horizon, 2);
        let s = g.map_returns(|r| scale * r);
        let a = value_report(&g).unwrap();
        let b = value_report(&s).unwrap();
        prop_assert_eq!(a.argmax, b.argmax);
        for k in 0..4 {
            prop_assert!((b.v[k] - scale * a.v[k]).abs() < 1e-9 * scale.max(1.0));
        }
    }

    #[test]
    fn orderings_hold_with_random_priors(seed in 0u64..10_000, w in 0.05f64..0.95) {
        let g = random_game(seed, 3, 2).with_robot_prior(vec![vec![w, 1.0 - w]; 3]).unwrap();
        prop_assert_eq!(check_orderings(&g).unwrap().violations(TOL), 0);
    }
}
