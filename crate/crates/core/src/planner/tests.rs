use alloc::vec;
use alloc::vec::Vec;

use super::*;
use crate::domain::{signed_distance, Aabb, Constraint, JointState, Position, Region};
use crate::flow::FlowHyper;
use crate::math;

fn hyper(t: usize) -> FlowHyper {
    let mut h = FlowHyper::new(4, t, 2, 8);
    h.hidden = vec![16, 16];
    h
}

fn observation(rng: &mut RngStream) -> Observation {
    let mut past = Vec::new();
    let (mut r, mut h) = (Position::new(1.75, -12.0), Position::new(-1.75, 15.0));
    let (vr, vh) = (Position::new(0.0, rng.uniform_range(0.5, 1.0)), Position::new(0.0, -rng.uniform_range(1.0, 2.0)));
    for _ in 0..4 {
        past.push(JointState::new(vec![r, h]).unwrap());
        r = r + vr;
        h = h + vh;
    }
    Observation::new(past, vec![1.0, 0.0, 0.0, 0.0, 0.0, 3.0, 3.5, 0.0]).unwrap()
}

fn random_model(seed: u64, t: usize) -> FlowModel {
    let mut rng = RngStream::new(seed);
    let mut m = FlowModel::new(hyper(t), &mut rng);
    let mut p = m.params_flat();
    for v in p.iter_mut() {
        *v += 0.05 * rng.normal();
    }
    m.set_params_flat(&p);
    m
}

fn small_config() -> PlanConfig {
    PlanConfig { mc_samples: 4, ascent_steps: 20, ..PlanConfig::default() }
}

#[test]
fn zero_model_rollout_is_stationary() {
    let mut rng = RngStream::new(1);
    let m = FlowModel::zeroed(hyper(3), &mut rng);
    let obs = observation(&mut rng);
    let tr = rollout(&m, &obs, &[[0.0; 2]; 3], &ZSequence::zeros(3, 2)).unwrap();
    assert!(tr.steps().iter().all(|s| s == obs.current()));
}

#[test]
fn rollout_matches_sample_joint() {
    let m = random_model(2, 4);
    let obs = observation(&mut RngStream::new(3));
    let zr = vec![[0.5, -0.5]; 4];
    let (traj, z) = m.sample_joint(&obs, &mut RngStream::new(4), Some(&zr)).unwrap();
    assert_eq!(rollout(&m, &obs, &zr, &z).unwrap(), traj);
}

#[test]
fn final_robot_x_gradient_matches_finite_differences() {
    let m = random_model(5, 4);
    let obs = observation(&mut RngStream::new(6));
    let zh = ZSequence::sample(4, 2, &mut RngStream::new(7));
    let zr: Vec<[f64; 2]> = (0..4).map(|t| [0.1 * t as f64, -0.2]).collect();
    let row = Matrix::row_vector(zr.iter().flat_map(|z| *z).collect());
    let report = crate::diffkit::grad_check(
        |tape, x| {
            let bound = m.bind(tape, false);
            let grid = noise_grid(tape, x, core::slice::from_ref(&zh), 4, 2).map_err(|_| DiffError::EmptyInput("grid"))?;
            let roll = m.rollout_tape(tape, &bound, &obs, &grid).map_err(|_| DiffError::EmptyInput("rollout"))?;
            let fx = tape.slice_cols(roll.positions[3][0], 0, 1)?;
            Ok(tape.sum(fx))
        },
        &row,
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{:e}", report.max_rel_error);
}

#[test]
fn objective_at_the_mode_is_three_standard_normals() {
    let mut rng = RngStream::new(8);
    let m = FlowModel::zeroed(hyper(1), &mut rng);
    let obs = observation(&mut rng);
    let goal = Goal::new(obs.current().robot());
    let zh = vec![ZSequence::zeros(1, 2)];
    let cfg = PlanConfig::default();
    let v = cfo_objective(&m, &obs, &goal, &[[0.0; 2]], &zh, &cfg).unwrap();
    assert!((v + 3.0 * math::LN_2PI).abs() < 1e-12);
    assert!((v + 5.513_631_3).abs() < 1e-6);
    let (tv, _) = cfo_objective_and_grad(&m, &obs, &goal, &[[0.0; 2]], &zh, &cfg).unwrap();
    assert!((tv - v).abs() < 1e-12);

    // A constraint satisfied with margin leaves the objective unchanged.
    let far = Region::Box { bounds: Aabb::new(Position::new(100.0, 100.0), Position::new(101.0, 101.0)), feasible_inside: false };
    let goal = goal.with_constraint(Constraint::Region(far)).with_constraint(Constraint::Separation { min_distance: 2.0 });
    assert_eq!(cfo_objective(&m, &obs, &goal, &[[0.0; 2]], &zh, &cfg).unwrap(), v);
}

#[test]
fn constraint_term_examples() {
    let traj = JointTrajectory::new(vec![
        JointState::new(vec![Position::new(1.0, 0.0), Position::new(10.0, 0.0)]).unwrap(),
        JointState::new(vec![Position::new(-1.0, 0.0), Position::new(10.0, 0.0)]).unwrap(),
    ])
    .unwrap();
    let half = Region::half_plane(Position::new(1.0, 0.0), -1.0);
    let ok = Goal::new(Position::ORIGIN).with_constraint(Constraint::Region(half));
    assert_eq!(constraint_term(&ok, &traj, 100.0), 0.0);
    let x_nonneg = Region::half_plane(Position::new(1.0, 0.0), 0.0);
    let bad = Goal::new(Position::ORIGIN).with_constraint(Constraint::Region(x_nonneg));
    assert_eq!(constraint_term(&bad, &traj, 100.0), -100.0);
}

#[test]
fn constraint_gradient_points_into_feasible_region() {
    let keep_out = Region::Box { bounds: Aabb::new(Position::new(-1.0, -1.0), Position::new(1.0, 1.0)), feasible_inside: false };
    let stay_in = Region::Box { bounds: Aabb::new(Position::new(-1.0, -1.0), Position::new(1.0, 1.0)), feasible_inside: true };
    let cases = [
        (keep_out, Position::new(0.6, 0.2)),
        (stay_in, Position::new(1.5, -1.4)),
        (Region::half_plane(Position::new(0.0, 1.0), 0.0), Position::new(0.3, -0.7)),
    ];
    for (region, p) in cases {
        let goal = Goal::new(Position::ORIGIN).with_constraint(Constraint::Region(region));
        let f = |q: Position| {
            let tr = JointTrajectory::new(vec![JointState::new(vec![q, Position::new(50.0, 50.0)]).unwrap()]).unwrap();
            constraint_term(&goal, &tr, 100.0)
        };
        let h = 1e-6;
        let g = Position::new(
            (f(p + Position::new(h, 0.0)) - f(p - Position::new(h, 0.0))) / (2.0 * h),
            (f(p + Position::new(0.0, h)) - f(p - Position::new(0.0, h))) / (2.0 * h),
        );
        // Ascending the term must reduce the signed distance.
        let step = p + g * (1e-4 / g.norm());
        assert!(signed_distance(&region, step) < signed_distance(&region, p), "{region:?}");

        // And the tape version agrees with the plain term.
        let mut tape = Tape::new();
        let pv = tape.leaf(Matrix::from_vec(1, 2, vec![p.x, p.y]));
        let sq = objective_region_sq(&mut tape, &region, pv);
        assert!((tape.value(sq).item() * -100.0 - f(p)).abs() < 1e-9);
    }
}

fn objective_region_sq(tape: &mut Tape, region: &Region, p: Var) -> Var {
    let goal = Goal::new(Position::ORIGIN).with_constraint(Constraint::Region(*region));
    let far = tape.constant(Matrix::from_vec(1, 2, vec![50.0, 50.0]));
    let lp = tape.constant(Matrix::zeros(1, 1));
    let roll = crate::flow::TapeRollout { positions: vec![vec![p, far]], log_prob: lp };
    let cfg = PlanConfig { goal_sigma: 1.0, constraint_weight: 1.0, ..PlanConfig::default() };
    let total = objective::per_sample_tape(tape, &roll, &goal, &cfg).unwrap();
    // Remove the destination term to isolate the penalty.
    let pv = tape.value(p).row(0).to_vec();
    let dest = -0.5 * (pv[0] * pv[0] + pv[1] * pv[1]) - math::LN_2PI;
    let t = tape.add_scalar(total, -dest);
    tape.scale(t, -1.0)
}

#[test]
fn cfo_gradient_matches_finite_differences() {
    let m = random_model(9, 4);
    let obs = observation(&mut RngStream::new(10));
    let goal = Goal::new(Position::new(-10.0, 2.0)).with_constraint(Constraint::Separation { min_distance: 30.0 });
    let cfg = small_config();
    let zh = draw_human_samples(&m, &cfg);
    let mut rng = RngStream::new(11);
    for _ in 0..10 {
        let zr: Vec<[f64; 2]> = (0..4).map(|_| [rng.normal(), rng.normal()]).collect();
        let (_, grad) = cfo_objective_and_grad(&m, &obs, &goal, &zr, &zh, &cfg).unwrap();
        let h = 1e-5;
        for i in 0..8 {
            let mut p = zr.clone();
            p[i / 2][i % 2] += h;
            let fp = cfo_objective(&m, &obs, &goal, &p, &zh, &cfg).unwrap();
            p[i / 2][i % 2] -= 2.0 * h;
            let fm = cfo_objective(&m, &obs, &goal, &p, &zh, &cfg).unwrap();
            let num = (fp - fm) / (2.0 * h);
            assert!((grad[i] - num).abs() / 1f64.max(grad[i].abs()) < 1e-4, "{} vs {num}", grad[i]);
        }
    }
}

#[test]
fn plan_cfo_is_deterministic_and_keeps_the_best_iterate() {
    let m = random_model(12, 3);
    let obs = observation(&mut RngStream::new(13));
    let goal = Goal::new(Position::new(-5.0, 0.0));
    let cfg = small_config();
    let a = plan_cfo(&m, &obs, &goal, &cfg).unwrap();
    let b = plan_cfo(&m, &obs, &goal, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.objective_history.len(), cfg.ascent_steps + 1);
    let max = a.objective_history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(a.objective, max);
    let again = cfo_objective(&m, &obs, &goal, &a.zr, &a.zh_samples, &cfg).unwrap();
    assert!((again - a.objective).abs() < 1e-9);
    assert!(a.objective >= a.objective_history[0]);
}

#[test]
fn plan_at_the_mode_stays_near_zero() {
    let mut rng = RngStream::new(14);
    let m = FlowModel::zeroed(hyper(3), &mut rng);
    let obs = observation(&mut rng);
    let goal = Goal::new(obs.current().robot());
    let plan = plan_cfo(&m, &obs, &goal, &small_config()).unwrap();
    let norm: f64 = plan.zr.iter().map(|z| z[0] * z[0] + z[1] * z[1]).sum::<f64>();
    assert!(math::sqrt(norm) < 0.1);
}

#[test]
fn joint_planning_optimum_and_superset_property() {
    let mut rng = RngStream::new(15);
    let m0 = FlowModel::zeroed(hyper(3), &mut rng);
    let obs = observation(&mut rng);
    let goal = Goal::new(obs.current().robot());
    let jp = plan_joint(&m0, &obs, &goal, &small_config()).unwrap();
    assert!(jp.z.agent(0).iter().chain(jp.z.agent(1).iter()).all(|z| z[0].abs() < 1e-9 && z[1].abs() < 1e-9));

    let m = random_model(16, 3);
    let goal = Goal::new(Position::new(-6.0, 3.0));
    let cfg = PlanConfig { ascent_steps: 60, ..small_config() };
    let jp = plan_joint(&m, &obs, &goal, &cfg).unwrap();
    let cp = plan_cfo(&m, &obs, &goal, &cfg).unwrap();
    let mut z = ZSequence::zeros(3, 2);
    z.set_agent(0, &cp.zr);
    let (at_cfo, _) = joint_objective_and_grad(&m, &obs, &goal, &z, &cfg).unwrap();
    assert!(jp.objective >= at_cfo - 1e-9, "{} < {at_cfo}", jp.objective);
}

#[test]
fn underconfident_selection() {
    let mut rng = RngStream::new(17);
    let m = FlowModel::zeroed(hyper(2), &mut rng);
    let obs = observation(&mut rng);
    let goal = Goal::new(Position::new(0.0, 0.0));
    let cfg = small_config();
    assert_eq!(plan_underconfident(&m, &obs, &goal, &[], &cfg), Err(PlanError::NoCandidates));
    let only = vec![vec![Position::new(100.0, 0.0); 2]];
    assert_eq!(plan_underconfident(&m, &obs, &goal, &only, &cfg).unwrap().index, 0);

    // Human sits still at its current position under the zero model with
    // sigma 1; the destination is on top of it.
    let h = obs.current().agent(1);
    let goal = Goal::new(h).with_constraint(Constraint::Separation { min_distance: 5.0 });
    let through = vec![h, h];
    let wait = vec![h + Position::new(6.0, 0.0), h + Position::new(6.0, 0.0)];
    let plan = plan_underconfident(&m, &obs, &goal, &[through, wait.clone()], &cfg).unwrap();
    assert_eq!(plan.index, 1);
    assert_eq!(plan.path, wait);
    // Ties go to the lowest index.
    let tie = plan_underconfident(&m, &obs, &goal, &[wait.clone(), wait], &cfg).unwrap();
    assert_eq!(tie.index, 0);
}

#[test]
fn sample_average_is_below_log_mean() {
    for seed in 0..10 {
        let m = random_model(100 + seed, 3);
        let obs = observation(&mut RngStream::new(seed));
        let goal = Goal::new(Position::new(-4.0, 1.0)).with_constraint(Constraint::Separation { min_distance: 3.0 });
        let cfg = PlanConfig { seed, ..small_config() };
        let zh = draw_human_samples(&m, &cfg);
        let zr = vec![[0.2, -0.1]; 3];
        let lb = lower_bound_gap(&m, &obs, &goal, &zr, &zh, &cfg).unwrap();
        assert!(lb.mean_of_log <= lb.log_of_mean + 1e-12);
    }
}

#[test]
fn invalid_config_is_rejected() {
    let m = random_model(18, 2);
    let obs = observation(&mut RngStream::new(19));
    let goal = Goal::new(Position::ORIGIN);
    let bad = PlanConfig { mc_samples: 0, ..PlanConfig::default() };
    assert!(matches!(plan_cfo(&m, &obs, &goal, &bad), Err(PlanError::Config(_))));
    let bad = PlanConfig { step_size: 0.0, ..PlanConfig::default() };
    assert!(matches!(plan_joint(&m, &obs, &goal, &bad), Err(PlanError::Config(_))));
}
