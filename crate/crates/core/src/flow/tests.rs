use alloc::vec;
use alloc::vec::Vec;

use super::*;
use crate::diffkit::Tape;
use crate::domain::{EpisodeRecord, Intention, JointState, JointTrajectory, ScenarioId};

fn hyper(t: usize) -> FlowHyper {
    let mut h = FlowHyper::new(4, t, 2, 8);
    h.hidden = vec![16, 16];
    h
}

fn random_observation(rng: &mut RngStream) -> Observation {
    let mut past = Vec::new();
    let (mut r, mut h) = (Position::new(rng.uniform_range(-5.0, 5.0), -10.0), Position::new(-1.75, 20.0));
    let (vr, vh) = (Position::new(0.0, rng.uniform_range(1.0, 3.0)), Position::new(0.0, -rng.uniform_range(2.0, 4.0)));
    for _ in 0..4 {
        past.push(JointState::new(vec![r, h]).unwrap());
        r = r + vr;
        h = h + vh;
    }
    let ctx = vec![1.0, 0.0, 0.0, rng.uniform_range(-2.0, 2.0), rng.uniform_range(-2.0, 2.0), 3.0, 3.5, 0.0];
    Observation::new(past, ctx).unwrap()
}

fn random_model(seed: u64, t: usize) -> FlowModel {
    let mut rng = RngStream::new(seed);
    let mut m = FlowModel::new(hyper(t), &mut rng);
    // Nonzero biases everywhere so the output layer is not trivially small.
    let mut p = m.params_flat();
    for v in p.iter_mut() {
        *v += 0.05 * rng.normal();
    }
    m.set_params_flat(&p);
    m
}

fn random_trajectory(rng: &mut RngStream, obs: &Observation, t: usize) -> JointTrajectory {
    let mut cur = obs.current().positions().to_vec();
    let mut steps = Vec::new();
    for _ in 0..t {
        for p in cur.iter_mut() {
            *p = *p + Position::new(rng.normal(), rng.normal());
        }
        steps.push(JointState::new(cur.clone()).unwrap());
    }
    JointTrajectory::new(steps).unwrap()
}

#[test]
fn zero_output_layer_is_a_stay_prior() {
    let mut rng = RngStream::new(1);
    let m = FlowModel::zeroed(hyper(3), &mut rng);
    let obs = random_observation(&mut rng);
    for a in 0..2 {
        let phi = m.conditioner(a, &obs, &[]).unwrap();
        assert_eq!(phi.mu, obs.current().agent(a));
        assert_eq!(phi.log_sigma, [0.0, 0.0]);
    }
}

#[test]
fn conditioner_is_deterministic() {
    let m = random_model(2, 3);
    let obs = random_observation(&mut RngStream::new(3));
    assert_eq!(m.conditioner(1, &obs, &[]).unwrap(), m.conditioner(1, &obs, &[]).unwrap());
}

#[test]
fn transform_examples_and_round_trip() {
    let phi = ConditionerOutput { mu: Position::new(1.0, 2.0), log_sigma: [0.0, 0.0] };
    assert_eq!(transform(&phi, [0.0, 0.0]), Position::new(1.0, 2.0));
    let phi = ConditionerOutput { mu: Position::ORIGIN, log_sigma: [math::ln(2.0), math::ln(3.0)] };
    let x = transform(&phi, [1.0, -1.0]);
    assert!((x.x - 2.0).abs() < 1e-15 && (x.y + 3.0).abs() < 1e-15);
    let mut rng = RngStream::new(4);
    for _ in 0..100 {
        let phi = ConditionerOutput {
            mu: Position::new(rng.normal() * 10.0, rng.normal() * 10.0),
            log_sigma: [rng.uniform_range(-4.0, 2.0), rng.uniform_range(-4.0, 2.0)],
        };
        let x = Position::new(rng.normal() * 10.0, rng.normal() * 10.0);
        let back = transform(&phi, inverse_transform(&phi, x));
        assert!(back.distance(&x) < 1e-12);
    }
}

#[test]
fn zero_model_zero_noise_stays_put() {
    let mut rng = RngStream::new(5);
    let m = FlowModel::zeroed(hyper(5), &mut rng);
    let obs = random_observation(&mut rng);
    let zr = vec![[0.0, 0.0]; 5];
    let z = ZSequence::zeros(5, 2);
    let traj = m.rollout(&obs, &z).unwrap();
    for s in traj.steps() {
        assert_eq!(s, obs.current());
    }
    let (_, zs) = m.sample_joint(&obs, &mut rng, Some(&zr)).unwrap();
    assert_eq!(zs.agent(0), zr);
}

#[test]
fn sampling_is_reproducible_and_z_replays() {
    let m = random_model(6, 4);
    let obs = random_observation(&mut RngStream::new(7));
    let (a, za) = m.sample_joint(&obs, &mut RngStream::new(9), None).unwrap();
    let (b, _) = m.sample_joint(&obs, &mut RngStream::new(9), None).unwrap();
    assert_eq!(a, b);
    assert_eq!(m.rollout(&obs, &za).unwrap(), a);
    let back = m.infer_z(&a, &obs).unwrap();
    for t in 0..4 {
        for ag in 0..2 {
            let (x, y) = (back.get(t, ag), za.get(t, ag));
            assert!((x[0] - y[0]).abs() < 1e-9 && (x[1] - y[1]).abs() < 1e-9);
        }
    }
}

#[test]
fn robot_reacts_to_humans_only_from_step_two() {
    let m = random_model(8, 4);
    let obs = random_observation(&mut RngStream::new(10));
    let zr = vec![[0.3, -0.2]; 4];
    let (a, _) = m.sample_joint(&obs, &mut RngStream::new(1), Some(&zr)).unwrap();
    let (b, _) = m.sample_joint(&obs, &mut RngStream::new(2), Some(&zr)).unwrap();
    assert_eq!(a.step(0).robot(), b.step(0).robot());
    assert_ne!(a.step(0).agent(1), b.step(0).agent(1));
    assert_ne!(a.step(1).robot(), b.step(1).robot());
}

#[test]
fn log_prob_at_the_mode() {
    let mut rng = RngStream::new(11);
    let m = FlowModel::zeroed(hyper(1), &mut rng);
    let obs = random_observation(&mut rng);
    let traj = JointTrajectory::new(vec![obs.current().clone()]).unwrap();
    let terms = m.log_prob_terms(&traj, &obs).unwrap();
    for t in &terms {
        assert!((t + 1.837_877_1).abs() < 1e-7);
    }

    // log sigma = ln 2 on both axes through the output bias.
    let mut m2 = m.clone();
    let mut p = m2.params_flat();
    let n = p.len() / 2;
    for agent in 0..2 {
        p[agent * n + n - 2] = math::ln(2.0);
        p[agent * n + n - 1] = math::ln(2.0);
    }
    m2.set_params_flat(&p);
    let terms = m2.log_prob_terms(&traj, &obs).unwrap();
    for t in &terms {
        assert!((t + 3.224_171_4).abs() < 1e-7, "{t}");
    }
}

#[test]
fn both_log_prob_forms_agree() {
    for seed in 0..20 {
        let m = random_model(seed, 5);
        let mut rng = RngStream::new(100 + seed);
        let obs = random_observation(&mut rng);
        let traj = random_trajectory(&mut rng, &obs, 5);
        let direct = m.log_prob(&traj, &obs).unwrap();
        let cov = m.log_prob_change_of_variables(&traj, &obs).unwrap();
        assert!((direct - cov).abs() < 1e-9, "{direct} vs {cov}");
    }
}

#[test]
fn future_perturbations_leave_earlier_terms_unchanged() {
    let m = random_model(12, 6);
    let mut rng = RngStream::new(13);
    let obs = random_observation(&mut rng);
    let traj = random_trajectory(&mut rng, &obs, 6);
    let base = m.log_prob_terms(&traj, &obs).unwrap();
    for t in 0..6 {
        let mut steps = traj.steps().to_vec();
        for s in steps.iter_mut().skip(t + 1) {
            let shifted: Vec<Position> = s.positions().iter().map(|p| *p + Position::new(3.0, -2.0)).collect();
            *s = JointState::new(shifted).unwrap();
        }
        let perturbed = JointTrajectory::new(steps).unwrap();
        let terms = m.log_prob_terms(&perturbed, &obs).unwrap();
        assert_eq!(&terms[..(t + 1) * 2], &base[..(t + 1) * 2]);
    }
}

#[test]
fn base_noise_covariance_is_identity() {
    let mut rng = RngStream::new(14);
    let m = FlowModel::zeroed(hyper(1), &mut rng);
    let obs = random_observation(&mut rng);
    let n = 10_000;
    let mut sums = [[0.0; 4]; 4];
    let mut mean = [0.0; 4];
    let mut draws = Vec::with_capacity(n);
    for _ in 0..n {
        let (_, z) = m.sample_joint(&obs, &mut rng, None).unwrap();
        let v = [z.get(0, 0)[0], z.get(0, 0)[1], z.get(0, 1)[0], z.get(0, 1)[1]];
        for i in 0..4 {
            mean[i] += v[i] / n as f64;
        }
        draws.push(v);
    }
    for v in &draws {
        for i in 0..4 {
            for j in 0..4 {
                sums[i][j] += (v[i] - mean[i]) * (v[j] - mean[j]) / n as f64;
            }
        }
    }
    for i in 0..4 {
        for j in 0..4 {
            let target = if i == j { 1.0 } else { 0.0 };
            assert!((sums[i][j] - target).abs() < 0.05, "cov[{i}][{j}] = {}", sums[i][j]);
        }
    }
}

#[test]
fn tape_rollout_matches_plain_rollout() {
    let m = random_model(15, 4);
    let mut rng = RngStream::new(16);
    let obs = random_observation(&mut rng);
    let zs: Vec<ZSequence> = (0..3).map(|_| ZSequence::sample(4, 2, &mut rng)).collect();
    let (trajs, logps) = m.rollout_batch(&obs, &zs).unwrap();
    let mut tape = Tape::new();
    let bound = m.bind(&mut tape, false);
    let grid: Vec<Vec<crate::diffkit::Var>> = (0..4)
        .map(|t| {
            (0..2)
                .map(|a| {
                    let data: Vec<f64> = zs.iter().flat_map(|z| z.get(t, a)).collect();
                    tape.constant(crate::diffkit::Matrix::from_vec(3, 2, data))
                })
                .collect()
        })
        .collect();
    let roll = m.rollout_tape(&mut tape, &bound, &obs, &grid).unwrap();
    for (b, traj) in trajs.iter().enumerate() {
        for t in 0..4 {
            for a in 0..2 {
                let v = tape.value(roll.positions[t][a]).row(b);
                let p = traj.step(t).agent(a);
                assert!((v[0] - p.x).abs() < 1e-12 && (v[1] - p.y).abs() < 1e-12);
            }
        }
        let lp = tape.value(roll.log_prob).get(b, 0);
        assert!((lp - logps[b]).abs() < 1e-9);
        assert!((lp - m.log_prob(traj, &obs).unwrap()).abs() < 1e-9);
    }
}

fn record(seed: u64, obs: Observation, future: JointTrajectory) -> EpisodeRecord {
    EpisodeRecord { observation: obs, future, scenario_id: ScenarioId::LeftTurn, human_intention: Intention::Yield, seed }
}

fn constant_velocity_records(n: usize, t: usize, seed: u64) -> Vec<EpisodeRecord> {
    let mut rng = RngStream::new(seed);
    (0..n)
        .map(|i| {
            let v = [Position::new(rng.uniform_range(-1.0, 1.0), rng.uniform_range(0.5, 2.0)), Position::new(rng.uniform_range(-2.0, 2.0), -1.0)];
            let start = [Position::new(rng.uniform_range(-5.0, 5.0), -8.0), Position::new(-2.0, rng.uniform_range(5.0, 15.0))];
            let at = |k: i64| JointState::new(vec![start[0] + v[0] * k as f64, start[1] + v[1] * k as f64]).unwrap();
            let past = (0..4).map(|k| at(k)).collect();
            let fut = (4..4 + t as i64).map(at).collect();
            let obs = Observation::new(past, vec![1.0, 0.0, 0.0, 0.0, 0.0, 3.0, 3.5, 0.0]).unwrap();
            record(i as u64, obs, JointTrajectory::new(fut).unwrap())
        })
        .collect()
}

#[test]
fn nll_gradient_matches_finite_differences() {
    let m = random_model(17, 3);
    let recs: Vec<EpisodeRecord> = constant_velocity_records(2, 3, 18);
    let (_, grad) = m.nll_and_grad(&recs).unwrap();
    let p = m.params_flat();
    let h = 1e-5;
    let mut probe = m.clone();
    let mut worst: f64 = 0.0;
    // Every 7th coordinate keeps the test fast while touching all layers.
    for i in (0..p.len()).step_by(7) {
        let mut q = p.clone();
        q[i] += h;
        probe.set_params_flat(&q);
        let fp = probe.mean_nll(&recs).unwrap();
        q[i] -= 2.0 * h;
        probe.set_params_flat(&q);
        let fm = probe.mean_nll(&recs).unwrap();
        let num = (fp - fm) / (2.0 * h);
        worst = worst.max((grad[i] - num).abs() / 1f64.max(grad[i].abs()));
    }
    assert!(worst < 1e-4, "{worst:e}");
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let mut m = random_model(19, 3);
    let recs = constant_velocity_records(8, 3, 20);
    let before = m.params_flat();
    let cfg = TrainConfig { epochs: 3, learning_rate: 0.0, batch_size: 4, ..TrainConfig::default() };
    let rep = train(&mut m, &recs, &cfg).unwrap();
    assert_eq!(m.params_flat(), before);
    let v0 = rep.curve[0].val_nll;
    assert!(rep.curve.iter().all(|e| (e.val_nll - v0).abs() < 1e-9));
}

#[test]
fn training_is_deterministic_and_rejects_empty_data() {
    let recs = constant_velocity_records(10, 3, 21);
    let cfg = TrainConfig { epochs: 2, batch_size: 4, ..TrainConfig::default() };
    let mut a = random_model(22, 3);
    let mut b = random_model(22, 3);
    let ra = train(&mut a, &recs, &cfg).unwrap();
    let rb = train(&mut b, &recs, &cfg).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(a, b);
    assert_eq!(train(&mut a, &[], &cfg), Err(FlowError::EmptyDataset));
}

#[test]
fn checkpoint_round_trip() {
    let mut m = random_model(23, 3);
    m.fit_normalization(&constant_velocity_records(5, 3, 24)).unwrap();
    let ck = m.to_checkpoint();
    assert_eq!(FlowModel::from_checkpoint(&ck).unwrap(), m);
    let mut bad = ck.clone();
    bad.arrays.retain(|a| a.name != "agent1.layer2.bias");
    assert!(FlowModel::from_checkpoint(&bad).is_err());
}

#[test]
fn constant_velocity_training_cuts_validation_nll() {
    let recs = constant_velocity_records(60, 3, 25);
    let mut m = FlowModel::new(hyper(3), &mut RngStream::new(26));
    m.fit_normalization(&recs).unwrap();
    let cfg = TrainConfig { epochs: 200, batch_size: 16, learning_rate: 3e-3, seed: 27, ..TrainConfig::default() };
    let rep = train(&mut m, &recs, &cfg).unwrap();
    let v0 = rep.curve[0].val_nll;
    let best = rep.curve.iter().map(|e| e.val_nll).fold(f64::INFINITY, f64::min);
    assert!(v0 - best >= 0.3 * v0.abs(), "epoch 0 {v0}, best {best}");
}

#[test]
fn single_record_overfits_monotonically_after_warmup() {
    let recs = constant_velocity_records(1, 2, 28);
    let mut m = FlowModel::new(hyper(2), &mut RngStream::new(29));
    m.fit_normalization(&recs).unwrap();
    let cfg = TrainConfig { epochs: 150, batch_size: 1, learning_rate: 1e-3, val_fraction: 0.0, seed: 30, ..TrainConfig::default() };
    let rep = train(&mut m, &recs, &cfg).unwrap();
    let nll: Vec<f64> = rep.curve.iter().map(|e| e.train_nll).collect();
    let warm = 20;
    let rises = nll[warm..].windows(2).filter(|w| w[1] > w[0] + 1e-9).count();
    assert!(nll[nll.len() - 1] < nll[0] - 5.0, "{} -> {}", nll[0], nll[nll.len() - 1]);
    assert_eq!(rises, 0, "{nll:?}");
}
