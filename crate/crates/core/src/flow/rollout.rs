use alloc::vec;
use alloc::vec::Vec;

use super::{joint_sequence, ConditionerOutput, FlowError, FlowModel, LOG_SIGMA_MAX, LOG_SIGMA_MIN};
use crate::diffkit::{Matrix, MlpVars, Tape, Var};
use crate::domain::{JointState, JointTrajectory, Observation, Position, RngStream};
use crate::math;

/// Base noise for every `(t, a)`: `T x A x 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZSequence {
    horizon: usize,
    agents: usize,
    data: Vec<[f64; 2]>,
}

impl ZSequence {
    pub fn zeros(horizon: usize, agents: usize) -> Self {
        ZSequence { horizon, agents, data: vec![[0.0; 2]; horizon * agents] }
    }

    /// Standard normal draws in `(t, a)` order.
    pub fn sample(horizon: usize, agents: usize, rng: &mut RngStream) -> Self {
        let data = (0..horizon * agents).map(|_| [rng.normal(), rng.normal()]).collect();
        ZSequence { horizon, agents, data }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn get(&self, t: usize, a: usize) -> [f64; 2] {
        self.data[t * self.agents + a]
    }

    pub fn set(&mut self, t: usize, a: usize, z: [f64; 2]) {
        self.data[t * self.agents + a] = z;
    }

    /// One agent's slice over time.
    pub fn agent(&self, a: usize) -> Vec<[f64; 2]> {
        (0..self.horizon).map(|t| self.get(t, a)).collect()
    }

    pub fn set_agent(&mut self, a: usize, zs: &[[f64; 2]]) {
        assert_eq!(zs.len(), self.horizon, "z slice length");
        for (t, z) in zs.iter().enumerate() {
            self.set(t, a, *z);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z[0].is_finite() && z[1].is_finite())
    }
}

/// Flow parameters placed on a tape.
pub struct BoundFlow {
    pub(crate) nets: Vec<MlpVars>,
    neg_shift: Vec<Var>,
    inv_scale: Vec<Var>,
    disp_scale: Vec<Var>,
}

/// Positions (`T x A`, each `B x 2`) and per-row log-density (`B x 1`) of a
/// batched rollout recorded on a tape.
pub struct TapeRollout {
    pub positions: Vec<Vec<Var>>,
    pub log_prob: Var,
}

impl FlowModel {
    fn check_z(&self, z: &ZSequence) -> Result<(), FlowError> {
        if z.horizon != self.hyper.horizon || z.agents != self.hyper.agents {
            return Err(FlowError::Shape(alloc::format!(
                "z is {}x{}, model expects {}x{}",
                z.horizon, z.agents, self.hyper.horizon, self.hyper.agents
            )));
        }
        if !z.is_finite() {
            return Err(FlowError::NonFinite("z"));
        }
        Ok(())
    }

    fn check_observation(&self, obs: &Observation) -> Result<(), FlowError> {
        if obs.agents() != self.hyper.agents || obs.context().len() != self.hyper.context_dim {
            return Err(FlowError::Shape(alloc::format!(
                "observation has {} agents and context {}, model expects {} and {}",
                obs.agents(),
                obs.context().len(),
                self.hyper.agents,
                self.hyper.context_dim
            )));
        }
        Ok(())
    }

    /// Draws human noise, takes robot noise from `override_zr` when given,
    /// and rolls the flow forward. Robot noise is drawn even when
    /// overridden so that human draws do not depend on the override.
    pub fn sample_joint(
        &self,
        observation: &Observation,
        rng: &mut RngStream,
        override_zr: Option<&[[f64; 2]]>,
    ) -> Result<(JointTrajectory, ZSequence), FlowError> {
        let mut z = ZSequence::sample(self.hyper.horizon, self.hyper.agents, rng);
        if let Some(zr) = override_zr {
            if zr.len() != self.hyper.horizon {
                return Err(FlowError::Shape(alloc::format!("robot z has {} steps, expected {}", zr.len(), self.hyper.horizon)));
            }
            z.set_agent(0, zr);
        }
        let traj = self.rollout(observation, &z)?;
        Ok((traj, z))
    }

    /// Deterministic image of `z` under the flow.
    pub fn rollout(&self, observation: &Observation, z: &ZSequence) -> Result<JointTrajectory, FlowError> {
        let (mut trajs, _) = self.rollout_batch(observation, core::slice::from_ref(z))?;
        Ok(trajs.pop().expect("one trajectory"))
    }

    /// Rolls out many noise sequences at once; also returns each
    /// trajectory's log-density.
    pub fn rollout_batch(&self, observation: &Observation, zs: &[ZSequence]) -> Result<(Vec<JointTrajectory>, Vec<f64>), FlowError> {
        self.check_observation(observation)?;
        for z in zs {
            self.check_z(z)?;
        }
        let (tt, na, d) = (self.hyper.horizon, self.hyper.agents, self.hyper.input_width());
        let b = zs.len();
        let base = joint_sequence(observation, &[]);
        let mut seqs: Vec<Vec<Vec<Position>>> = vec![base; b];
        let mut logp = vec![0.0; b];
        let anchor = observation.anchor();
        let ctx = observation.context();
        let mut input = Matrix::zeros(b, d);
        for t in 0..tt {
            let mut next: Vec<Vec<Position>> = vec![vec![Position::ORIGIN; na]; b];
            for a in 0..na {
                for (i, seq) in seqs.iter().enumerate() {
                    let window = self.window_of(seq);
                    self.features_into(a, &window, anchor, ctx, input.row_mut(i));
                }
                let out = self.conditioners[a].forward(&input);
                for (i, seq) in seqs.iter().enumerate() {
                    let prev = seq[seq.len() - 1][a];
                    let phi = self.head(a, prev, out.row(i));
                    let zi = zs[i].get(t, a);
                    next[i][a] = super::transform(&phi, zi);
                    logp[i] += -0.5 * (zi[0] * zi[0] + zi[1] * zi[1]) - math::LN_2PI - phi.log_sigma[0] - phi.log_sigma[1];
                }
            }
            for (seq, n) in seqs.iter_mut().zip(next) {
                seq.push(n);
            }
        }
        let hp = observation.past().len();
        let mut trajs = Vec::with_capacity(b);
        for seq in seqs {
            let steps: Vec<JointState> = seq[hp..].iter().map(|p| JointState::from_raw(p.clone())).collect();
            let traj = JointTrajectory::from_raw(steps);
            if !traj.is_finite() {
                return Err(FlowError::NonFinite("rollout"));
            }
            trajs.push(traj);
        }
        Ok((trajs, logp))
    }

    fn check_trajectory(&self, traj: &JointTrajectory, obs: &Observation) -> Result<(), FlowError> {
        self.check_observation(obs)?;
        if traj.len() != self.hyper.horizon || traj.agents() != self.hyper.agents {
            return Err(FlowError::Shape(alloc::format!(
                "trajectory is {}x{}, model expects {}x{}",
                traj.len(), traj.agents(), self.hyper.horizon, self.hyper.agents
            )));
        }
        if !traj.is_finite() {
            return Err(FlowError::NonFinite("trajectory"));
        }
        Ok(())
    }

    /// Affine parameters for every `(t, a)` of a given trajectory, `t`-major.
    pub fn conditioner_outputs(&self, traj: &JointTrajectory, obs: &Observation) -> Result<Vec<ConditionerOutput>, FlowError> {
        self.check_trajectory(traj, obs)?;
        let seq = joint_sequence(obs, traj.steps());
        let hp = obs.past().len();
        let (tt, na, d) = (self.hyper.horizon, self.hyper.agents, self.hyper.input_width());
        let mut out = Vec::with_capacity(tt * na);
        for a_major in 0..na {
            let mut input = Matrix::zeros(tt, d);
            for t in 0..tt {
                let window = self.window_of(&seq[..hp + t]);
                self.features_into(a_major, &window, obs.anchor(), obs.context(), input.row_mut(t));
            }
            let raw = self.conditioners[a_major].forward(&input);
            for t in 0..tt {
                let prev = seq[hp + t - 1][a_major];
                out.push((t, a_major, self.head(a_major, prev, raw.row(t))));
            }
        }
        out.sort_by_key(|&(t, a, _)| (t, a));
        Ok(out.into_iter().map(|(_, _, phi)| phi).collect())
    }

    /// `log N(x_t^a; mu_t^a, diag sigma^2)` for every `(t, a)`, `t`-major.
    pub fn log_prob_terms(&self, traj: &JointTrajectory, obs: &Observation) -> Result<Vec<f64>, FlowError> {
        let phis = self.conditioner_outputs(traj, obs)?;
        let na = self.hyper.agents;
        Ok(phis
            .iter()
            .enumerate()
            .map(|(k, phi)| {
                let x = traj.step(k / na).agent(k % na);
                let s = phi.sigma();
                let u = [(x.x - phi.mu.x) / s[0], (x.y - phi.mu.y) / s[1]];
                -0.5 * (u[0] * u[0] + u[1] * u[1]) - phi.log_sigma[0] - phi.log_sigma[1] - math::LN_2PI
            })
            .collect())
    }

    /// Exact log-density of a joint future given the observation.
    pub fn log_prob(&self, traj: &JointTrajectory, obs: &Observation) -> Result<f64, FlowError> {
        Ok(self.log_prob_terms(traj, obs)?.iter().sum())
    }

    /// Same density through the change of variables: recover `z` with the
    /// inverse transforms, then `sum log N(z; 0, I) - sum log sigma`.
    pub fn log_prob_change_of_variables(&self, traj: &JointTrajectory, obs: &Observation) -> Result<f64, FlowError> {
        let z = self.infer_z(traj, obs)?;
        let phis = self.conditioner_outputs(traj, obs)?;
        let na = self.hyper.agents;
        let mut base = 0.0;
        let mut log_det = 0.0;
        for (k, phi) in phis.iter().enumerate() {
            let zi = z.get(k / na, k % na);
            base += -0.5 * (zi[0] * zi[0] + zi[1] * zi[1]) - math::LN_2PI;
            log_det += phi.log_sigma[0] + phi.log_sigma[1];
        }
        Ok(base - log_det)
    }

    /// Base noise that reproduces `traj` exactly.
    pub fn infer_z(&self, traj: &JointTrajectory, obs: &Observation) -> Result<ZSequence, FlowError> {
        let phis = self.conditioner_outputs(traj, obs)?;
        let na = self.hyper.agents;
        let mut z = ZSequence::zeros(self.hyper.horizon, na);
        for (k, phi) in phis.iter().enumerate() {
            let (t, a) = (k / na, k % na);
            z.set(t, a, super::inverse_transform(phi, traj.step(t).agent(a)));
        }
        Ok(z)
    }

    /// Places the model on `tape`; `trainable` makes conditioner weights
    /// differentiable leaves.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundFlow {
        let mut nets = Vec::new();
        let (mut neg_shift, mut inv_scale, mut disp_scale) = (Vec::new(), Vec::new(), Vec::new());
        for (c, n) in self.conditioners.iter().zip(&self.normalizers) {
            nets.push(c.bind(tape, trainable));
            neg_shift.push(tape.constant(Matrix::row_vector(n.input_shift.iter().map(|v| -v).collect())));
            inv_scale.push(tape.constant(Matrix::row_vector(n.input_scale.iter().map(|v| 1.0 / v).collect())));
            disp_scale.push(tape.constant(Matrix::row_vector(n.displacement_scale.to_vec())));
        }
        BoundFlow { nets, neg_shift, inv_scale, disp_scale }
    }

    /// Batched differentiable rollout. `z[t][a]` is a `B x 2` node; the
    /// result's positions have the same layout.
    pub fn rollout_tape(
        &self,
        tape: &mut Tape,
        bound: &BoundFlow,
        obs: &Observation,
        z: &[Vec<Var>],
    ) -> Result<TapeRollout, FlowError> {
        self.check_observation(obs)?;
        let (tt, na) = (self.hyper.horizon, self.hyper.agents);
        if z.len() != tt || z.iter().any(|zt| zt.len() != na) {
            return Err(FlowError::Shape(alloc::format!("z grid must be {tt}x{na}")));
        }
        let b = tape.shape(z[0][0]).0;
        let broadcast = |tape: &mut Tape, p: Position| tape.constant(Matrix::from_vec(b, 2, [p.x, p.y].repeat(b)));
        let mut seq: Vec<Vec<Var>> = obs
            .past()
            .iter()
            .map(|s| s.positions().iter().map(|&p| broadcast(tape, p)).collect())
            .collect();
        let anchor = broadcast(tape, obs.anchor());
        let ctx = tape.constant(Matrix::from_vec(b, obs.context().len(), obs.context().repeat(b)));
        let mut positions = Vec::with_capacity(tt);
        let mut logp: Option<Var> = None;
        let k = self.hyper.window;
        for t in 0..tt {
            let n = seq.len();
            let window: Vec<&Vec<Var>> = (0..k).map(|i| &seq[n.saturating_sub(k - i)]).collect();
            let mut next = Vec::with_capacity(na);
            for a in 0..na {
                let cur = window[k - 1][a];
                let mut parts = Vec::with_capacity(na * k + 2);
                for state in &window {
                    for &p in state.iter() {
                        parts.push(tape.sub(p, cur)?);
                    }
                }
                parts.push(tape.sub(cur, anchor)?);
                parts.push(ctx);
                let input = tape.concat_cols(&parts)?;
                let input = tape.add_row(input, bound.neg_shift[a])?;
                let input = tape.mul_row(input, bound.inv_scale[a])?;
                let raw = bound.nets[a].forward(tape, input)?;
                let disp = tape.slice_cols(raw, 0, 2)?;
                let disp = tape.mul_row(disp, bound.disp_scale[a])?;
                let mu = tape.add(cur, disp)?;
                let ls = tape.slice_cols(raw, 2, 2)?;
                let ls = tape.clamp(ls, LOG_SIGMA_MIN, LOG_SIGMA_MAX);
                let sigma = tape.exp(ls);
                let zta = z[t][a];
                let scaled = tape.mul(sigma, zta)?;
                let x = tape.add(mu, scaled)?;
                // log N(z; 0, I) - sum log sigma, per row.
                let zz = tape.square(zta);
                let zz = tape.sum_cols(zz);
                let zz = tape.scale(zz, -0.5);
                let lsum = tape.sum_cols(ls);
                let term = tape.sub(zz, lsum)?;
                let term = tape.add_scalar(term, -math::LN_2PI);
                logp = Some(match logp {
                    None => term,
                    Some(acc) => tape.add(acc, term)?,
                });
                next.push(x);
            }
            positions.push(next.clone());
            seq.push(next);
        }
        Ok(TapeRollout { positions, log_prob: logp.expect("horizon >= 1") })
    }
}
