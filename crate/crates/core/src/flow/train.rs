use alloc::vec;
use alloc::vec::Vec;

use super::{joint_sequence, FlowError, FlowModel, Normalizer, LOG_SIGMA_MAX, LOG_SIGMA_MIN};
use crate::diffkit::{Adam, Matrix, Tape};
use crate::domain::{EpisodeRecord, RngStream};
use crate::math;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Records per minibatch.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Share of episode seeds held out for validation.
    pub val_fraction: f64,
    pub max_grad_norm: Option<f64>,
    /// Restore the parameters with the lowest validation NLL at the end.
    pub keep_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
            val_fraction: 0.15,
            max_grad_norm: Some(100.0),
            keep_best: true,
        }
    }
}

/// Mean negative log-likelihood per record. Epoch 0 is the untrained model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_nll: f64,
    pub val_nll: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub curve: Vec<EpochStats>,
    pub train_records: usize,
    pub val_records: usize,
    pub best_epoch: usize,
}

/// Teacher-forced rows for one agent: record `r`, step `t` is row `r * T + t`.
struct AgentRows {
    input: Matrix,
    prev: Matrix,
    target: Matrix,
}

fn check_records(model: &FlowModel, records: &[EpisodeRecord]) -> Result<(), FlowError> {
    if records.is_empty() {
        return Err(FlowError::EmptyDataset);
    }
    let h = model.hyper();
    for r in records {
        if r.future.len() != h.horizon || r.future.agents() != h.agents || r.observation.context().len() != h.context_dim {
            return Err(FlowError::Shape(alloc::format!(
                "record seed {} does not match the model (T={}, A={}, C={})",
                r.seed, h.horizon, h.agents, h.context_dim
            )));
        }
        if !r.is_finite() {
            return Err(FlowError::NonFinite("dataset record"));
        }
    }
    Ok(())
}

fn build_rows(model: &FlowModel, records: &[&EpisodeRecord]) -> Vec<AgentRows> {
    let h = model.hyper();
    let (tt, d) = (h.horizon, h.input_width());
    let n = records.len() * tt;
    let mut rows: Vec<AgentRows> = (0..h.agents)
        .map(|_| AgentRows { input: Matrix::zeros(n, d), prev: Matrix::zeros(n, 2), target: Matrix::zeros(n, 2) })
        .collect();
    for (ri, rec) in records.iter().enumerate() {
        let obs = &rec.observation;
        let seq = joint_sequence(obs, rec.future.steps());
        let hp = obs.past().len();
        for t in 0..tt {
            let window = model.window_of(&seq[..hp + t]);
            let row = ri * tt + t;
            for (a, ar) in rows.iter_mut().enumerate() {
                model.features_into(a, &window, obs.anchor(), obs.context(), ar.input.row_mut(row));
                let p = seq[hp + t - 1][a];
                let x = seq[hp + t][a];
                ar.prev.row_mut(row).copy_from_slice(&[p.x, p.y]);
                ar.target.row_mut(row).copy_from_slice(&[x.x, x.y]);
            }
        }
    }
    rows
}

/// Mean NLL per record without building a graph.
fn evaluate(model: &FlowModel, rows: &[AgentRows], n_records: usize) -> f64 {
    let mut total = 0.0;
    for (a, ar) in rows.iter().enumerate() {
        let raw = model.conditioners[a].forward(&ar.input);
        for i in 0..raw.rows() {
            let p = ar.prev.row(i);
            let phi = model.head(a, crate::domain::Position::new(p[0], p[1]), raw.row(i));
            let x = ar.target.row(i);
            let s = phi.sigma();
            let u = [(x[0] - phi.mu.x) / s[0], (x[1] - phi.mu.y) / s[1]];
            total += -0.5 * (u[0] * u[0] + u[1] * u[1]) - phi.log_sigma[0] - phi.log_sigma[1] - math::LN_2PI;
        }
    }
    -total / n_records as f64
}

fn gather(m: &Matrix, rows: &[usize]) -> Matrix {
    let c = m.cols();
    let mut data = Vec::with_capacity(rows.len() * c);
    for &r in rows {
        data.extend_from_slice(m.row(r));
    }
    Matrix::from_vec(rows.len(), c, data)
}

impl FlowModel {
    /// Sets input standardization and displacement scales from `records`.
    pub fn fit_normalization(&mut self, records: &[EpisodeRecord]) -> Result<(), FlowError> {
        check_records(self, records)?;
        let d = self.hyper.input_width();
        for a in 0..self.hyper.agents {
            self.normalizers[a] = Normalizer::identity(d);
        }
        let refs: Vec<&EpisodeRecord> = records.iter().collect();
        let rows = build_rows(self, &refs);
        for (a, ar) in rows.iter().enumerate() {
            let (shift, scale) = column_stats(&ar.input, 1e-6);
            let disp = ar.target.zip_map(&ar.prev, |x, p| x - p);
            let (_, dscale) = column_stats(&disp, 1e-2);
            self.normalizers[a] = Normalizer { input_shift: shift, input_scale: scale, displacement_scale: [dscale[0], dscale[1]] };
        }
        Ok(())
    }

    /// Mean negative log-likelihood per record.
    pub fn mean_nll(&self, records: &[EpisodeRecord]) -> Result<f64, FlowError> {
        check_records(self, records)?;
        let refs: Vec<&EpisodeRecord> = records.iter().collect();
        let rows = build_rows(self, &refs);
        Ok(evaluate(self, &rows, records.len()))
    }

    /// Mean NLL over `records` and its gradient with respect to
    /// [`FlowModel::params_flat`].
    pub fn nll_and_grad(&self, records: &[EpisodeRecord]) -> Result<(f64, Vec<f64>), FlowError> {
        check_records(self, records)?;
        let refs: Vec<&EpisodeRecord> = records.iter().collect();
        let rows = build_rows(self, &refs);
        let all: Vec<usize> = (0..rows[0].input.rows()).collect();
        batch_nll_grad(self, &rows, &all, records.len())
    }
}

/// Column means and standard deviations (floored at `floor`, replaced by 1
/// for constant columns).
fn column_stats(m: &Matrix, floor: f64) -> (Vec<f64>, Vec<f64>) {
    let (n, c) = m.shape();
    let mut mean = vec![0.0; c];
    for r in 0..n {
        for (s, v) in mean.iter_mut().zip(m.row(r)) {
            *s += v;
        }
    }
    mean.iter_mut().for_each(|s| *s /= n.max(1) as f64);
    let mut var = vec![0.0; c];
    for r in 0..n {
        for ((s, v), mu) in var.iter_mut().zip(m.row(r)).zip(&mean) {
            *s += (v - mu) * (v - mu);
        }
    }
    let sd = var
        .iter()
        .map(|v| {
            let s = math::sqrt(v / n.max(1) as f64);
            if s < 1e-9 {
                1.0
            } else {
                s.max(floor)
            }
        })
        .collect();
    (mean, sd)
}

fn batch_nll_grad(model: &FlowModel, rows: &[AgentRows], sel: &[usize], n_records: usize) -> Result<(f64, Vec<f64>), FlowError> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let mut total = None;
    for (a, ar) in rows.iter().enumerate() {
        let x = tape.constant(gather(&ar.input, sel));
        let prev = tape.constant(gather(&ar.prev, sel));
        let target = tape.constant(gather(&ar.target, sel));
        let raw = bound.nets[a].forward(&mut tape, x)?;
        let disp = tape.slice_cols(raw, 0, 2)?;
        let ds = model.normalizers[a].displacement_scale;
        let ds = tape.constant(Matrix::row_vector(ds.to_vec()));
        let disp = tape.mul_row(disp, ds)?;
        let mu = tape.add(prev, disp)?;
        let ls = tape.slice_cols(raw, 2, 2)?;
        let ls = tape.clamp(ls, LOG_SIGMA_MIN, LOG_SIGMA_MAX);
        let lp = tape.gaussian_logpdf(target, mu, ls)?;
        let s = tape.sum(lp);
        total = Some(match total {
            None => s,
            Some(acc) => tape.add(acc, s)?,
        });
    }
    let nll = tape.scale(total.expect("at least one agent"), -1.0 / n_records as f64);
    let value = tape.value(nll).item();
    if !value.is_finite() {
        return Err(FlowError::NonFinite("nll"));
    }
    tape.backward(nll)?;
    let mut grad = Vec::with_capacity(model.num_params());
    for net in &bound.nets {
        net.flat_grad(&tape, &mut grad);
    }
    Ok((value, grad))
}

fn split_unit(seed: u64, salt: u64) -> f64 {
    RngStream::new(seed ^ salt.rotate_left(17)).fork("split").uniform()
}

/// Maximum-likelihood training with Adam. Records are split into training
/// and validation by hashing their episode seed, so all windows of one
/// episode land on the same side.
pub fn train(model: &mut FlowModel, records: &[EpisodeRecord], config: &TrainConfig) -> Result<TrainReport, FlowError> {
    check_records(model, records)?;
    let mut train_set: Vec<&EpisodeRecord> = Vec::new();
    let mut val_set: Vec<&EpisodeRecord> = Vec::new();
    for r in records {
        if split_unit(r.seed, config.seed) < config.val_fraction {
            val_set.push(r);
        } else {
            train_set.push(r);
        }
    }
    if train_set.is_empty() {
        core::mem::swap(&mut train_set, &mut val_set);
    }
    let tt = model.hyper.horizon;
    let train_rows = build_rows(model, &train_set);
    // With no held-out episodes the validation curve tracks the training set.
    let val_rows = if val_set.is_empty() { None } else { Some(build_rows(model, &val_set)) };
    let eval_val = |m: &FlowModel| match &val_rows {
        Some(v) => evaluate(m, v, val_set.len()),
        None => evaluate(m, &train_rows, train_set.len()),
    };

    let mut curve = vec![EpochStats { epoch: 0, train_nll: evaluate(model, &train_rows, train_set.len()), val_nll: eval_val(model) }];
    let mut params = model.params_flat();
    let mut opt = Adam::new(params.len(), config.learning_rate);
    opt.max_grad_norm = config.max_grad_norm;
    let mut best = (curve[0].val_nll, 0usize, params.clone());
    let batch = config.batch_size.max(1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let root = RngStream::new(config.seed).fork("flow-train");

    for epoch in 1..=config.epochs {
        let mut rng = root.fork_index(epoch as u64);
        rng.shuffle(&mut order);
        let mut sum = 0.0;
        for chunk in order.chunks(batch) {
            let sel: Vec<usize> = chunk.iter().flat_map(|&r| (r * tt)..(r * tt + tt)).collect();
            let (nll, grad) = batch_nll_grad(model, &train_rows, &sel, chunk.len())
                .map_err(|_| FlowError::Diverged { epoch, what: "training nll" })?;
            sum += nll * chunk.len() as f64;
            opt.step(&mut params, &grad);
            if params.iter().any(|p| !p.is_finite()) {
                return Err(FlowError::Diverged { epoch, what: "parameters" });
            }
            model.set_params_flat(&params);
        }
        let stats = EpochStats { epoch, train_nll: sum / train_set.len() as f64, val_nll: eval_val(model) };
        if !stats.val_nll.is_finite() {
            return Err(FlowError::Diverged { epoch, what: "validation nll" });
        }
        if stats.val_nll < best.0 {
            best = (stats.val_nll, epoch, params.clone());
        }
        curve.push(stats);
    }
    if config.keep_best {
        model.set_params_flat(&best.2);
    }
    Ok(TrainReport { curve, train_records: train_set.len(), val_records: val_set.len(), best_epoch: if config.keep_best { best.1 } else { config.epochs } })
}
