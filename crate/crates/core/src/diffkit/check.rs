use alloc::vec::Vec;

use super::{DiffError, Matrix, Tape, Var};

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradCheck {
    /// `max_i |analytic_i - numeric_i| / max(1, |analytic_i|)`.
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// Coordinates where the one-sided differences disagree, i.e. the
    /// function looks non-differentiable at the probe point.
    pub kinks: Vec<usize>,
}

impl GradCheck {
    pub fn has_kink(&self) -> bool {
        !self.kinks.is_empty()
    }
}

fn eval<F>(f: &F, point: &Matrix) -> Result<f64, DiffError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, DiffError>,
{
    let mut t = Tape::new();
    let x = t.constant(point.clone());
    let y = f(&mut t, x)?;
    let v = t.value(y);
    if v.shape() != (1, 1) {
        return Err(DiffError::NonScalarRoot { shape: v.shape() });
    }
    let v = v.item();
    if !v.is_finite() {
        return Err(DiffError::NonFinite { op: "grad_check probe" });
    }
    Ok(v)
}

/// Checks `f` at `point`. `f` builds a scalar from the input node it is
/// handed; it is called once with a differentiable input and `2n + 1`
/// more times at shifted points.
pub fn grad_check<F>(f: F, point: &Matrix, step: f64) -> Result<GradCheck, DiffError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, DiffError>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone());
    let y = f(&mut tape, x)?;
    tape.backward(y)?;
    let analytic: Vec<f64> = match tape.grad(x) {
        Some(g) => g.as_slice().to_vec(),
        None => alloc::vec![0.0; point.len()],
    };
    let f0 = eval(&f, point)?;

    let mut numeric = Vec::with_capacity(point.len());
    let mut kinks = Vec::new();
    let mut probe = point.clone();
    for i in 0..point.len() {
        let orig = probe.as_slice()[i];
        probe.as_mut_slice()[i] = orig + step;
        let fp = eval(&f, &probe)?;
        probe.as_mut_slice()[i] = orig - step;
        let fm = eval(&f, &probe)?;
        probe.as_mut_slice()[i] = orig;
        let central = (fp - fm) / (2.0 * step);
        let fwd = (fp - f0) / step;
        let bwd = (f0 - fm) / step;
        if (fwd - bwd).abs() > 1e-2 * 1f64.max(fwd.abs()).max(bwd.abs()) {
            kinks.push(i);
        }
        numeric.push(central);
    }

    let mut max_rel_error = 0.0;
    let mut worst_index = 0;
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let e = (a - n).abs() / 1f64.max(a.abs());
        if e > max_rel_error {
            max_rel_error = e;
            worst_index = i;
        }
    }
    Ok(GradCheck { max_rel_error, worst_index, analytic, numeric, kinks })
}
