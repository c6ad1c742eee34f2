//! Every tape op against central differences on seeded random inputs.

use alloc::boxed::Box;
use alloc::vec::Vec;

use super::{grad_check, DiffError, Matrix, Tape, Var};
use crate::domain::RngStream;

type OpFn = Box<dyn Fn(&mut Tape, Var, &[Matrix]) -> Result<Var, DiffError>>;

fn rand_matrix(rng: &mut RngStream, r: usize, c: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_vec(r, c, (0..r * c).map(|_| rng.uniform_range(lo, hi)).collect())
}

/// Contract an op output with fixed random weights so every output entry
/// contributes to the scalar.
fn contract(t: &mut Tape, y: Var, w: &Matrix) -> Result<Var, DiffError> {
    let wv = t.constant(w.clone());
    let p = t.mul(y, wv)?;
    Ok(t.sum(p))
}

struct Case {
    name: &'static str,
    input: (usize, usize),
    range: (f64, f64),
    /// Shapes of extra constant operands.
    extras: Vec<(usize, usize)>,
    out: (usize, usize),
    f: OpFn,
}

fn cases() -> Vec<Case> {
    let mut v: Vec<Case> = Vec::new();
    let c = |name, input, range, extras, out, f: OpFn| Case { name, input, range, extras, out, f };
    v.push(c("add", (3, 2), (-2.0, 2.0), alloc::vec![(3, 2)], (3, 2), Box::new(|t, x, e| {
        let k = t.constant(e[0].clone());
        t.add(x, k)
    })));
    v.push(c("sub", (3, 2), (-2.0, 2.0), alloc::vec![(3, 2)], (3, 2), Box::new(|t, x, e| {
        let k = t.constant(e[0].clone());
        t.sub(k, x)
    })));
    v.push(c("mul", (3, 2), (-2.0, 2.0), alloc::vec![(3, 2)], (3, 2), Box::new(|t, x, e| {
        let k = t.constant(e[0].clone());
        let y = t.mul(x, k)?;
        t.mul(y, x)
    })));
    v.push(c("add_row", (1, 3), (-2.0, 2.0), alloc::vec![(4, 3)], (4, 3), Box::new(|t, x, e| {
        let k = t.constant(e[0].clone());
        let y = t.add_row(k, x)?;
        Ok(t.square(y))
    })));
    v.push(c("mul_row", (1, 3), (-2.0, 2.0), alloc::vec![(4, 3)], (4, 3), Box::new(|t, x, e| {
        let k = t.constant(e[0].clone());
        let y = t.mul_row(k, x)?;
        Ok(t.square(y))
    })));
    v.push(c("mul_row_lhs", (4, 3), (-2.0, 2.0), alloc::vec![(1, 3)], (4, 3), Box::new(|t, x, e| {
        let k = t.constant(e[0].clone());
        t.mul_row(x, k)
    })));
    v.push(c("broadcast_rows", (1, 3), (-2.0, 2.0), alloc::vec![], (5, 3), Box::new(|t, x, _| {
        let y = t.broadcast_rows(x, 5)?;
        Ok(t.square(y))
    })));
    v.push(c("matmul_lhs", (2, 3), (-2.0, 2.0), alloc::vec![(3, 4)], (2, 4), Box::new(|t, x, e| {
        let k = t.constant(e[0].clone());
        t.matmul(x, k)
    })));
    v.push(c("matmul_rhs", (3, 4), (-2.0, 2.0), alloc::vec![(2, 3)], (2, 4), Box::new(|t, x, e| {
        let k = t.constant(e[0].clone());
        t.matmul(k, x)
    })));
    v.push(c("matvec", (3, 1), (-2.0, 2.0), alloc::vec![(4, 3)], (4, 1), Box::new(|t, x, e| {
        let k = t.constant(e[0].clone());
        t.matmul(k, x)
    })));
    v.push(c("scale", (2, 2), (-2.0, 2.0), alloc::vec![], (2, 2), Box::new(|t, x, _| Ok(t.scale(x, -1.7)))));
    v.push(c("add_scalar", (2, 2), (-2.0, 2.0), alloc::vec![], (2, 2), Box::new(|t, x, _| {
        let y = t.add_scalar(x, 0.3);
        Ok(t.square(y))
    })));
    v.push(c("tanh", (2, 3), (-2.0, 2.0), alloc::vec![], (2, 3), Box::new(|t, x, _| Ok(t.tanh(x)))));
    v.push(c("exp", (2, 3), (-2.0, 2.0), alloc::vec![], (2, 3), Box::new(|t, x, _| Ok(t.exp(x)))));
    v.push(c("log", (2, 3), (0.2, 3.0), alloc::vec![], (2, 3), Box::new(|t, x, _| Ok(t.log(x)))));
    v.push(c("square", (2, 3), (-2.0, 2.0), alloc::vec![], (2, 3), Box::new(|t, x, _| Ok(t.square(x)))));
    v.push(c("sqrt", (2, 3), (0.2, 3.0), alloc::vec![], (2, 3), Box::new(|t, x, _| Ok(t.sqrt(x)))));
    v.push(c("abs", (2, 3), (0.1, 2.0), alloc::vec![], (2, 3), Box::new(|t, x, _| {
        let n = t.neg(x);
        Ok(t.abs(n))
    })));
    v.push(c("relu", (2, 3), (0.1, 2.0), alloc::vec![], (2, 3), Box::new(|t, x, _| Ok(t.relu(x)))));
    v.push(c("clamp", (2, 3), (-0.9, 0.9), alloc::vec![], (2, 3), Box::new(|t, x, _| Ok(t.clamp(x, -1.0, 1.0)))));
    v.push(c("sum", (3, 2), (-2.0, 2.0), alloc::vec![], (1, 1), Box::new(|t, x, _| {
        let s = t.square(x);
        Ok(t.sum(s))
    })));
    v.push(c("mean", (3, 2), (-2.0, 2.0), alloc::vec![], (1, 1), Box::new(|t, x, _| {
        let s = t.square(x);
        Ok(t.mean(s))
    })));
    v.push(c("sum_cols", (3, 4), (-2.0, 2.0), alloc::vec![], (3, 1), Box::new(|t, x, _| {
        let s = t.square(x);
        Ok(t.sum_cols(s))
    })));
    v.push(c("sum_rows", (3, 4), (-2.0, 2.0), alloc::vec![], (1, 4), Box::new(|t, x, _| {
        let s = t.square(x);
        Ok(t.sum_rows(s))
    })));
    v.push(c("concat_cols", (2, 3), (-2.0, 2.0), alloc::vec![(2, 2)], (2, 8), Box::new(|t, x, e| {
        let k = t.constant(e[0].clone());
        let s = t.square(x);
        t.concat_cols(&[x, k, s])
    })));
    v.push(c("slice_cols", (2, 5), (-2.0, 2.0), alloc::vec![], (2, 2), Box::new(|t, x, _| {
        let s = t.slice_cols(x, 1, 2)?;
        Ok(t.square(s))
    })));
    v.push(c("gaussian_logpdf_x", (2, 2), (-2.0, 2.0), alloc::vec![(2, 2), (2, 2)], (2, 2), Box::new(|t, x, e| {
        let mu = t.constant(e[0].clone());
        let ls = t.constant(e[1].clone());
        t.gaussian_logpdf(x, mu, ls)
    })));
    v.push(c("gaussian_logpdf_mu", (2, 2), (-2.0, 2.0), alloc::vec![(2, 2), (2, 2)], (2, 2), Box::new(|t, x, e| {
        let xv = t.constant(e[0].clone());
        let ls = t.constant(e[1].clone());
        t.gaussian_logpdf(xv, x, ls)
    })));
    v.push(c("gaussian_logpdf_log_sigma", (2, 2), (-1.5, 1.5), alloc::vec![(2, 2), (2, 2)], (2, 2), Box::new(|t, x, e| {
        let xv = t.constant(e[0].clone());
        let mu = t.constant(e[1].clone());
        t.gaussian_logpdf(xv, mu, x)
    })));
    v
}

/// Worst relative error of one op over the probe set.
#[derive(Debug, Clone, PartialEq)]
pub struct OpReport {
    pub name: &'static str,
    pub max_rel_error: f64,
}

/// Checks every tape op against central differences at `probes` seeded
/// random points (step `1e-5`). Inputs stay away from kinks.
pub fn op_gradient_suite(probes: u64) -> Result<Vec<OpReport>, DiffError> {
    let mut out = Vec::new();
    for case in cases() {
        let mut worst: f64 = 0.0;
        for seed in 0..probes {
            let mut rng = RngStream::new(seed).fork(case.name);
            let point = rand_matrix(&mut rng, case.input.0, case.input.1, case.range.0, case.range.1);
            let extras: Vec<Matrix> =
                case.extras.iter().map(|&(r, c)| rand_matrix(&mut rng, r, c, -2.0, 2.0)).collect();
            let w = rand_matrix(&mut rng, case.out.0, case.out.1, -1.0, 1.0);
            let f = &case.f;
            let report = grad_check(
                |t, x| {
                    let y = f(t, x, &extras)?;
                    contract(t, y, &w)
                },
                &point,
                1e-5,
            )?;
            worst = worst.max(report.max_rel_error);
        }
        out.push(OpReport { name: case.name, max_rel_error: worst });
    }
    Ok(out)
}
