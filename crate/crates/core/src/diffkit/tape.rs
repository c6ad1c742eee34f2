use alloc::vec;
use alloc::vec::Vec;

use super::matrix::{matmul_into, Matrix};
use super::DiffError;
use crate::math;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    BroadcastRows(usize),
    MatMul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    Sqrt(usize),
    Abs(usize),
    Relu(usize),
    Clamp(usize, f64, f64),
    Sum(usize),
    SumCols(usize),
    SumRows(usize),
    ConcatCols(Vec<usize>),
    SliceCols(usize, usize),
    GaussianLogpdf(usize, usize, usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::BroadcastRows(..) => "broadcast_rows",
            Op::MatMul(..) => "matmul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Square(..) => "square",
            Op::Sqrt(..) => "sqrt",
            Op::Abs(..) => "abs",
            Op::Relu(..) => "relu",
            Op::Clamp(..) => "clamp",
            Op::Sum(..) => "sum",
            Op::SumCols(..) => "sum_cols",
            Op::SumRows(..) => "sum_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::GaussianLogpdf(..) => "gaussian_logpdf",
        }
    }
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Expression graph recorded in evaluation order.
///
/// Leaves created with [`Tape::leaf`] receive gradients; leaves created with
/// [`Tape::constant`] do not, and nothing is propagated into them.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Matrix>>,
    backward_done: bool,
    non_finite: Option<&'static str>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grads: Vec::new(), backward_done: false, non_finite: None }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        if self.non_finite.is_none() && !value.is_finite() {
            self.non_finite = Some(op.name());
        }
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn rg(&self, a: Var) -> bool {
        self.nodes[a.0].requires_grad
    }

    fn rg2(&self, a: Var, b: Var) -> bool {
        self.rg(a) || self.rg(b)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Matrix::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.node(v).value.shape()
    }

    /// Gradient of the last backward root with respect to `v`, if any
    /// reached it.
    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Name of the first op that produced a non-finite value.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.non_finite
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), DiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(DiffError::ShapeMismatch { op, left: sa, right: sb });
        }
        Ok(())
    }

    fn row_of(&self, op: &'static str, a: Var, row: Var) -> Result<(), DiffError> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr.0 != 1 || sr.1 != sa.1 {
            return Err(DiffError::ShapeMismatch { op, left: sa, right: sr });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg2(a, b);
        Ok(self.push(v, Op::Add(a.0, b.0), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg2(a, b);
        Ok(self.push(v, Op::Sub(a.0, b.0), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg2(a, b);
        Ok(self.push(v, Op::Mul(a.0, b.0), rg))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, DiffError> {
        self.row_of("add_row", a, row)?;
        let r = self.value(row).as_slice().to_vec();
        let mut v = self.value(a).clone();
        let cols = v.cols();
        for chunk in v.as_mut_slice().chunks_mut(cols.max(1)) {
            for (x, y) in chunk.iter_mut().zip(&r) {
                *x += y;
            }
        }
        let rg = self.rg2(a, row);
        Ok(self.push(v, Op::AddRow(a.0, row.0), rg))
    }

    /// Multiplies every row of `a` elementwise by a `1 x c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var, DiffError> {
        self.row_of("mul_row", a, row)?;
        let r = self.value(row).as_slice().to_vec();
        let mut v = self.value(a).clone();
        let cols = v.cols();
        for chunk in v.as_mut_slice().chunks_mut(cols.max(1)) {
            for (x, y) in chunk.iter_mut().zip(&r) {
                *x *= y;
            }
        }
        let rg = self.rg2(a, row);
        Ok(self.push(v, Op::MulRow(a.0, row.0), rg))
    }

    /// Repeats a `1 x c` row `n` times.
    pub fn broadcast_rows(&mut self, row: Var, n: usize) -> Result<Var, DiffError> {
        let s = self.shape(row);
        if s.0 != 1 {
            return Err(DiffError::ShapeMismatch { op: "broadcast_rows", left: s, right: (1, s.1) });
        }
        let r = self.value(row).as_slice();
        let mut data = Vec::with_capacity(n * s.1);
        for _ in 0..n {
            data.extend_from_slice(r);
        }
        let rg = self.rg(row);
        Ok(self.push(Matrix::from_vec(n, s.1, data), Op::BroadcastRows(row.0), rg))
    }

    /// Matrix product; a matrix-vector product is the `k x 1` case.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(DiffError::ShapeMismatch { op: "matmul", left: sa, right: sb });
        }
        let mut out = Matrix::zeros(sa.0, sb.1);
        matmul_into(self.value(a), self.value(b), &mut out);
        let rg = self.rg2(a, b);
        Ok(self.push(out, Op::MatMul(a.0, b.0), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        let rg = self.rg(a);
        self.push(v, Op::Scale(a.0, c), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        let rg = self.rg(a);
        self.push(v, Op::AddScalar(a.0), rg)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let v = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(v, op, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a.0), math::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a.0), math::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a.0), |x| if x > 0.0 { math::ln(x) } else if x == 0.0 { f64::NEG_INFINITY } else { f64::NAN })
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a.0), |x| x * x)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a.0), |x| if x >= 0.0 { math::sqrt(x) } else { f64::NAN })
    }

    /// `|x|`; the derivative at exactly 0 is taken as 1.
    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a.0), f64::abs)
    }

    /// `max(0, x)`; the derivative at exactly 0 is taken as 0.
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a.0), |x| x.max(0.0))
    }

    /// Clamps into `[lo, hi]`; zero gradient outside the open interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a.0, lo, hi), |x| x.clamp(lo, hi))
    }

    /// Sum of all entries, as a 1x1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Matrix::scalar(s), Op::Sum(a.0), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Per-row sums, `r x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let data: Vec<f64> = (0..m.rows()).map(|r| m.row(r).iter().sum()).collect();
        let rg = self.rg(a);
        self.push(Matrix::column_vector(data), Op::SumCols(a.0), rg)
    }

    /// Per-column sums, `1 x c`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut data = vec![0.0; m.cols()];
        for r in 0..m.rows() {
            for (d, x) in data.iter_mut().zip(m.row(r)) {
                *d += x;
            }
        }
        let rg = self.rg(a);
        self.push(Matrix::row_vector(data), Op::SumRows(a.0), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let first = *parts.first().ok_or(DiffError::EmptyInput("concat_cols"))?;
        let rows = self.shape(first).0;
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return Err(DiffError::ShapeMismatch { op: "concat_cols", left: self.shape(first), right: s });
            }
            cols += s.1;
        }
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let m = &self.nodes[p.0].value;
            let w = m.cols();
            for r in 0..rows {
                out.row_mut(r)[offset..offset + w].copy_from_slice(m.row(r));
            }
            offset += w;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatCols(parts.iter().map(|p| p.0).collect()), rg))
    }

    /// Columns `start..start + width` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var, DiffError> {
        let s = self.shape(a);
        if start + width > s.1 {
            return Err(DiffError::ShapeMismatch { op: "slice_cols", left: s, right: (s.0, start + width) });
        }
        let m = self.value(a);
        let mut out = Matrix::zeros(s.0, width);
        for r in 0..s.0 {
            out.row_mut(r).copy_from_slice(&m.row(r)[start..start + width]);
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::SliceCols(a.0, start), rg))
    }

    /// Elementwise `log N(x; mu, exp(log_sigma)^2)`.
    pub fn gaussian_logpdf(&mut self, x: Var, mu: Var, log_sigma: Var) -> Result<Var, DiffError> {
        self.same_shape("gaussian_logpdf", x, mu)?;
        self.same_shape("gaussian_logpdf", x, log_sigma)?;
        let (xv, mv, lv) = (self.value(x), self.value(mu), self.value(log_sigma));
        let data: Vec<f64> = xv
            .as_slice()
            .iter()
            .zip(mv.as_slice())
            .zip(lv.as_slice())
            .map(|((&xi, &mi), &li)| {
                let u = (xi - mi) * math::exp(-li);
                -0.5 * u * u - li - 0.5 * math::LN_2PI
            })
            .collect();
        let out = Matrix::from_vec(xv.rows(), xv.cols(), data);
        let rg = self.rg(x) || self.rg(mu) || self.rg(log_sigma);
        Ok(self.push(out, Op::GaussianLogpdf(x.0, mu.0, log_sigma.0), rg))
    }

    /// Clears all gradients so that another backward pass is allowed.
    pub fn zero_grad(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    /// Reverse pass from a 1x1 root.
    pub fn backward(&mut self, root: Var) -> Result<(), DiffError> {
        if self.backward_done {
            return Err(DiffError::BackwardWithoutReset);
        }
        let shape = self.shape(root);
        if shape != (1, 1) {
            return Err(DiffError::NonScalarRoot { shape });
        }
        if let Some(op) = self.non_finite {
            return Err(DiffError::NonFinite { op });
        }
        self.backward_done = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[root.0] = Some(Matrix::scalar(1.0));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = match self.grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, idx: usize, g: Matrix) {
        if !self.nodes[idx].requires_grad {
            return;
        }
        match &mut self.grads[idx] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, idx: usize) -> bool {
        self.nodes[idx].requires_grad
    }

    fn propagate(&mut self, i: usize, g: &Matrix) {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(a, g.clone());
                self.accumulate(b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(a, g.clone());
                if self.wants(b) {
                    self.accumulate(b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(a) {
                    let ga = g.zip_map(&self.nodes[b].value, |x, y| x * y);
                    self.accumulate(a, ga);
                }
                if self.wants(b) {
                    let gb = g.zip_map(&self.nodes[a].value, |x, y| x * y);
                    self.accumulate(b, gb);
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(a, g.clone());
                if self.wants(row) {
                    self.accumulate(row, column_sums(g));
                }
            }
            Op::MulRow(a, row) => {
                if self.wants(a) {
                    let r = self.nodes[row].value.as_slice().to_vec();
                    let mut ga = g.clone();
                    let cols = ga.cols().max(1);
                    for chunk in ga.as_mut_slice().chunks_mut(cols) {
                        for (x, y) in chunk.iter_mut().zip(&r) {
                            *x *= y;
                        }
                    }
                    self.accumulate(a, ga);
                }
                if self.wants(row) {
                    let prod = g.zip_map(&self.nodes[a].value, |x, y| x * y);
                    self.accumulate(row, column_sums(&prod));
                }
            }
            Op::BroadcastRows(row) => self.accumulate(row, column_sums(g)),
            Op::MatMul(a, b) => {
                if self.wants(a) {
                    let ga = g.matmul_nt(&self.nodes[b].value);
                    self.accumulate(a, ga);
                }
                if self.wants(b) {
                    let gb = self.nodes[a].value.matmul_tn(g);
                    self.accumulate(b, gb);
                }
            }
            Op::Scale(a, c) => self.accumulate(a, g.map(|x| x * c)),
            Op::AddScalar(a) => self.accumulate(a, g.clone()),
            Op::Tanh(a) => {
                let ga = g.zip_map(&self.nodes[i].value, |x, y| x * (1.0 - y * y));
                self.accumulate(a, ga);
            }
            Op::Exp(a) => {
                let ga = g.zip_map(&self.nodes[i].value, |x, y| x * y);
                self.accumulate(a, ga);
            }
            Op::Log(a) => {
                let ga = g.zip_map(&self.nodes[a].value, |x, y| x / y);
                self.accumulate(a, ga);
            }
            Op::Square(a) => {
                let ga = g.zip_map(&self.nodes[a].value, |x, y| 2.0 * x * y);
                self.accumulate(a, ga);
            }
            Op::Sqrt(a) => {
                let ga = g.zip_map(&self.nodes[i].value, |x, y| 0.5 * x / y);
                self.accumulate(a, ga);
            }
            Op::Abs(a) => {
                let ga = g.zip_map(&self.nodes[a].value, |x, y| if y < 0.0 { -x } else { x });
                self.accumulate(a, ga);
            }
            Op::Relu(a) => {
                let ga = g.zip_map(&self.nodes[a].value, |x, y| if y > 0.0 { x } else { 0.0 });
                self.accumulate(a, ga);
            }
            Op::Clamp(a, lo, hi) => {
                let ga = g.zip_map(&self.nodes[a].value, |x, y| if y > lo && y < hi { x } else { 0.0 });
                self.accumulate(a, ga);
            }
            Op::Sum(a) => {
                let (r, c) = self.nodes[a].value.shape();
                self.accumulate(a, Matrix::filled(r, c, g.item()));
            }
            Op::SumCols(a) => {
                let (r, c) = self.nodes[a].value.shape();
                let mut ga = Matrix::zeros(r, c);
                for row in 0..r {
                    let gi = g.get(row, 0);
                    ga.row_mut(row).iter_mut().for_each(|v| *v = gi);
                }
                self.accumulate(a, ga);
            }
            Op::SumRows(a) => {
                let (r, c) = self.nodes[a].value.shape();
                let mut ga = Matrix::zeros(r, c);
                for row in 0..r {
                    ga.row_mut(row).copy_from_slice(g.as_slice());
                }
                self.accumulate(a, ga);
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let mut offset = 0;
                for p in parts {
                    let w = self.nodes[p].value.cols();
                    if self.wants(p) {
                        let mut gp = Matrix::zeros(rows, w);
                        for r in 0..rows {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        self.accumulate(p, gp);
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let (r, c) = self.nodes[a].value.shape();
                let w = g.cols();
                let mut ga = Matrix::zeros(r, c);
                for row in 0..r {
                    ga.row_mut(row)[start..start + w].copy_from_slice(g.row(row));
                }
                self.accumulate(a, ga);
            }
            Op::GaussianLogpdf(x, mu, ls) => {
                let n = g.len();
                let (mut gx, mut gl) = (Vec::with_capacity(n), Vec::with_capacity(n));
                {
                    let xv = self.nodes[x].value.as_slice();
                    let mv = self.nodes[mu].value.as_slice();
                    let lv = self.nodes[ls].value.as_slice();
                    for k in 0..n {
                        let inv = math::exp(-lv[k]);
                        let u = (xv[k] - mv[k]) * inv;
                        gx.push(-g.as_slice()[k] * u * inv);
                        gl.push(g.as_slice()[k] * (u * u - 1.0));
                    }
                }
                let (r, c) = g.shape();
                if self.wants(mu) {
                    self.accumulate(mu, Matrix::from_vec(r, c, gx.iter().map(|v| -v).collect()));
                }
                self.accumulate(x, Matrix::from_vec(r, c, gx));
                self.accumulate(ls, Matrix::from_vec(r, c, gl));
            }
        }
    }
}

fn column_sums(g: &Matrix) -> Matrix {
    let mut out = vec![0.0; g.cols()];
    for r in 0..g.rows() {
        for (o, x) in out.iter_mut().zip(g.row(r)) {
            *o += x;
        }
    }
    Matrix::row_vector(out)
}
