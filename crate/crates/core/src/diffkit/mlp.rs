use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{DiffError, Matrix, Tape, Var};
use crate::domain::RngStream;
use crate::math;

/// One affine layer, `y = x W + b` with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Matrix,
}

/// Fully connected network: tanh on hidden layers, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Tape handles for an [`Mlp`]'s parameters.
#[derive(Debug, Clone)]
pub struct MlpVars {
    weights: Vec<Var>,
    biases: Vec<Var>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases. `sizes` lists every layer
    /// width including input and output.
    pub fn glorot(sizes: &[usize], rng: &mut RngStream) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output widths");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = math::sqrt(6.0 / (fan_in + fan_out) as f64);
                let data = (0..fan_in * fan_out).map(|_| rng.uniform_range(-limit, limit)).collect();
                Dense { weight: Matrix::from_vec(fan_in, fan_out, data), bias: Matrix::zeros(1, fan_out) }
            })
            .collect();
        Mlp { layers }
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self, DiffError> {
        if layers.is_empty() {
            return Err(DiffError::EmptyInput("mlp layers"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.shape() != (1, l.weight.cols()) {
                return Err(DiffError::ShapeMismatch { op: "mlp bias", left: l.weight.shape(), right: l.bias.shape() });
            }
            if i > 0 && layers[i - 1].weight.cols() != l.weight.rows() {
                return Err(DiffError::ShapeMismatch {
                    op: "mlp chain",
                    left: layers[i - 1].weight.shape(),
                    right: l.weight.shape(),
                });
            }
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    /// Input width followed by every layer's output width.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = Vec::with_capacity(self.layers.len() + 1);
        s.push(self.layers[0].weight.rows());
        s.extend(self.layers.iter().map(|l| l.weight.cols()));
        s
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.cols()
    }

    /// Zeroes the final layer so the network outputs exactly 0.
    pub fn zero_output_layer(&mut self) {
        let last = self.layers.last_mut().expect("non-empty");
        last.weight.as_mut_slice().fill(0.0);
        last.bias.as_mut_slice().fill(0.0);
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Parameters flattened layer by layer, weight before bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(l.bias.as_slice());
        }
        out
    }

    /// Inverse of [`Mlp::to_flat`]; panics on a length mismatch.
    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let mut k = 0;
        for l in &mut self.layers {
            for m in [&mut l.weight, &mut l.bias] {
                let n = m.len();
                m.as_mut_slice().copy_from_slice(&flat[k..k + n]);
                k += n;
            }
        }
    }

    /// `(name, rows, cols, values)` for every parameter array.
    pub fn named_arrays(&self, prefix: &str) -> Vec<(String, usize, usize, Vec<f64>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}layer{i}.weight"), l.weight.rows(), l.weight.cols(), l.weight.as_slice().to_vec()));
            out.push((format!("{prefix}layer{i}.bias"), 1, l.bias.cols(), l.bias.as_slice().to_vec()));
        }
        out
    }

    /// Forward pass without recording a graph. `x` is `batch x in`.
    pub fn forward(&self, x: &Matrix) -> Matrix {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = h.matmul(&l.weight);
            let b = l.bias.as_slice();
            let cols = z.cols();
            for chunk in z.as_mut_slice().chunks_mut(cols) {
                for (v, bi) in chunk.iter_mut().zip(b) {
                    *v += bi;
                    if i < last {
                        *v = math::tanh(*v);
                    }
                }
            }
            h = z;
        }
        h
    }

    /// Places the parameters on `tape`, as trainable leaves or constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> MlpVars {
        let mut weights = Vec::with_capacity(self.layers.len());
        let mut biases = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            if trainable {
                weights.push(tape.leaf(l.weight.clone()));
                biases.push(tape.leaf(l.bias.clone()));
            } else {
                weights.push(tape.constant(l.weight.clone()));
                biases.push(tape.constant(l.bias.clone()));
            }
        }
        MlpVars { weights, biases }
    }
}

impl MlpVars {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, DiffError> {
        let mut h = x;
        let last = self.weights.len() - 1;
        for (i, (&w, &b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = tape.matmul(h, w)?;
            let z = tape.add_row(z, b)?;
            h = if i < last { tape.tanh(z) } else { z };
        }
        Ok(h)
    }

    /// Gradients in [`Mlp::to_flat`] order; parameters the root did not
    /// reach contribute zeros.
    pub fn flat_grad(&self, tape: &Tape, out: &mut Vec<f64>) {
        for (&w, &b) in self.weights.iter().zip(&self.biases) {
            for v in [w, b] {
                let n = tape.value(v).len();
                match tape.grad(v) {
                    Some(g) => out.extend_from_slice(g.as_slice()),
                    None => out.extend(core::iter::repeat_n(0.0, n)),
                }
            }
        }
    }
}
