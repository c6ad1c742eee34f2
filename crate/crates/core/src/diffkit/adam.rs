use alloc::vec;
use alloc::vec::Vec;

use crate::math;

/// Adam with bias correction. Minimizes; negate gradients to ascend.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale the gradient when its L2 norm exceeds this.
    pub max_grad_norm: Option<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, max_grad_norm: None, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn steps_taken(&self) -> u32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "adam parameter length");
        assert_eq!(grad.len(), self.m.len(), "adam gradient length");
        self.t += 1;
        let scale = match self.max_grad_norm {
            Some(limit) => {
                let norm = math::sqrt(grad.iter().map(|g| g * g).sum::<f64>());
                if norm > limit {
                    limit / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let bc1 = 1.0 - math::powi(self.beta1, self.t);
        let bc2 = 1.0 - math::powi(self.beta2, self.t);
        for i in 0..params.len() {
            let g = grad[i] * scale;
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= self.lr * mh / (math::sqrt(vh) + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = [3.0, -2.0];
        let mut opt = Adam::new(2, 0.1);
        for _ in 0..500 {
            let g = [2.0 * p[0], 2.0 * p[1]];
            opt.step(&mut p, &g);
        }
        assert!(p[0].abs() < 1e-2 && p[1].abs() < 1e-2);
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let mut p = [1.5, 2.5];
        let mut opt = Adam::new(2, 0.0);
        opt.step(&mut p, &[10.0, -3.0]);
        assert_eq!(p, [1.5, 2.5]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = [0.0];
        let mut opt = Adam::new(1, 0.05);
        opt.step(&mut p, &[123.0]);
        assert!((p[0] + 0.05).abs() < 1e-9);
    }
}
