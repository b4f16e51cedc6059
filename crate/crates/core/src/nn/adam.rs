use serde::{Deserialize, Serialize};

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one update from the accumulated gradients and zeroes them.
    pub fn step<T: Real>(&mut self, params: Vec<(&mut Tensor<T>, &mut Tensor<T>)>) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|(p, _)| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::ShapeMismatch {
                context: "optimizer state",
                expected: vec![self.m.len()],
                actual: vec![params.len()],
            });
        }
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params.into_iter().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            if m.len() != p.len() {
                return Err(Error::ShapeMismatch {
                    context: "optimizer moment",
                    expected: p.shape.clone(),
                    actual: vec![m.len()],
                });
            }
            for i in 0..p.len() {
                let gi = g.values[i].as_f64();
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let step = self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                p.values[i] = T::of(p.values[i].as_f64() - step);
            }
            g.fill_zero();
        }
        Ok(())
    }

    /// Update for a single scalar parameter such as a log temperature.
    pub fn step_scalar(&mut self, param: &mut f64, grad: f64) {
        if self.m.is_empty() {
            self.m = vec![vec![0.0]];
            self.v = vec![vec![0.0]];
        }
        self.steps += 1;
        let t = self.steps as i32;
        let m = &mut self.m[0][0];
        let v = &mut self.v[0][0];
        *m = self.beta1 * *m + (1.0 - self.beta1) * grad;
        *v = self.beta2 * *v + (1.0 - self.beta2) * grad * grad;
        let mh = *m / (1.0 - self.beta1.powi(t));
        let vh = *v / (1.0 - self.beta2.powi(t));
        *param -= self.lr * mh / (vh.sqrt() + self.eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Tensor::<f64>::new(vec![2], vec![1.0, -1.0]).unwrap();
        let mut g = Tensor::<f64>::new(vec![2], vec![0.3, -5.0]).unwrap();
        let mut opt = Adam::new(0.01);
        opt.step(vec![(&mut p, &mut g)]).unwrap();
        assert!((p.values[0] - 0.99).abs() < 1e-9);
        assert!((p.values[1] + 0.99).abs() < 1e-9);
        assert_eq!(g.values, vec![0.0, 0.0]);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut x = 3.0;
        let mut opt = Adam::new(0.05);
        for _ in 0..2000 {
            let grad = 2.0 * (x - 1.5);
            opt.step_scalar(&mut x, grad);
        }
        assert!((x - 1.5).abs() < 1e-3);
    }
}
