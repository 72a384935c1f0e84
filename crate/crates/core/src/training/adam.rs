use serde::{Deserialize, Serialize};

use crate::models::Network;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        AdamParams {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction, state laid out like [`Network::params`].
#[derive(Debug, Clone)]
pub struct Adam {
    params: AdamParams,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new<N: Network>(model: &N, params: AdamParams) -> Self {
        let shapes: Vec<usize> = model.params().iter().map(|(_, p)| p.len()).collect();
        Adam {
            params,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn step<N: Network>(&mut self, model: &mut N, grads: &N) {
        self.t += 1;
        let p = self.params;
        let c1 = 1.0 - p.beta1.powi(self.t as i32);
        let c2 = 1.0 - p.beta2.powi(self.t as i32);
        let grad_slices = grads.params();
        for (((w, (_, g)), m), v) in model
            .params_mut()
            .into_iter()
            .zip(grad_slices)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..w.len() {
                m[i] = p.beta1 * m[i] + (1.0 - p.beta1) * g[i];
                v[i] = p.beta2 * v[i] + (1.0 - p.beta2) * g[i] * g[i];
                w[i] -= p.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + p.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_student, StudentConfig};

    #[test]
    fn first_step_moves_each_weight_by_lr() {
        let mut m = build_student(&StudentConfig::with_hidden(4), 0).unwrap();
        let before: Vec<f64> = m.params().iter().flat_map(|(_, p)| p.to_vec()).collect();
        let mut g = m.zeros_like();
        for s in g.params_mut() {
            s.iter_mut().enumerate().for_each(|(i, v)| *v = if i % 2 == 0 { 0.3 } else { -2.0 });
        }
        let mut opt = Adam::new(&m, AdamParams::with_lr(0.01));
        opt.step(&mut m, &g);
        let after: Vec<f64> = m.params().iter().flat_map(|(_, p)| p.to_vec()).collect();
        for (a, b) in before.iter().zip(&after) {
            assert!(((a - b).abs() - 0.01).abs() < 1e-6);
        }
    }
}
