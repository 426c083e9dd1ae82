use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::encoders::ParamTree;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with per-tensor moment state keyed by registry name.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: i32,
    moments: HashMap<String, (Matrix, Matrix)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: HashMap::new(),
        }
    }

    /// One update of every tensor in `params` from the matching tensor in `grads`.
    pub fn step<P>(&mut self, params: &mut P, grads: &P)
    where
        P: ParamTree<Matrix>,
    {
        let mut flat: Vec<(String, &Matrix)> = Vec::new();
        grads.visit("", &mut |name, g| flat.push((name, g)));
        self.step += 1;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(self.step);
        let bias2 = 1.0 - c.beta2.powi(self.step);
        let mut idx = 0;
        params.visit_mut("", &mut |name, w| {
            let (gname, g) = &flat[idx];
            debug_assert_eq!(&name, gname);
            idx += 1;
            let (m, v) = self
                .moments
                .entry(name)
                .or_insert_with(|| (Matrix::zeros(w.dim()), Matrix::zeros(w.dim())));
            ndarray::Zip::from(w)
                .and(m)
                .and(v)
                .and(*g)
                .for_each(|w, m, v, &g| {
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    let mhat = *m / bias1;
                    let vhat = *v / bias2;
                    *w -= c.learning_rate * mhat / (vhat.sqrt() + c.eps);
                });
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::GraphAgnosticParams;
    use ndarray::array;

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = GraphAgnosticParams {
            w0: array![[3.0]],
            b0: array![[-2.0]],
            w1: array![[1.0]],
            b1: array![[0.5]],
        };
        let mut adam = Adam::new(AdamConfig {
            learning_rate: 0.05,
            ..AdamConfig::default()
        });
        for _ in 0..2000 {
            let g = p.map("", &mut |_, m: &Matrix| m * 2.0);
            adam.step(&mut p, &g);
        }
        p.visit("", &mut |_, m| assert!(m[[0, 0]].abs() < 1e-2));
    }
}
