use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f32,
    pub momentum: f32,
    pub weight_decay: f32,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            momentum: 0.9,
            weight_decay: 0.0,
        }
    }
}

/// One heavy-ball update: `v ← momentum·v + g`, then `p ← p − lr·v`.
pub fn sgd_step(params: &mut [f32], grads: &[f32], velocity: &mut [f32], lr: f32, momentum: f32) {
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
}

/// Momentum SGD over a [`ParamStore`], with optional L2 weight decay folded
/// into the gradient.
#[derive(Debug, Clone)]
pub struct Sgd {
    config: SgdConfig,
    velocity: Vec<Vec<f32>>,
    steps: usize,
}

impl Sgd {
    pub fn new(config: SgdConfig, store: &ParamStore) -> Self {
        Self {
            config,
            velocity: store.iter().map(|p| vec![0.0; p.tensor.numel()]).collect(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn set_learning_rate(&mut self, lr: f32) {
        self.config.learning_rate = lr;
    }

    /// Applies the stored gradients. Any non-finite gradient aborts the step
    /// before a single value is modified.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for p in store.iter() {
            if let Some(g) = p.tensor.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGradient {
                        step: self.steps,
                        param: p.name.clone(),
                    });
                }
            }
        }
        let SgdConfig {
            learning_rate,
            momentum,
            weight_decay,
        } = self.config;
        for (p, v) in store.iter_mut().zip(self.velocity.iter_mut()) {
            let Some(g) = p.tensor.grad().map(|g| g.to_vec()) else {
                continue;
            };
            let values = p.tensor.values_mut();
            if weight_decay != 0.0 {
                let g: Vec<f32> = g.iter().zip(values.iter()).map(|(g, w)| g + weight_decay * w).collect();
                sgd_step(values, &g, v, learning_rate, momentum);
            } else {
                sgd_step(values, &g, v, learning_rate, momentum);
            }
        }
        self.steps += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn plain_step() {
        let mut p = [1.0f32];
        let mut v = [0.0f32];
        sgd_step(&mut p, &[2.0], &mut v, 0.1, 0.0);
        assert!((p[0] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn momentum_recurrence() {
        let lr = 0.1f32;
        let mut p = [0.0f32];
        let mut v = [0.0f32];
        sgd_step(&mut p, &[1.0], &mut v, lr, 0.9);
        assert!((v[0] - 1.0).abs() < 1e-7);
        assert!((p[0] + lr).abs() < 1e-7);
        sgd_step(&mut p, &[1.0], &mut v, lr, 0.9);
        assert!((v[0] - 1.9).abs() < 1e-6);
        assert!((p[0] + 2.9 * lr).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut p = [3.5f32];
        let mut v = [0.0f32];
        sgd_step(&mut p, &[0.0], &mut v, 0.1, 0.9);
        assert_eq!(p[0], 3.5);
    }

    #[test]
    fn non_finite_gradient_is_reported_with_name() {
        let mut store = ParamStore::new();
        let id = store.add("encoder.0.wq", Tensor::zeros(vec![2]));
        store.get_mut(id).set_grad(vec![1.0, f32::NAN]).unwrap();
        let mut opt = Sgd::new(SgdConfig::default(), &store);
        match opt.step(&mut store) {
            Err(Error::NonFiniteGradient { step, param }) => {
                assert_eq!(step, 0);
                assert_eq!(param, "encoder.0.wq");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(store.get(id).values(), &[0.0, 0.0]);
    }
}
