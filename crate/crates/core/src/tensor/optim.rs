use serde::{Deserialize, Serialize};

use super::{Gradients, Matrix, ParamStore, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Rescale gradients whose global norm exceeds this value.
    pub clip_norm: Option<f64>,
    /// Decoupled decay applied to every updated parameter.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: None,
            weight_decay: 0.0,
        }
    }
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    config: AdamConfig,
    first: Vec<Matrix<T>>,
    second: Vec<Matrix<T>>,
    steps: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros = |s: &ParamStore<T>| s.iter().map(|(_, _, m)| Matrix::zeros(m.rows(), m.cols())).collect();
        Self {
            first: zeros(store),
            second: zeros(store),
            config,
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &mut Gradients<T>) {
        if let Some(max) = self.config.clip_norm {
            let norm = grads.global_norm();
            if norm > max {
                grads.scale(max / norm);
            }
        }
        self.steps += 1;
        let t = self.steps as i32;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let lr = T::lit(c.learning_rate * bc2.sqrt() / bc1);
        let (b1, b2, eps) = (T::lit(c.beta1), T::lit(c.beta2), T::lit(c.epsilon * bc2.sqrt()));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let decay = T::one() - T::lit(c.learning_rate * c.weight_decay);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let m = &mut self.first[id.index()];
            let v = &mut self.second[id.index()];
            let p = store.get_mut(id);
            for (((p, m), v), &g) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *p = decay * *p - lr * *m / (v.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("x", Matrix::from_vec(1, 2, vec![3.0, -2.0]));
        let mut adam = Adam::new(
            AdamConfig {
                learning_rate: 0.1,
                ..AdamConfig::default()
            },
            &store,
        );
        for _ in 0..500 {
            let mut tape = Tape::new();
            let x = tape.param(&store, id);
            let sq = tape.mul(x, x);
            let loss = tape.sum_all(sq);
            let mut grads = tape.backward(loss);
            adam.step(&mut store, &mut grads);
        }
        assert!(store.get(id).data().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("x", Matrix::from_vec(1, 1, vec![1.0]));
        let mut adam = Adam::new(AdamConfig { learning_rate: 0.01, ..AdamConfig::default() }, &store);
        let mut grads = Gradients::new(1);
        grads.accumulate(id, &Matrix::from_vec(1, 1, vec![5.0]));
        adam.step(&mut store, &mut grads);
        assert!((store.get(id).data()[0] - 0.99).abs() < 1e-6);
    }
}
