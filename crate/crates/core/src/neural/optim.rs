use serde::{Deserialize, Serialize};

use super::array::Array;
use super::graph::Gradients;
use super::params::Parameters;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Learning-rate schedule over a run of `total` steps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    /// Linear decay from the base rate to zero at the last step.
    #[default]
    Linear,
}

impl LrSchedule {
    pub fn rate(self, base: f64, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Linear if total == 0 => base,
            LrSchedule::Linear => base * (total - step.min(total)) as f64 / total as f64,
        }
    }
}

/// Adam with bias correction. Moments mirror the parameter shapes.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Array>,
    second: Vec<Array>,
}

impl Adam {
    pub fn new(params: &Parameters, config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|(_, _, v)| Array::zeros(v.shape())).collect();
        Adam { config, step: 0, first: zeros(), second: zeros() }
    }

    pub fn set_learning_rate(&mut self, rate: f64) {
        self.config.learning_rate = rate;
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters without a gradient or not trainable
    /// are left untouched, and their moments do not decay.
    pub fn step(&mut self, params: &mut Parameters, grads: &Gradients) {
        self.step += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (id, grad) in grads.iter() {
            if !params.is_trainable(id) {
                continue;
            }
            let i = id.index();
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let p = params.value_mut(id).data_mut();
            for (((p, m), v), g) in p.iter_mut().zip(m).zip(v).zip(grad.data()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= learning_rate * (*m / c1) / ((*v / c2).sqrt() + epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::graph::Graph;

    fn scalar_params(x: f64) -> Parameters {
        let mut p = Parameters::new();
        p.insert("x", Array::new(vec![1], vec![x]));
        p
    }

    #[test]
    fn linear_schedule_reaches_zero() {
        assert_eq!(LrSchedule::Linear.rate(2.0, 0, 4), 2.0);
        assert_eq!(LrSchedule::Linear.rate(2.0, 3, 4), 0.5);
        assert_eq!(LrSchedule::Linear.rate(2.0, 4, 4), 0.0);
        assert_eq!(LrSchedule::Constant.rate(2.0, 3, 4), 2.0);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = scalar_params(0.5);
        let id = p.id("x").unwrap();
        let mut adam = Adam::new(&p, AdamConfig::default());
        let mut g = Gradients::empty(&p);
        g.set(id, Array::new(vec![1], vec![0.0]));
        adam.step(&mut p, &g);
        assert_eq!(p.value(id).data(), &[0.5]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar_params(0.0);
        let id = p.id("x").unwrap();
        let mut adam = Adam::new(&p, AdamConfig { learning_rate: 0.1, ..AdamConfig::default() });
        let mut g = Gradients::empty(&p);
        g.set(id, Array::new(vec![1], vec![1.0]));
        adam.step(&mut p, &g);
        // m_hat = 1, v_hat = 1, so the step is 0.1 / (1 + 1e-8).
        let moved = -p.value(id).data()[0];
        assert!((moved - 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let mut p = scalar_params(2.0);
        let id = p.id("x").unwrap();
        p.set_trainable_prefix("x", false);
        let mut adam = Adam::new(&p, AdamConfig::default());
        let mut g = Gradients::empty(&p);
        g.set(id, Array::new(vec![1], vec![3.0]));
        adam.step(&mut p, &g);
        assert_eq!(p.value(id).data(), &[2.0]);
    }

    fn quadratic_run(steps: usize) -> Vec<f64> {
        let mut p = Parameters::new();
        p.insert("w", Array::from_rows(&[vec![0.3, -0.7], vec![1.1, 0.2]]));
        let target = Array::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let mut adam = Adam::new(&p, AdamConfig { learning_rate: 0.01, ..AdamConfig::default() });
        let mut losses = Vec::new();
        for _ in 0..steps {
            let grads = {
                let mut g = Graph::new(&p);
                let w = g.param(p.id("w").unwrap());
                let t = g.input(target.clone());
                let neg = g.scale(t, -1.0);
                let d = g.add(w, neg);
                let sq = g.mul(d, d);
                let loss = g.sum_all(sq);
                losses.push(g.value(loss).item());
                g.backward(loss)
            };
            adam.step(&mut p, &grads);
        }
        losses
    }

    #[test]
    fn quadratic_loss_decreases_deterministically() {
        let a = quadratic_run(50);
        let b = quadratic_run(50);
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[1] <= w[0]));
    }
}
