//! Adam with step learning-rate decay.

use serde::{Deserialize, Serialize};

use super::model::ParamStore;
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub lr0: f64,
    pub decay: f64,
    /// Epochs between decays.
    pub step_size: usize,
}

impl Schedule {
    pub fn new(lr0: f64) -> Self {
        Self { lr0, decay: 0.95, step_size: 5 }
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        self.lr0 * self.decay.powi((epoch / self.step_size.max(1)) as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub schedule: Schedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamStore, schedule: Schedule) -> Self {
        let zeros: Vec<Vec<f64>> = params.params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        Self { schedule, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    /// One update. Non-finite gradients abort the step and leave everything unchanged.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f64>], epoch: usize) -> Result<(), NnError> {
        assert_eq!(grads.len(), params.params.len(), "one gradient per parameter");
        for (p, g) in params.params.iter().zip(grads) {
            assert_eq!(g.len(), p.value.len(), "gradient shape mismatch for {}", p.name);
            if g.iter().any(|v| !v.is_finite()) {
                return Err(NnError::NonFinite(p.name.clone()));
            }
        }
        self.step += 1;
        let lr = self.schedule.lr(epoch);
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, (p, g)) in params.params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p.value.data[j] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::Tensor;
    use crate::nn::model::Param;

    fn store(v: f64) -> ParamStore {
        ParamStore { params: vec![Param { name: "x".into(), value: Tensor::scalar(v) }] }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = store(1.0);
        let mut opt = Adam::new(&p, Schedule::new(0.01));
        opt.step(&mut p, &[vec![3.7]], 0).unwrap();
        let expected = 0.01 * 3.7 / (3.7 + 1e-8);
        assert!(((1.0 - p.params[0].value.data[0]) - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = store(-2.5);
        let mut opt = Adam::new(&p, Schedule::new(0.01));
        for e in 0..50 {
            opt.step(&mut p, &[vec![0.0]], e).unwrap();
        }
        assert_eq!(p.params[0].value.data[0], -2.5);
    }

    #[test]
    fn schedule() {
        let s = Schedule::new(0.01);
        assert!((s.lr(10) - 0.009025).abs() < 1e-15);
        assert_eq!(s.lr(4), 0.01);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = store(1.0);
        let mut opt = Adam::new(&p, Schedule::new(0.01));
        assert!(matches!(opt.step(&mut p, &[vec![f64::NAN]], 0), Err(NnError::NonFinite(_))));
        assert_eq!(p.params[0].value.data[0], 1.0);
        assert_eq!(opt.step, 0);
    }
}
