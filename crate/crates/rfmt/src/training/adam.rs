//! Adam with bias correction and the inverse-square-root warmup schedule.

use serde::{Deserialize, Serialize};

use crate::model::ParamSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    /// `scale * min(1/sqrt(t), t / warmup^1.5)`: linear warmup, then decay.
    InverseSqrt { scale: f64, warmup: u64 },
    Fixed { lr: f64 },
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::InverseSqrt { scale: 0.08, warmup: 400 }
    }
}

impl LrSchedule {
    pub fn at(&self, step: u64) -> f64 {
        let t = step.max(1) as f64;
        match *self {
            LrSchedule::InverseSqrt { scale, warmup } => {
                let w = warmup.max(1) as f64;
                scale * (1.0 / t.sqrt()).min(t / (w * w.sqrt()))
            }
            LrSchedule::Fixed { lr } => lr,
        }
    }
}

/// First/second moment state aligned with the parameter set's entry order.
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(params: &ParamSet, beta1: f64, beta2: f64, eps: f64) -> Adam {
        Adam {
            m: params.tensors().map(|t| vec![0.0; t.numel()]).collect(),
            v: params.tensors().map(|t| vec![0.0; t.numel()]).collect(),
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    /// One update; `grads` must be in the parameter set's entry order.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor], lr: f64) {
        assert_eq!(grads.len(), self.m.len(), "gradient count mismatch");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (idx, (_, tensor)) in params.iter_mut().enumerate() {
            let g = grads[idx].data();
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for (i, value) in tensor.data_mut().iter_mut().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *value -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
