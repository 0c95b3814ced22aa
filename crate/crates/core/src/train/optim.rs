use serde::{Deserialize, Serialize};
use snowformer_tensor::{ParamStore, Scalar, Tensor, TensorError};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are stored per parameter in store order.
#[derive(Clone, Debug)]
pub struct Adam<T: Scalar> {
    pub cfg: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros = || {
            params
                .values()
                .iter()
                .map(|p| Tensor::zeros(p.shape()))
                .collect()
        };
        Self {
            cfg,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn update(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::InvalidConfig(format!(
                "optimizer tracks {} tensors, model has {}, got {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, p) in params.values_mut().iter_mut().enumerate() {
            let g = &grads[i];
            if g.shape() != p.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                }
                .into());
            }
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((theta, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                let gf = gi.as_f64();
                let mf = beta1 * mi.as_f64() + (1.0 - beta1) * gf;
                let vf = beta2 * vi.as_f64() + (1.0 - beta2) * gf * gf;
                *mi = T::from_f64_lossy(mf);
                *vi = T::from_f64_lossy(vf);
                let delta = lr * (mf / c1) / ((vf / c2).sqrt() + eps);
                *theta = T::from_f64_lossy(theta.as_f64() - delta);
            }
        }
        Ok(())
    }
}

/// Triangular cyclic learning rate between `lr0` and `max_factor·lr0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrSchedule {
    pub lr0: f64,
    pub max_factor: f64,
    pub cycle_steps: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            lr0: 2e-4,
            max_factor: 1.2,
            cycle_steps: 500,
        }
    }
}

impl LrSchedule {
    pub fn lr_max(&self) -> f64 {
        self.lr0 * self.max_factor
    }

    /// `lr0` at the start and end of each cycle, `lr_max` at mid-cycle.
    pub fn lr(&self, t: u64) -> f64 {
        let cycle = self.cycle_steps.max(1);
        let phase = (t % cycle) as f64 / cycle as f64;
        let tri = 1.0 - (2.0 * phase - 1.0).abs();
        self.lr0 + (self.lr_max() - self.lr0) * tri
    }
}
