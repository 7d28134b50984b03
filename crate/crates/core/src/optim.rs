//! Adam with bias correction, optimizing the image tensor directly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ensure_same_shape, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    m: Tensor4,
    v: Tensor4,
    t: u32,
    config: AdamConfig,
}

impl AdamState {
    pub fn new(dims: [usize; 4], config: AdamConfig) -> Result<Self> {
        let AdamConfig { lr, beta1, beta2, eps } = config;
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::config(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
            return Err(Error::config(format!(
                "Adam needs 0 <= beta < 1 and eps > 0, got beta1={beta1} beta2={beta2} eps={eps}"
            )));
        }
        let [n, c, h, w] = dims;
        let m = Tensor4::zeros(n, c, h, w)?;
        Ok(Self {
            v: m.clone(),
            m,
            t: 0,
            config,
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u32 {
        self.t
    }

    pub fn first_moment(&self) -> &Tensor4 {
        &self.m
    }

    pub fn second_moment(&self) -> &Tensor4 {
        &self.v
    }

    /// One update of `params` in place.
    pub fn step(&mut self, params: &mut Tensor4, grad: &Tensor4) -> Result<()> {
        ensure_same_shape("adam_step", params, grad)?;
        ensure_same_shape("adam_step", params, &self.m)?;
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let correction1 = 1.0 - (beta1 as f64).powi(self.t as i32);
        let correction2 = 1.0 - (beta2 as f64).powi(self.t as i32);
        let (lr, eps) = (lr as f64, eps as f64);
        let m = self.m.data_mut().iter_mut();
        let v = self.v.data_mut().iter_mut();
        for (((p, &g), m), v) in params.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m as f64 / correction1;
            let v_hat = *v as f64 / correction2;
            *p = (*p as f64 - lr * m_hat / (v_hat.sqrt() + eps)) as f32;
        }
        Ok(())
    }
}
