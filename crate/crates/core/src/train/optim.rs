use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Gradients;
use crate::params::{GroupSet, ParamStore};
use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.0,
            grad_clip_norm: 1.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.beta1) || !open_unit(self.beta2) {
            return Err(Error::config("AdamW betas must lie in (0, 1)"));
        }
        if self.grad_clip_norm <= 0.0 || self.eps <= 0.0 || self.weight_decay < 0.0 {
            return Err(Error::config("clip and eps must be positive, weight decay nonnegative"));
        }
        Ok(())
    }
}

/// AdamW moments, one slot per parameter id; only trainable parameters hold moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Option<Mat<f32>>>,
    pub v: Vec<Option<Mat<f32>>>,
}

/// What one optimizer step did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub grad_norm: f64,
    pub clip_scale: f64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self {
            t: 0,
            m: vec![None; n_params],
            v: vec![None; n_params],
        }
    }

    /// Fresh moments for exactly the parameters in `trainable`.
    pub fn for_groups(params: &ParamStore<f32>, trainable: GroupSet) -> Self {
        let mut s = Self::new(params.len());
        for (id, p) in params.iter() {
            if trainable.contains(p.group) {
                s.m[id] = Some(Mat::zeros(p.value.rows, p.value.cols));
                s.v[id] = Some(Mat::zeros(p.value.rows, p.value.cols));
            }
        }
        s
    }

    /// Global-norm clipping followed by one bias-corrected AdamW update.
    /// Parameters without moments are never touched.
    pub fn step(
        &mut self,
        params: &mut ParamStore<f32>,
        grads: &Gradients<f32>,
        lr: f64,
        cfg: &OptimizerConfig,
    ) -> Result<StepReport> {
        for (id, g) in grads.by_param.iter().enumerate() {
            let Some(g) = g else { continue };
            let p = params.get(id);
            if self.m[id].is_none() {
                return Err(Error::Freezing(format!(
                    "gradient for `{}` in frozen group {}",
                    p.name, p.group
                )));
            }
            if !g.all_finite() {
                return Err(Error::NanGradient {
                    group: p.group.to_string(),
                    tensor: p.name.clone(),
                });
            }
        }
        let grad_norm = grads.global_norm();
        let clip_scale = if grad_norm > cfg.grad_clip_norm {
            cfg.grad_clip_norm / grad_norm
        } else {
            1.0
        };
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for id in 0..self.m.len() {
            let (Some(m), Some(v)) = (self.m[id].as_mut(), self.v[id].as_mut()) else {
                continue;
            };
            let zero;
            let g = match grads.get(id) {
                Some(g) => g,
                None => {
                    zero = Mat::zeros(m.rows, m.cols);
                    &zero
                }
            };
            let w = params.value_mut(id);
            for i in 0..w.data.len() {
                let gi = g.data[i] as f64 * clip_scale;
                let mi = cfg.beta1 * m.data[i] as f64 + (1.0 - cfg.beta1) * gi;
                let vi = cfg.beta2 * v.data[i] as f64 + (1.0 - cfg.beta2) * gi * gi;
                m.data[i] = mi as f32;
                v.data[i] = vi as f32;
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                let mut wi = w.data[i] as f64;
                wi -= lr * (mhat / (vhat.sqrt() + cfg.eps) + cfg.weight_decay * wi);
                w.data[i] = wi as f32;
            }
        }
        Ok(StepReport { grad_norm, clip_scale })
    }
}
