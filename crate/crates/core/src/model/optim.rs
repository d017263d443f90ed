//! AdamW with decoupled weight decay, and an exponential moving average of
//! the parameters.

use serde::{Deserialize, Serialize};

use super::{ModelError, ParamStore};
use crate::autodiff::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Rescale gradients whose global norm exceeds this value.
    pub grad_clip: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            grad_clip: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Mat> = params
            .values()
            .iter()
            .map(|p| Mat::zeros(p.dim()))
            .collect();
        AdamW {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update. Gradients must be finite; parameters are checked after
    /// the update too.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Mat]) -> Result<(), ModelError> {
        if grads.len() != params.len() {
            return Err(ModelError::Shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (i, (g, p)) in grads.iter().zip(params.values()).enumerate() {
            if g.dim() != p.dim() {
                return Err(ModelError::Shape(format!(
                    "gradient {:?} vs parameter {:?} for {}",
                    g.dim(),
                    p.dim(),
                    params.names()[i]
                )));
            }
            if !g.iter().all(|x| x.is_finite()) {
                return Err(ModelError::NonFinite(format!(
                    "gradient of {}",
                    params.names()[i]
                )));
            }
        }
        let c = self.config;
        let clip = match c.grad_clip {
            Some(max) => {
                let norm = super::grad_norm(grads);
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (i, p) in params.values_mut().iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(&grads[i])
                .for_each(|p, m, v, &g| {
                    let g = g * clip;
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= c.lr * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * *p);
                });
        }
        if !params.all_finite() {
            return Err(ModelError::NonFinite("parameters after update".into()));
        }
        Ok(())
    }
}

/// `shadow ← decay · shadow + (1 − decay) · params`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ema {
    pub decay: f64,
    pub shadow: ParamStore,
}

impl Ema {
    pub fn new(decay: f64, params: &ParamStore) -> Self {
        Ema {
            decay,
            shadow: params.clone(),
        }
    }

    pub fn update(&mut self, params: &ParamStore) {
        self.update_with_decay(params, self.decay);
    }

    /// Warmup schedule `min(decay, (1 + n) / (10 + n))` after `n` updates.
    pub fn warmup_decay(&self, n: u64) -> f64 {
        self.decay.min((1.0 + n as f64) / (10.0 + n as f64))
    }

    pub fn update_with_decay(&mut self, params: &ParamStore, d: f64) {
        for (s, p) in self.shadow.values_mut().iter_mut().zip(params.values()) {
            ndarray::Zip::from(s)
                .and(p)
                .for_each(|s, &p| *s = d * *s + (1.0 - d) * p);
        }
    }
}
