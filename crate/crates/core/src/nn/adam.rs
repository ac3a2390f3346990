use std::collections::{BTreeMap, HashMap};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::param::{Module, Param};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; non-positive disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 5.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub step: u64,
    moments: HashMap<String, (Array2<f64>, Array2<f64>)>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            step: 0,
            moments: HashMap::new(),
        }
    }

    /// First and second moments keyed `m.<param>` and `v.<param>`.
    pub fn export_moments(&self) -> BTreeMap<String, Array2<f64>> {
        let mut out = BTreeMap::new();
        for (name, (m, v)) in &self.moments {
            out.insert(format!("m.{name}"), m.clone());
            out.insert(format!("v.{name}"), v.clone());
        }
        out
    }

    /// Restores moments written by [`Adam::export_moments`]. Entries whose
    /// partner is missing are ignored.
    pub fn import_moments(&mut self, step: u64, tensors: &BTreeMap<String, Array2<f64>>) {
        self.step = step;
        self.moments.clear();
        for (key, m) in tensors {
            let Some(name) = key.strip_prefix("m.") else { continue };
            if let Some(v) = tensors.get(&format!("v.{name}")) {
                if v.dim() == m.dim() {
                    self.moments.insert(name.to_string(), (m.clone(), v.clone()));
                }
            }
        }
    }

    /// Norm of all gradients of parameters accepted by `trainable`.
    pub fn grad_norm(model: &dyn Module, trainable: &dyn Fn(&str) -> bool) -> f64 {
        let mut sq = 0.0;
        model.visit(&mut |n, p| {
            if trainable(n) {
                sq += p.grad.iter().map(|g| g * g).sum::<f64>();
            }
        });
        sq.sqrt()
    }

    /// Applies one update to the parameters accepted by `trainable`; others
    /// are left untouched. Returns the pre-clip gradient norm.
    pub fn update<M: Module + ?Sized>(&mut self, model: &mut M, trainable: &dyn Fn(&str) -> bool) -> f64 {
        let mut sq = 0.0;
        model.visit(&mut |n, p| {
            if trainable(n) {
                sq += p.grad.iter().map(|g| g * g).sum::<f64>();
            }
        });
        let norm = sq.sqrt();
        let scale = if self.cfg.clip_norm > 0.0 && norm > self.cfg.clip_norm {
            self.cfg.clip_norm / norm
        } else {
            1.0
        };
        self.step += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let moments = &mut self.moments;
        model.visit_mut(&mut |n: &str, p: &mut Param| {
            if !trainable(n) {
                return;
            }
            let (m, v) = moments
                .entry(n.to_string())
                .or_insert_with(|| (Array2::zeros(p.value.raw_dim()), Array2::zeros(p.value.raw_dim())));
            ndarray::Zip::from(&mut p.value)
                .and(&p.grad)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    let g = g * scale;
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    *w -= c.lr * (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
                });
        });
        norm
    }
}
