use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Gradients, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction and per-parameter learning rates.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every parameter that has a gradient and a learning rate.
    /// `lr_for` returning `None` freezes that parameter.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients, lr_for: impl Fn(&str) -> Option<f64>) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        for (name, g) in grads.iter() {
            let Some(lr) = lr_for(name) else { continue };
            let Some(p) = params.get_mut(name) else { continue };
            update(
                &self.cfg,
                (bc1, bc2),
                lr,
                p,
                g,
                self.first.entry(name.clone()).or_insert_with(|| vec![0.0; g.numel()]),
                self.second.entry(name.clone()).or_insert_with(|| vec![0.0; g.numel()]),
            );
        }
    }
}

fn update(cfg: &AdamConfig, (bc1, bc2): (f64, f64), lr: f64, p: &mut Tensor, g: &Tensor, m: &mut [f64], v: &mut [f64]) {
    for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
        *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
        *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
        let mhat = *mv / bc1;
        let vhat = *vv / bc2;
        *pv -= lr * mhat / (vhat.sqrt() + cfg.eps);
    }
}
