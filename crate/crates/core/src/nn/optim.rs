use serde::{Deserialize, Serialize};

use super::graph::ParamGrads;
use super::mat::Mat;
use super::model::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Adds `weight_decay * p` to the gradient (plain Adam with L2) instead
    /// of decaying the parameter directly.
    #[serde(default)]
    pub coupled: bool,
}

impl AdamWConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, coupled: false }
    }

    /// Adam with L2 regularisation folded into the gradient.
    pub fn adam_l2(lr: f64, weight_decay: f64) -> Self {
        Self { coupled: true, ..Self::new(lr, weight_decay) }
    }
}

/// Adam with decoupled weight decay over a subset of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    step: u64,
    m: Vec<Option<Mat>>,
    v: Vec<Option<Mat>>,
    owned: Vec<bool>,
}

impl AdamW {
    /// Optimiser over the parameters for which `owned(id)` holds.
    pub fn new(cfg: AdamWConfig, store: &ParamStore, owned: impl Fn(usize) -> bool) -> Self {
        let n = store.len();
        Self { cfg, step: 0, m: vec![None; n], v: vec![None; n], owned: (0..n).map(owned).collect() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn owns(&self, id: usize) -> bool {
        self.owned[id]
    }

    /// Applies one update; without a gradient, decoupled decay still applies.
    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads) {
        self.step += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for id in 0..store.len() {
            if !self.owned[id] {
                continue;
            }
            let p = &mut store.values[id];
            if c.weight_decay != 0.0 && !c.coupled {
                let k = 1.0 - c.lr * c.weight_decay;
                p.data.iter_mut().for_each(|x| *x *= k);
            }
            let Some(g) = grads.get(id) else { continue };
            let m = self.m[id].get_or_insert_with(|| Mat::zeros(p.rows, p.cols));
            let v = self.v[id].get_or_insert_with(|| Mat::zeros(p.rows, p.cols));
            for i in 0..p.data.len() {
                let gi = if c.coupled { g.data[i] + c.weight_decay * p.data[i] } else { g.data[i] };
                m.data[i] = c.beta1 * m.data[i] + (1.0 - c.beta1) * gi;
                v.data[i] = c.beta2 * v.data[i] + (1.0 - c.beta2) * gi * gi;
                let mh = m.data[i] / bc1;
                let vh = v.data[i] / bc2;
                p.data[i] -= c.lr * mh / (vh.sqrt() + c.eps);
            }
        }
    }
}
