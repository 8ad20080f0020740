use serde::{Deserialize, Serialize};

use crate::encoder::{ModelParams, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Dense Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    cfg: AdamConfig,
    m: ModelParams<T>,
    v: ModelParams<T>,
    t: i32,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: AdamConfig, params: &ModelParams<T>) -> Self {
        Self { cfg, m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &ModelParams<T>) {
        self.t += 1;
        let b1 = T::lit(self.cfg.beta1);
        let b2 = T::lit(self.cfg.beta2);
        let one = T::one();
        let step = T::lit(self.cfg.lr / (1.0 - self.cfg.beta1.powi(self.t)));
        let v_corr = T::lit(1.0 / (1.0 - self.cfg.beta2.powi(self.t)));
        let eps = T::lit(self.cfg.eps);
        let grads = grads.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for ((((_, p), (_, g)), (_, m)), (_, v)) in params.tensors_mut().into_iter().zip(grads).zip(ms).zip(vs) {
            for (((pv, &gv), mv), vv) in p.data.iter_mut().zip(&g.data).zip(m.data.iter_mut()).zip(v.data.iter_mut()) {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                *pv -= step * *mv / ((*vv * v_corr).sqrt() + eps);
            }
        }
    }
}
