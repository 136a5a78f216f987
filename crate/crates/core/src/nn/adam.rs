use serde::{Deserialize, Serialize};

use crate::nn::{ConvGrad, ConvLayer};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments, one moment buffer per layer tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<ConvGrad>,
    pub v: Vec<ConvGrad>,
}

impl Adam {
    pub fn new(config: AdamConfig, layers: &[ConvLayer]) -> Self {
        Adam {
            config,
            step: 0,
            m: layers.iter().map(ConvGrad::zeros_like).collect(),
            v: layers.iter().map(ConvGrad::zeros_like).collect(),
        }
    }

    pub fn update(&mut self, layers: &mut [ConvLayer], grads: &[ConvGrad]) {
        assert_eq!(layers.len(), grads.len());
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - beta2.powi(self.step.min(i32::MAX as u64) as i32);
        let apply = |p: &mut [f32], g: &[f32], m: &mut [f32], v: &mut [f32]| {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (vh.sqrt() + eps);
            }
        };
        for (l, layer) in layers.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[l], &mut self.v[l]);
            apply(&mut layer.weight, &grads[l].weight, &mut m.weight, &mut v.weight);
            apply(&mut layer.bias, &grads[l].bias, &mut m.bias, &mut v.bias);
        }
    }
}
