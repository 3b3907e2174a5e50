//! Adam with bias correction and linear learning-rate warmup.

use serde::{Deserialize, Serialize};

use super::{Gradients, ModelParams};
use crate::tensor::Tensor;

/// Optimizer state; moment tensors are aligned with the parameter traversal
/// order of [`ModelParams::tensors`].
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: usize,
    pub hyper: AdamHyper,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Steps of linear warmup; 0 disables the ramp.
    pub warmup: usize,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup: 0,
        }
    }
}

impl AdamState {
    pub fn new(params: &ModelParams, hyper: AdamHyper) -> Self {
        let m = params
            .tensors()
            .iter()
            .map(|(_, t)| t.zeros_like())
            .collect();
        let v = params
            .tensors()
            .iter()
            .map(|(_, t)| t.zeros_like())
            .collect();
        AdamState {
            step: 0,
            hyper,
            m,
            v,
        }
    }

    /// Learning rate at a 1-based step under the linear warmup ramp.
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.hyper.warmup == 0 {
            self.hyper.lr
        } else {
            self.hyper.lr * (step as f64 / self.hyper.warmup as f64).min(1.0)
        }
    }
}

/// One optimizer step; mutates params and state in place.
pub fn adam_step(state: &mut AdamState, params: &mut ModelParams, grads: &Gradients) {
    state.step += 1;
    let t = state.step;
    let h = state.hyper;
    let lr = state.lr_at(t);
    let bc1 = 1.0 - h.beta1.powi(t as i32);
    let bc2 = 1.0 - h.beta2.powi(t as i32);

    let g_list = grads.tensors();
    for (idx, (_, p)) in params.tensors_mut().into_iter().enumerate() {
        let g = &g_list[idx].1.data;
        let m = &mut state.m[idx].data;
        let v = &mut state.v[idx].data;
        for i in 0..p.data.len() {
            m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
            v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p.data[i] -= lr * m_hat / (v_hat.sqrt() + h.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};

    fn small() -> ModelParams {
        init_params(&ModelConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 16,
            max_enc_len: 4,
            max_dec_len: 4,
            vocab_size: 20,
            n_docs: 0,
            dropout: 0.0,
            seed: 3,
        })
        .unwrap()
    }

    /// Hand-computed first step: m=(1-b1)g, v=(1-b2)g^2, after bias
    /// correction m_hat=g, v_hat=g^2, so the update is lr*g/(|g|+eps).
    #[test]
    fn first_step_matches_hand_computation() {
        let mut params = small();
        let before = params.w_tokens.data[0];
        let mut grads = params.zeros_like();
        grads.w_tokens.data[0] = 1.0;
        let mut state = AdamState::new(
            &params,
            AdamHyper {
                lr: 0.1,
                ..Default::default()
            },
        );
        adam_step(&mut state, &mut params, &grads);
        let expected_delta = 0.1 * 1.0 / (1.0 + 1e-8);
        let actual_delta = before - params.w_tokens.data[0];
        assert!(
            (actual_delta - expected_delta).abs() < 1e-6,
            "delta {actual_delta} vs hand-computed {expected_delta}"
        );
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = small();
        let snapshot = params.clone();
        let grads = params.zeros_like();
        let mut state = AdamState::new(&params, AdamHyper::default());
        adam_step(&mut state, &mut params, &grads);
        for ((_, a), (_, b)) in params.tensors().into_iter().zip(snapshot.tensors()) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn warmup_ramps_linearly() {
        let params = small();
        let state = AdamState::new(
            &params,
            AdamHyper {
                lr: 2e-3,
                warmup: 100,
                ..Default::default()
            },
        );
        assert!((state.lr_at(50) - 1e-3).abs() < 1e-9);
        assert!((state.lr_at(100) - 2e-3).abs() < 1e-12);
        assert!((state.lr_at(500) - 2e-3).abs() < 1e-12);
    }
}
