//! Minimal differentiable-computation kernel.
//!
//! A small tape records tensor operations during a forward pass and plays
//! them backwards for exact reverse-mode gradients. Three layer types are
//! built on top: dense, graph convolution (degree-normalized adjacency with
//! self-loops), and a gated recurrent cell. Everything is 64-bit and every
//! layer is validated against central finite differences ([`grad_check`]).
//!
//! No GPU, no image convolutions, no graph optimization: desk-scale
//! networks only.

mod checkpoint;
mod net;
mod tape;
mod tensor;

pub use checkpoint::{load_params, save_params};
pub use net::{
    grad_check, normalize_adjacency, Activation, LayerSpec, NetSpec, ParamBinding, ParamGrads,
    Params,
};
pub use tape::{Gradients, Tape, VarId};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("layer {layer} needs an adjacency input")]
    MissingAdjacency { layer: usize },
    #[error("invalid network spec: {0}")]
    BadSpec(String),
    #[error("checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("sidecar: {0}")]
    Json(#[from] serde_json::Error),
}

/// First/second-moment adaptive optimizer state, one slot per parameter
/// tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &Params) -> Self {
        let shapes: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|t| vec![0.0; t.values().len()])
            .collect();
        AdamState { m: shapes.clone(), v: shapes, step: 0 }
    }
}

/// Standard Adam update with bias correction. `betas = (beta1, beta2)`.
pub fn adam_update(
    params: &mut Params,
    grads: &ParamGrads,
    state: &mut AdamState,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) {
    let (b1, b2) = betas;
    state.step += 1;
    let t = state.step as i32;
    let corr1 = 1.0 - b1.powi(t);
    let corr2 = 1.0 - b2.powi(t);
    for (idx, tensor) in params.tensors_mut().iter_mut().enumerate() {
        let grad = grads.tensor(idx);
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        for (k, value) in tensor.values_mut().iter_mut().enumerate() {
            let g = grad.values()[k];
            m[k] = b1 * m[k] + (1.0 - b1) * g;
            v[k] = b2 * v[k] + (1.0 - b2) * g * g;
            let m_hat = m[k] / corr1;
            let v_hat = v[k] / corr2;
            *value -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod adam_tests {
    use super::*;

    fn single_param(v: &[f64]) -> Params {
        Params::from_tensors(vec![Tensor::new(vec![1, v.len()], v.to_vec()).unwrap()])
    }

    fn grads_of(v: &[f64]) -> ParamGrads {
        ParamGrads::from_tensors(vec![Tensor::new(vec![1, v.len()], v.to_vec()).unwrap()])
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = single_param(&[1.5, -2.0]);
        let before = p.clone();
        let mut st = AdamState::new(&p);
        for _ in 0..5 {
            adam_update(&mut p, &grads_of(&[0.0, 0.0]), &mut st, 0.01, (0.9, 0.999), 1e-8);
        }
        assert_eq!(p, before);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut p = single_param(&[0.3]);
        let before = p.clone();
        let mut st = AdamState::new(&p);
        adam_update(&mut p, &grads_of(&[123.0]), &mut st, 0.0, (0.9, 0.999), 1e-8);
        assert_eq!(p, before);
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        // With g constant, m_hat -> g and v_hat -> g^2, so the per-step
        // move tends to lr * g / |g| = lr.
        let mut p = single_param(&[0.0]);
        let mut st = AdamState::new(&p);
        let lr = 0.01;
        let mut last = p.tensors()[0].values()[0];
        let mut step_size = 0.0;
        for _ in 0..500 {
            adam_update(&mut p, &grads_of(&[3.7]), &mut st, lr, (0.9, 0.999), 1e-12);
            let now = p.tensors()[0].values()[0];
            step_size = last - now;
            last = now;
        }
        assert!((step_size - lr).abs() < 1e-4, "step {step_size}");
    }
}
