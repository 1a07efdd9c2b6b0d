//! Adaptive-moment optimizer with bias correction and decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::model::StudentParams;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moment estimates for one tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// One update of a single tensor at (1-based) step `t`.
pub fn adam_update(
    param: &mut [f64],
    grad: &[f64],
    moments: &mut Moments,
    t: u64,
    hyper: &AdamConfig,
    decay: bool,
) {
    assert_eq!(param.len(), grad.len(), "adam: gradient shape mismatch");
    if moments.m.len() != param.len() {
        moments.m = vec![0.0; param.len()];
        moments.v = vec![0.0; param.len()];
    }
    let bc1 = 1.0 - hyper.beta1.powf(t as f64);
    let bc2 = 1.0 - hyper.beta2.powf(t as f64);
    for (((p, &g), m), v) in param
        .iter_mut()
        .zip(grad)
        .zip(moments.m.iter_mut())
        .zip(moments.v.iter_mut())
    {
        *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g;
        *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g * g;
        if decay && hyper.weight_decay != 0.0 {
            *p -= hyper.learning_rate * hyper.weight_decay * *p;
        }
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.epsilon);
    }
}

/// Optimizer state for a full [`StudentParams`] set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub moments: Vec<Moments>,
}

/// Applies one step to every tensor. Weight decay touches only the projection
/// matrices, never the temperatures.
pub fn adam_step(
    params: &mut StudentParams,
    grads: &StudentParams,
    state: &mut AdamState,
    hyper: &AdamConfig,
) {
    state.step += 1;
    let grads = grads.tensors();
    let mut slots = params.tensors_mut();
    assert_eq!(slots.len(), grads.len(), "adam: parameter layout mismatch");
    state.moments.resize_with(slots.len(), Moments::default);
    for ((slot, (g, _)), moments) in slots.iter_mut().zip(&grads).zip(state.moments.iter_mut()) {
        adam_update(slot.0, g, moments, state.step, hyper, slot.1);
    }
}
