//! Adam optimizer with bias correction.

use super::params::ModelGrads;
use super::LstmModel;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct MomentPair {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// First/second moment estimates mirroring the model's parameter tensors,
/// plus the shared step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub hyper: AdamParams,
    pub step: u64,
    slots: Vec<MomentPair>,
}

impl OptimizerState {
    pub fn for_model(model: &LstmModel) -> Self {
        Self {
            hyper: AdamParams::default(),
            step: 0,
            slots: model
                .tensors()
                .iter()
                .map(|t| MomentPair { m: vec![0.0; t.len()], v: vec![0.0; t.len()] })
                .collect(),
        }
    }
}

pub(crate) fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    hyper: AdamParams,
    step: u64,
) {
    let bias1 = 1.0 - hyper.beta1.powi(step as i32);
    let bias2 = 1.0 - hyper.beta2.powi(step as i32);
    for i in 0..params.len() {
        m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * grads[i];
        v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * grads[i] * grads[i];
        let m_hat = m[i] / bias1;
        let v_hat = v[i] / bias2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + hyper.epsilon);
    }
}

/// One Adam step across all parameters; increments the step counter.
pub fn adam_step(model: &mut LstmModel, grads: &ModelGrads, state: &mut OptimizerState, lr: f64) {
    state.step += 1;
    let step = state.step;
    let hyper = state.hyper;
    for ((param, grad), slot) in model
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.slots.iter_mut())
    {
        adam_update(&mut param.data, &grad.data, &mut slot.m, &mut slot.v, lr, hyper, step);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_with_unit_gradient_moves_by_learning_rate() {
        let mut params = vec![0.5];
        let mut m = vec![0.0];
        let mut v = vec![0.0];
        adam_update(&mut params, &[1.0], &mut m, &mut v, 0.001, AdamParams::default(), 1);
        // bias-corrected m_hat = v_hat = 1, so the delta is lr / (1 + eps)
        let expected = 0.5 - 0.001 / (1.0 + 1e-8);
        assert!((params[0] - expected).abs() < 1e-15, "{}", params[0]);
        assert!((params[0] - 0.499000000010).abs() < 1e-10);
    }

    #[test]
    fn zero_gradient_with_zero_state_is_a_fixed_point() {
        let mut params = vec![0.25];
        let mut m = vec![0.0];
        let mut v = vec![0.0];
        adam_update(&mut params, &[0.0], &mut m, &mut v, 0.001, AdamParams::default(), 1);
        assert_eq!(params[0], 0.25);
    }

    #[test]
    fn equal_gradients_and_state_update_equally() {
        let mut params = vec![1.0, 1.0];
        let mut m = vec![0.1, 0.1];
        let mut v = vec![0.2, 0.2];
        adam_update(&mut params, &[0.7, 0.7], &mut m, &mut v, 0.01, AdamParams::default(), 3);
        assert_eq!(params[0], params[1]);
        assert_eq!(m[0], m[1]);
        assert_eq!(v[0], v[1]);
    }
}
