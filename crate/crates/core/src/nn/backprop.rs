//! Backpropagation through time and gradient clipping.

use rand_chacha::ChaCha20Rng;

use super::cell::{cell_output_derivative, forward_train, ForwardCaches, GATES};
use super::params::{activate_derivative, ModelGrads, GATE_CANDIDATE, GATE_FORGET, GATE_INPUT, GATE_OUTPUT};
use super::{bce_loss, LstmModel, TrainError, BCE_CLIP};
use crate::features::WindowedExample;

/// Reusable per-layer buffers for one example's backward sweep.
pub(crate) struct BackwardScratch {
    /// Gradient arriving from above, per layer, `w * units` flat.
    dh_seq: Vec<Vec<f64>>,
    dh: Vec<Vec<f64>>,
    dc: Vec<Vec<f64>>,
    dh_next: Vec<Vec<f64>>,
    dc_next: Vec<Vec<f64>>,
    dz: Vec<[Vec<f64>; 4]>,
}

impl BackwardScratch {
    pub(crate) fn new(model: &LstmModel) -> Self {
        let w = model.config.window_size;
        let units: Vec<usize> = model.config.layers.iter().map(|l| l.units).collect();
        Self {
            dh_seq: units.iter().map(|&n| vec![0.0; w * n]).collect(),
            dh: units.iter().map(|&n| vec![0.0; n]).collect(),
            dc: units.iter().map(|&n| vec![0.0; n]).collect(),
            dh_next: units.iter().map(|&n| vec![0.0; n]).collect(),
            dc_next: units.iter().map(|&n| vec![0.0; n]).collect(),
            dz: units.iter().map(|&n| std::array::from_fn(|_| vec![0.0; n])).collect(),
        }
    }
}

/// Accumulates the exact gradient of `d_logit * logit`-seeded loss into
/// `grads`, walking layers top-down and timesteps last-to-first.
fn backward_example(
    model: &LstmModel,
    caches: &ForwardCaches,
    d_logit: f64,
    grads: &mut ModelGrads,
    scratch: &mut BackwardScratch,
) {
    if d_logit == 0.0 {
        return;
    }
    let w = model.config.window_size;
    let num_layers = model.layers.len();
    let top = num_layers - 1;

    grads.head.weights.add_outer(&[d_logit], &caches.top_h_last);
    grads.head.bias.data[0] += d_logit;

    // Seed the top layer: only the last timestep's hidden state feeds the head.
    scratch.dh_seq[top].fill(0.0);
    let top_units = model.layers[top].units();
    for j in 0..top_units {
        scratch.dh_seq[top][(w - 1) * top_units + j] = model.head.weights.data[j] * d_logit;
    }

    for l in (0..num_layers).rev() {
        let params = &model.layers[l];
        let cache = &caches.layers[l];
        let n = params.units();
        let fin = params.input_size();
        let activation = cache.activation;

        scratch.dh_next[l].fill(0.0);
        scratch.dc_next[l].fill(0.0);

        for t in (0..w).rev() {
            let ns = t * n..(t + 1) * n;
            let xs = t * fin..(t + 1) * fin;
            let gate_i = &cache.gates[GATE_INPUT][ns.clone()];
            let gate_f = &cache.gates[GATE_FORGET][ns.clone()];
            let gate_o = &cache.gates[GATE_OUTPUT][ns.clone()];
            let cand = &cache.gates[GATE_CANDIDATE][ns.clone()];
            let z_cand = &cache.z[GATE_CANDIDATE][ns.clone()];
            let c_new = &cache.c[ns.clone()];
            let c_prev = &cache.c_prev[ns.clone()];
            let h_prev = &cache.h_prev[ns.clone()];
            let m = &cache.m[ns.clone()];
            let x_t = &cache.x[xs];

            {
                let dh = &mut scratch.dh[l];
                let dc = &mut scratch.dc[l];
                let from_above = &scratch.dh_seq[l][ns];
                for j in 0..n {
                    dh[j] = from_above[j] + scratch.dh_next[l][j];
                    dc[j] = scratch.dc_next[l][j]
                        + dh[j] * gate_o[j] * cell_output_derivative(activation, c_new[j], m[j]);
                }
                let dz = &mut scratch.dz[l];
                for j in 0..n {
                    dz[GATE_OUTPUT][j] = dh[j] * m[j] * gate_o[j] * (1.0 - gate_o[j]);
                    dz[GATE_FORGET][j] = dc[j] * c_prev[j] * gate_f[j] * (1.0 - gate_f[j]);
                    dz[GATE_INPUT][j] = dc[j] * cand[j] * gate_i[j] * (1.0 - gate_i[j]);
                    dz[GATE_CANDIDATE][j] =
                        dc[j] * gate_i[j] * activate_derivative(activation, z_cand[j], cand[j]);
                    scratch.dc_next[l][j] = dc[j] * gate_f[j];
                }
            }

            let dz = &scratch.dz[l];
            for g in GATES {
                grads.layers[l].w[g].add_outer(&dz[g], x_t);
                grads.layers[l].u[g].add_outer(&dz[g], h_prev);
                grads.layers[l].b[g].add_assign(&dz[g]);
            }

            scratch.dh_next[l].fill(0.0);
            for g in GATES {
                params.u[g].matvec_t_acc(&dz[g], &mut scratch.dh_next[l]);
            }

            if l > 0 {
                let (below, _) = scratch.dh_seq.split_at_mut(l);
                let dest = &mut below[l - 1][t * fin..(t + 1) * fin];
                dest.fill(0.0);
                for g in GATES {
                    params.w[g].matvec_t_acc(&scratch.dz[l][g], dest);
                }
                if !cache.mask.is_empty() {
                    for (v, factor) in dest.iter_mut().zip(&cache.mask) {
                        *v *= factor;
                    }
                }
            }
        }
    }
}

/// Gradient of the clipped binary cross entropy w.r.t. the head logit.
///
/// Inside the clip window this is the classic `p - y`; where the probability
/// is clipped, the loss is locally constant and the gradient is zero.
fn bce_logit_gradient(p: f64, label: bool) -> f64 {
    if !(BCE_CLIP..=1.0 - BCE_CLIP).contains(&p) {
        0.0
    } else {
        p - f64::from(u8::from(label))
    }
}

/// Computes the mean batch loss and its exact gradients.
///
/// With `dropout_rng` set, runs in training mode (fresh dropout masks per
/// example); otherwise in inference mode. Gradients are unclipped; apply
/// [`clip_global_norm`] afterwards.
pub fn loss_and_gradients(
    model: &LstmModel,
    batch: &[&WindowedExample],
    mut dropout_rng: Option<&mut ChaCha20Rng>,
) -> Result<(f64, ModelGrads), TrainError> {
    assert!(!batch.is_empty(), "empty batch");
    let mut grads = ModelGrads::zeros_like(&model.layers, &model.head);
    let mut caches = ForwardCaches::new(model);
    let mut scratch = BackwardScratch::new(model);
    let n = batch.len() as f64;
    let mut loss_sum = 0.0;
    for example in batch {
        let p = forward_train(model, &example.window, &mut caches, dropout_rng.as_deref_mut())?;
        loss_sum += bce_loss(p, example.label);
        let d_logit = bce_logit_gradient(p, example.label) / n;
        backward_example(model, &caches, d_logit, &mut grads, &mut scratch);
    }
    Ok((loss_sum / n, grads))
}

/// Scales all gradients so their global L2 norm is at most `max_norm`;
/// returns the pre-clip norm. Direction is preserved.
pub fn clip_global_norm(grads: &mut ModelGrads, max_norm: f64) -> f64 {
    let norm = grads
        .tensors()
        .iter()
        .flat_map(|t| t.data.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for tensor in grads.tensors_mut() {
            for v in &mut tensor.data {
                *v *= scale;
            }
        }
    }
    norm
}
