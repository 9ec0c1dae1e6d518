//! LSTM cell step, stacked forward passes and their caches.
//!
//! Gate nonlinearities are fixed to the sigmoid; the configurable activation
//! applies to the candidate transform and the cell-output transform.

use rand_chacha::ChaCha20Rng;

use super::params::{
    activate, activate_derivative, sigmoid, LstmLayerParams, GATE_CANDIDATE, GATE_FORGET,
    GATE_INPUT, GATE_OUTPUT,
};
use super::{dropout_mask, Activation, LstmModel, TrainError};

/// Per-step intermediate values kept for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct CellCache {
    /// Gate pre-activations in [i, f, o, candidate] order.
    pub z: [Vec<f64>; 4],
    /// Gate outputs (post-sigmoid; candidate slot holds the activated candidate).
    pub gates: [Vec<f64>; 4],
    /// New cell state.
    pub c: Vec<f64>,
    /// Activated cell state `act(c)`.
    pub m: Vec<f64>,
}

/// Computes one LSTM step.
///
/// `z`/`gates` buffers receive the pre-activations and activated gates; the
/// candidate slot of `gates` holds `act(z_candidate)`. `h_out`/`c_out` must
/// not alias `h_prev`/`c_prev`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn step_core(
    params: &LstmLayerParams,
    activation: Activation,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    z: [&mut [f64]; 4],
    gates: [&mut [f64]; 4],
    c_out: &mut [f64],
    m_out: &mut [f64],
    h_out: &mut [f64],
) {
    let [z_i, z_f, z_o, z_c] = z;
    let [g_i, g_f, g_o, g_c] = gates;
    for (g, buf) in [&mut *z_i, &mut *z_f, &mut *z_o, &mut *z_c].into_iter().enumerate() {
        buf.copy_from_slice(&params.b[g].data);
        params.w[g].matvec_acc(x, buf);
        params.u[g].matvec_acc(h_prev, buf);
    }
    for j in 0..h_out.len() {
        g_i[j] = sigmoid(z_i[j]);
        g_f[j] = sigmoid(z_f[j]);
        g_o[j] = sigmoid(z_o[j]);
        g_c[j] = activate(activation, z_c[j]);
        c_out[j] = g_f[j] * c_prev[j] + g_i[j] * g_c[j];
        m_out[j] = activate(activation, c_out[j]);
        h_out[j] = g_o[j] * m_out[j];
    }
}

/// Single-cell forward step: returns the new hidden and cell state plus the
/// cache of pre-activations and gate outputs.
pub fn lstm_cell_forward(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    params: &LstmLayerParams,
    activation: Activation,
) -> Result<(Vec<f64>, Vec<f64>, CellCache), TrainError> {
    let n = params.units();
    assert_eq!(x.len(), params.input_size(), "input width mismatch");
    assert_eq!(h_prev.len(), n, "hidden state width mismatch");
    assert_eq!(c_prev.len(), n, "cell state width mismatch");

    let mut cache = CellCache {
        z: std::array::from_fn(|_| vec![0.0; n]),
        gates: std::array::from_fn(|_| vec![0.0; n]),
        c: vec![0.0; n],
        m: vec![0.0; n],
    };
    let mut h = vec![0.0; n];
    let mut c = vec![0.0; n];
    {
        let [z_i, z_f, z_o, z_c] = &mut cache.z;
        let [g_i, g_f, g_o, g_c] = &mut cache.gates;
        step_core(
            params,
            activation,
            x,
            h_prev,
            c_prev,
            [z_i, z_f, z_o, z_c],
            [g_i, g_f, g_o, g_c],
            &mut c,
            &mut cache.m,
            &mut h,
        );
    }
    if !h.iter().all(|v| v.is_finite()) || !c.iter().all(|v| v.is_finite()) {
        return Err(TrainError::NonFinite { layer: 0 });
    }
    cache.c.copy_from_slice(&c);
    Ok((h, c, cache))
}

/// All intermediate values of one window's forward pass, laid out per layer
/// with timestep-major flat buffers.
pub struct ForwardCaches {
    pub(crate) layers: Vec<LayerCache>,
    pub(crate) top_h_last: Vec<f64>,
    state_h: Vec<Vec<f64>>,
    state_c: Vec<Vec<f64>>,
    h_snapshot: Vec<f64>,
    c_snapshot: Vec<f64>,
}

pub(crate) struct LayerCache {
    pub(crate) units: usize,
    pub(crate) input_size: usize,
    pub(crate) activation: Activation,
    pub(crate) dropout: f64,
    /// Input mask factors (0 or 1/(1-rate)); empty when dropout is off.
    pub(crate) mask: Vec<f64>,
    /// Post-mask inputs, `w * input_size`.
    pub(crate) x: Vec<f64>,
    pub(crate) h_prev: Vec<f64>,
    pub(crate) c_prev: Vec<f64>,
    pub(crate) z: [Vec<f64>; 4],
    pub(crate) gates: [Vec<f64>; 4],
    pub(crate) c: Vec<f64>,
    pub(crate) m: Vec<f64>,
}

impl LayerCache {
    fn new(units: usize, input_size: usize, activation: Activation, dropout: f64, w: usize) -> Self {
        Self {
            units,
            input_size,
            activation,
            dropout,
            mask: Vec::new(),
            x: vec![0.0; w * input_size],
            h_prev: vec![0.0; w * units],
            c_prev: vec![0.0; w * units],
            z: std::array::from_fn(|_| vec![0.0; w * units]),
            gates: std::array::from_fn(|_| vec![0.0; w * units]),
            c: vec![0.0; w * units],
            m: vec![0.0; w * units],
        }
    }
}

impl ForwardCaches {
    pub fn new(model: &LstmModel) -> Self {
        let w = model.config.window_size;
        let mut layers = Vec::with_capacity(model.config.layers.len());
        let mut input = model.config.feature_count;
        for spec in &model.config.layers {
            layers.push(LayerCache::new(spec.units, input, spec.activation, spec.dropout, w));
            input = spec.units;
        }
        let max_units = model.config.layers.iter().map(|l| l.units).max().unwrap_or(1);
        Self {
            layers,
            top_h_last: vec![0.0; input],
            state_h: model.config.layers.iter().map(|l| vec![0.0; l.units]).collect(),
            state_c: model.config.layers.iter().map(|l| vec![0.0; l.units]).collect(),
            h_snapshot: vec![0.0; max_units],
            c_snapshot: vec![0.0; max_units],
        }
    }
}

/// Training-mode forward pass over one window, filling `caches`.
///
/// When `dropout_rng` is provided, a fresh Bernoulli mask per layer input
/// feature is drawn for this example and shared across all timesteps.
pub(crate) fn forward_train(
    model: &LstmModel,
    window: &[f64],
    caches: &mut ForwardCaches,
    mut dropout_rng: Option<&mut ChaCha20Rng>,
) -> Result<f64, TrainError> {
    let w = model.config.window_size;
    let feature_count = model.config.feature_count;
    debug_assert_eq!(window.len(), w * feature_count);

    let ForwardCaches { layers, top_h_last, state_h, state_c, h_snapshot, c_snapshot } = caches;

    for (l, cache) in layers.iter_mut().enumerate() {
        state_h[l].fill(0.0);
        state_c[l].fill(0.0);
        cache.mask.clear();
        if cache.dropout > 0.0 {
            if let Some(rng) = dropout_rng.as_deref_mut() {
                cache.mask = dropout_mask(cache.input_size, cache.dropout, rng);
            }
        }
    }

    for t in 0..w {
        for l in 0..layers.len() {
            let cache = &mut layers[l];
            let n = cache.units;
            let fin = cache.input_size;
            let xs = t * fin..(t + 1) * fin;
            let ns = t * n..(t + 1) * n;

            // Prepare the (masked) input for this layer.
            {
                let (below, at) = state_h.split_at_mut(l);
                let x_src: &[f64] = if l == 0 {
                    &window[t * feature_count..(t + 1) * feature_count]
                } else {
                    &below[l - 1]
                };
                let x_slot = &mut cache.x[xs.clone()];
                x_slot.copy_from_slice(x_src);
                if !cache.mask.is_empty() {
                    for (v, m) in x_slot.iter_mut().zip(&cache.mask) {
                        *v *= m;
                    }
                }
                // Snapshot the incoming state before overwriting it.
                h_snapshot[..n].copy_from_slice(&at[0]);
                c_snapshot[..n].copy_from_slice(&state_c[l]);
            }
            cache.h_prev[ns.clone()].copy_from_slice(&h_snapshot[..n]);
            cache.c_prev[ns.clone()].copy_from_slice(&c_snapshot[..n]);

            {
                let [z_i, z_f, z_o, z_c] = &mut cache.z;
                let [g_i, g_f, g_o, g_c] = &mut cache.gates;
                step_core(
                    &model.layers[l],
                    cache.activation,
                    &cache.x[xs],
                    &h_snapshot[..n],
                    &c_snapshot[..n],
                    [&mut z_i[ns.clone()], &mut z_f[ns.clone()], &mut z_o[ns.clone()], &mut z_c[ns.clone()]],
                    [&mut g_i[ns.clone()], &mut g_f[ns.clone()], &mut g_o[ns.clone()], &mut g_c[ns.clone()]],
                    &mut state_c[l],
                    &mut cache.m[ns.clone()],
                    &mut state_h[l],
                );
            }
            cache.c[ns.clone()].copy_from_slice(&state_c[l]);
            if !state_h[l].iter().all(|v| v.is_finite()) || !state_c[l].iter().all(|v| v.is_finite()) {
                return Err(TrainError::NonFinite { layer: l });
            }
        }
    }

    let top = layers.len() - 1;
    top_h_last.copy_from_slice(&state_h[top]);
    let logit = model.head.weights.row(0).iter().zip(&*top_h_last).map(|(a, b)| a * b).sum::<f64>()
        + model.head.bias_value();
    Ok(sigmoid(logit))
}

/// Reusable buffers for inference-mode forward passes.
pub struct InferScratch {
    state_h: Vec<Vec<f64>>,
    state_c: Vec<Vec<f64>>,
    h_snapshot: Vec<f64>,
    c_snapshot: Vec<f64>,
    z: [Vec<f64>; 4],
    gates: [Vec<f64>; 4],
    m: Vec<f64>,
}

impl InferScratch {
    pub fn new(model: &LstmModel) -> Self {
        let max_units = model.config.layers.iter().map(|l| l.units).max().unwrap_or(1);
        Self {
            state_h: model.config.layers.iter().map(|l| vec![0.0; l.units]).collect(),
            state_c: model.config.layers.iter().map(|l| vec![0.0; l.units]).collect(),
            h_snapshot: vec![0.0; max_units],
            c_snapshot: vec![0.0; max_units],
            z: std::array::from_fn(|_| vec![0.0; max_units]),
            gates: std::array::from_fn(|_| vec![0.0; max_units]),
            m: vec![0.0; max_units],
        }
    }
}

/// Inference-mode forward pass (no dropout, no caches).
pub(crate) fn forward_infer(
    model: &LstmModel,
    window: &[f64],
    scratch: &mut InferScratch,
) -> Result<f64, TrainError> {
    let w = model.config.window_size;
    let feature_count = model.config.feature_count;
    debug_assert_eq!(window.len(), w * feature_count);

    for state in scratch.state_h.iter_mut().chain(scratch.state_c.iter_mut()) {
        state.fill(0.0);
    }

    for t in 0..w {
        for l in 0..model.layers.len() {
            let params = &model.layers[l];
            let n = params.units();
            {
                let (below, at) = scratch.state_h.split_at_mut(l);
                let x: &[f64] = if l == 0 {
                    &window[t * feature_count..(t + 1) * feature_count]
                } else {
                    &below[l - 1]
                };
                scratch.h_snapshot[..n].copy_from_slice(&at[0]);
                scratch.c_snapshot[..n].copy_from_slice(&scratch.state_c[l]);
                let [z_i, z_f, z_o, z_c] = &mut scratch.z;
                let [g_i, g_f, g_o, g_c] = &mut scratch.gates;
                step_core(
                    params,
                    model.config.layers[l].activation,
                    x,
                    &scratch.h_snapshot[..n],
                    &scratch.c_snapshot[..n],
                    [&mut z_i[..n], &mut z_f[..n], &mut z_o[..n], &mut z_c[..n]],
                    [&mut g_i[..n], &mut g_f[..n], &mut g_o[..n], &mut g_c[..n]],
                    &mut scratch.state_c[l],
                    &mut scratch.m[..n],
                    &mut at[0],
                );
            }
            if !scratch.state_h[l].iter().all(|v| v.is_finite())
                || !scratch.state_c[l].iter().all(|v| v.is_finite())
            {
                return Err(TrainError::NonFinite { layer: l });
            }
        }
    }

    let top = model.layers.len() - 1;
    let logit = model
        .head
        .weights
        .row(0)
        .iter()
        .zip(&scratch.state_h[top])
        .map(|(a, b)| a * b)
        .sum::<f64>()
        + model.head.bias_value();
    Ok(sigmoid(logit))
}

/// Derivative helpers reused by the backward pass.
pub(crate) fn cell_output_derivative(activation: Activation, c: f64, m: f64) -> f64 {
    activate_derivative(activation, c, m)
}

pub(crate) const GATES: [usize; 4] = [GATE_INPUT, GATE_FORGET, GATE_OUTPUT, GATE_CANDIDATE];
