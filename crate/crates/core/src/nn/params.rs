//! Model parameters and their initialization.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::seeding::{derive_seed, salt_str};

use super::{Activation, ModelConfig};

/// Dense row-major matrix; vectors are `n x 1`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out += self * x`
    pub fn matvec_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, slot) in out.iter_mut().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            *slot += dot(row, x);
        }
    }

    /// `out += self^T * x`
    pub fn matvec_t_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (r, &xv) in x.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (slot, a) in out.iter_mut().zip(row) {
                *slot += a * xv;
            }
        }
    }

    /// `self += u * v^T`
    pub fn add_outer(&mut self, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (r, &uv) in u.iter().enumerate() {
            if uv == 0.0 {
                continue;
            }
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (slot, &vv) in row.iter_mut().zip(v) {
                *slot += uv * vv;
            }
        }
    }

    /// `self += x` elementwise.
    pub fn add_assign(&mut self, x: &[f64]) {
        debug_assert_eq!(self.data.len(), x.len());
        for (slot, &v) in self.data.iter_mut().zip(x) {
            *slot += v;
        }
    }
}

/// Dot product with four independent accumulators; the fixed summation order
/// keeps results deterministic while letting the FP chains overlap.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut chunks_a = a.chunks_exact(4);
    let mut chunks_b = b.chunks_exact(4);
    let mut acc = [0.0f64; 4];
    for (ca, cb) in (&mut chunks_a).zip(&mut chunks_b) {
        acc[0] += ca[0] * cb[0];
        acc[1] += ca[1] * cb[1];
        acc[2] += ca[2] * cb[2];
        acc[3] += ca[3] * cb[3];
    }
    let mut tail = 0.0;
    for (x, y) in chunks_a.remainder().iter().zip(chunks_b.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub const GATE_INPUT: usize = 0;
pub const GATE_FORGET: usize = 1;
pub const GATE_OUTPUT: usize = 2;
pub const GATE_CANDIDATE: usize = 3;
pub const GATE_NAMES: [&str; 4] = ["i", "f", "o", "c"];

/// Weights of one LSTM layer: per gate, input weights `w` (units x inputs),
/// recurrent weights `u` (units x units) and bias `b` (units x 1).
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerParams {
    pub w: [Tensor; 4],
    pub u: [Tensor; 4],
    pub b: [Tensor; 4],
}

impl LstmLayerParams {
    pub fn zeros(units: usize, inputs: usize) -> Self {
        Self {
            w: std::array::from_fn(|_| Tensor::zeros(units, inputs)),
            u: std::array::from_fn(|_| Tensor::zeros(units, units)),
            b: std::array::from_fn(|_| Tensor::zeros(units, 1)),
        }
    }

    pub fn units(&self) -> usize {
        self.w[0].rows
    }

    pub fn input_size(&self) -> usize {
        self.w[0].cols
    }
}

/// Final dense projection: `1 x units` weights and a scalar bias.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseHeadParams {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl DenseHeadParams {
    pub fn zeros(units: usize) -> Self {
        Self { weights: Tensor::zeros(1, units), bias: Tensor::zeros(1, 1) }
    }

    pub fn bias_value(&self) -> f64 {
        self.bias.data[0]
    }
}

/// Glorot-uniform bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn glorot_uniform(rows: usize, cols: usize, rng: &mut ChaCha20Rng) -> Tensor {
    // fan_in = inputs (cols), fan_out = units (rows)
    let bound = glorot_bound(cols, rows);
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor { rows, cols, data }
}

/// Random orthogonal matrix: Gaussian sample followed by modified
/// Gram-Schmidt on the rows.
fn orthogonal(n: usize, rng: &mut ChaCha20Rng) -> Tensor {
    let mut rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    for i in 0..n {
        for j in 0..i {
            let proj: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            let (done, rest) = rows.split_at_mut(i);
            for (v, q) in rest[0].iter_mut().zip(&done[j]) {
                *v -= proj * q;
            }
        }
        let norm: f64 = rows[i].iter().map(|v| v * v).sum::<f64>().sqrt();
        debug_assert!(norm > 0.0, "degenerate Gaussian sample");
        for v in &mut rows[i] {
            *v /= norm;
        }
    }
    Tensor { rows: n, cols: n, data: rows.into_iter().flatten().collect() }
}

/// Initializes all layer and head parameters deterministically from the seed:
/// input weights Glorot-uniform, recurrent weights orthogonal, biases zero
/// except the forget gate at 1.
pub fn init_params(config: &ModelConfig) -> (Vec<LstmLayerParams>, DenseHeadParams) {
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(config.seed, &[salt_str("init")]));
    let mut layers = Vec::with_capacity(config.layers.len());
    let mut inputs = config.feature_count;
    for spec in &config.layers {
        let units = spec.units;
        let mut layer = LstmLayerParams::zeros(units, inputs);
        for g in 0..4 {
            layer.w[g] = glorot_uniform(units, inputs, &mut rng);
        }
        for g in 0..4 {
            layer.u[g] = orthogonal(units, &mut rng);
        }
        layer.b[GATE_FORGET].data.fill(1.0);
        layers.push(layer);
        inputs = units;
    }
    let mut head = DenseHeadParams::zeros(inputs);
    head.weights = glorot_uniform(1, inputs, &mut rng);
    (layers, head)
}

/// Gradient accumulators shaped exactly like the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub layers: Vec<LstmLayerParams>,
    pub head: DenseHeadParams,
}

impl ModelGrads {
    pub fn zeros_like(layers: &[LstmLayerParams], head: &DenseHeadParams) -> Self {
        Self {
            layers: layers
                .iter()
                .map(|l| LstmLayerParams::zeros(l.units(), l.input_size()))
                .collect(),
            head: DenseHeadParams::zeros(head.weights.cols),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        collect_tensors(&self.layers, &self.head)
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        collect_tensors_mut(&mut self.layers, &mut self.head)
    }
}

pub(crate) fn collect_tensors<'a>(
    layers: &'a [LstmLayerParams],
    head: &'a DenseHeadParams,
) -> Vec<&'a Tensor> {
    let mut out = Vec::with_capacity(layers.len() * 12 + 2);
    for layer in layers {
        out.extend(layer.w.iter());
        out.extend(layer.u.iter());
        out.extend(layer.b.iter());
    }
    out.push(&head.weights);
    out.push(&head.bias);
    out
}

pub(crate) fn collect_tensors_mut<'a>(
    layers: &'a mut [LstmLayerParams],
    head: &'a mut DenseHeadParams,
) -> Vec<&'a mut Tensor> {
    let mut out = Vec::with_capacity(layers.len() * 12 + 2);
    for layer in layers {
        out.extend(layer.w.iter_mut());
        out.extend(layer.u.iter_mut());
        out.extend(layer.b.iter_mut());
    }
    out.push(&mut head.weights);
    out.push(&mut head.bias);
    out
}

/// Tensor names in [`collect_tensors`] order, used by the checkpoint format.
pub(crate) fn tensor_names(num_layers: usize) -> Vec<String> {
    let mut names = Vec::with_capacity(num_layers * 12 + 2);
    for l in 0..num_layers {
        for kind in ["w", "u", "b"] {
            for gate in GATE_NAMES {
                names.push(format!("layer{l}.{kind}.{gate}"));
            }
        }
    }
    names.push("head.w".into());
    names.push("head.b".into());
    names
}

/// Activation applied to a candidate/cell pre-activation.
pub(crate) fn activate(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Tanh => x.tanh(),
        Activation::Relu => x.max(0.0),
        Activation::Sigmoid => sigmoid(x),
    }
}

/// Derivative of the activation given the pre-activation `z` and the already
/// computed output `y = act(z)`.
pub(crate) fn activate_derivative(a: Activation, z: f64, y: f64) -> f64 {
    match a {
        Activation::Tanh => 1.0 - y * y,
        Activation::Relu => {
            if z > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Sigmoid => y * (1.0 - y),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;

    fn config(seed: u64) -> ModelConfig {
        ModelConfig {
            layers: vec![
                LayerSpec { units: 32, activation: Activation::Tanh, dropout: 0.1 },
                LayerSpec { units: 8, activation: Activation::Relu, dropout: 0.0 },
            ],
            learning_rate: 1e-3,
            window_size: 7,
            feature_count: 8,
            epochs: 1,
            batch_size: 4,
            seed,
            threshold: 0.5,
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let cfg = config(42);
        let (layers_a, head_a) = init_params(&cfg);
        let (layers_b, head_b) = init_params(&cfg);
        assert_eq!(layers_a, layers_b);
        assert_eq!(head_a, head_b);

        let (layers_c, _) = init_params(&config(43));
        assert_ne!(layers_a, layers_c);
    }

    #[test]
    fn forget_gate_bias_is_one() {
        let (layers, _) = init_params(&config(1));
        for layer in &layers {
            assert!(layer.b[GATE_FORGET].data.iter().all(|&v| v == 1.0));
            assert!(layer.b[GATE_INPUT].data.iter().all(|&v| v == 0.0));
            assert!(layer.b[GATE_OUTPUT].data.iter().all(|&v| v == 0.0));
            assert!(layer.b[GATE_CANDIDATE].data.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn glorot_samples_respect_bound() {
        // fan_in=8, fan_out=32 -> bound = sqrt(6/40)
        let expected = (6.0f64 / 40.0).sqrt();
        assert!((glorot_bound(8, 32) - 0.3872983346207417).abs() < 1e-15);
        let (layers, _) = init_params(&config(7));
        for gate in &layers[0].w {
            assert_eq!(gate.cols, 8);
            assert_eq!(gate.rows, 32);
            assert!(gate.data.iter().all(|v| v.abs() <= expected));
        }
    }

    #[test]
    fn recurrent_weights_are_orthogonal() {
        let (layers, _) = init_params(&config(3));
        let u = &layers[1].u[GATE_INPUT];
        let n = u.rows;
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = u.row(i).iter().zip(u.row(j)).map(|(a, b)| a * b).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-10, "row {i} . row {j} = {dot}");
            }
        }
    }

    #[test]
    fn matvec_and_outer_products() {
        let mut m = Tensor::zeros(2, 3);
        m.data = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut out = vec![0.0; 2];
        m.matvec_acc(&[1.0, 0.0, -1.0], &mut out);
        assert_eq!(out, vec![-2.0, -2.0]);

        let mut out_t = vec![0.0; 3];
        m.matvec_t_acc(&[1.0, 1.0], &mut out_t);
        assert_eq!(out_t, vec![5.0, 7.0, 9.0]);

        let mut o = Tensor::zeros(2, 2);
        o.add_outer(&[1.0, 2.0], &[3.0, 4.0]);
        assert_eq!(o.data, vec![3.0, 4.0, 6.0, 8.0]);
    }
}
