//! From-scratch multi-layer LSTM binary classifier: forward pass,
//! backpropagation through time, Adam optimization, dropout, checkpointing
//! and the training loop.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::features::WindowedDataset;
use crate::seeding::{derive_seed, salt_str};

mod adam;
mod backprop;
mod cell;
mod checkpoint;
mod params;

pub use adam::{adam_step, AdamParams, OptimizerState};
pub use backprop::{clip_global_norm, loss_and_gradients};
pub use cell::{lstm_cell_forward, CellCache, ForwardCaches, InferScratch};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, CHECKPOINT_MAGIC};
pub use params::{
    glorot_bound, init_params, DenseHeadParams, LstmLayerParams, ModelGrads, Tensor,
    GATE_CANDIDATE, GATE_FORGET, GATE_INPUT, GATE_OUTPUT,
};

/// Probabilities are clipped into `[BCE_CLIP, 1 - BCE_CLIP]` inside the loss.
pub const BCE_CLIP: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("dataset has {found} feature columns, model expects {expected}")]
    FeatureCount { expected: usize, found: usize },
    #[error("dataset window size {found} does not match model window size {expected}")]
    WindowSize { expected: usize, found: usize },
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("non-finite activation in layer {layer}")]
    NonFinite { layer: usize },
    #[error("threshold {0} must lie strictly inside (0, 1)")]
    InvalidThreshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LayerSpec {
    pub units: usize,
    pub activation: Activation,
    #[serde(default)]
    pub dropout: f64,
}

/// Model and training hyperparameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub layers: Vec<LayerSpec>,
    pub learning_rate: f64,
    pub window_size: usize,
    pub feature_count: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub threshold: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.layers.is_empty() {
            return Err(TrainError::Config("at least one layer is required".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.units == 0 {
                return Err(TrainError::Config(format!("layer {i} has zero units")));
            }
            if !(0.0..=0.5).contains(&layer.dropout) {
                return Err(TrainError::Config(format!(
                    "layer {i} dropout {} outside [0, 0.5]",
                    layer.dropout
                )));
            }
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(TrainError::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.window_size == 0 {
            return Err(TrainError::Config("window size must be at least 1".into()));
        }
        if self.feature_count == 0 {
            return Err(TrainError::Config("feature count must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be at least 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(TrainError::InvalidThreshold(self.threshold));
        }
        Ok(())
    }
}

/// LSTM stack plus dense sigmoid head.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    pub config: ModelConfig,
    pub(crate) layers: Vec<LstmLayerParams>,
    pub(crate) head: DenseHeadParams,
}

impl LstmModel {
    /// Initializes parameters deterministically from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let (layers, head) = init_params(&config);
        Ok(Self { config, layers, head })
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        layers: Vec<LstmLayerParams>,
        head: DenseHeadParams,
    ) -> Self {
        Self { config, layers, head }
    }

    pub fn layer_params(&self) -> &[LstmLayerParams] {
        &self.layers
    }

    pub fn head_params(&self) -> &DenseHeadParams {
        &self.head
    }

    /// All parameter tensors in checkpoint order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        params::collect_tensors(&self.layers, &self.head)
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        params::collect_tensors_mut(&mut self.layers, &mut self.head)
    }

    /// Inference-mode probability for one `window_size x feature_count` window.
    pub fn forward(&self, window: &[f64]) -> Result<f64, TrainError> {
        let expected = self.config.window_size * self.config.feature_count;
        if window.len() != expected {
            return Err(TrainError::FeatureCount {
                expected,
                found: window.len(),
            });
        }
        let mut scratch = InferScratch::new(self);
        cell::forward_infer(self, window, &mut scratch)
    }
}

/// Binary cross entropy with probability clipping.
pub fn bce_loss(p: f64, label: bool) -> f64 {
    let p = p.clamp(BCE_CLIP, 1.0 - BCE_CLIP);
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Bernoulli(1-rate) mask with inverted scaling, one factor per feature.
pub fn dropout_mask(width: usize, rate: f64, rng: &mut impl Rng) -> Vec<f64> {
    assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
    let scale = 1.0 / (1.0 - rate);
    (0..width)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { scale })
        .collect()
}

/// Masks a `rows.len()/width x width` input sequence with one shared
/// per-feature mask (inverted scaling). Identity in inference mode or at rate 0.
pub fn apply_dropout(
    rows: &[f64],
    width: usize,
    rate: f64,
    rng: &mut impl Rng,
    training: bool,
) -> Vec<f64> {
    assert_eq!(rows.len() % width, 0, "sequence length must be a multiple of width");
    if !training || rate == 0.0 {
        return rows.to_vec();
    }
    let mask = dropout_mask(width, rate, rng);
    rows.chunks(width)
        .flat_map(|chunk| chunk.iter().zip(&mask).map(|(v, m)| v * m))
        .collect()
}

/// Loss/accuracy of one epoch, on the training and validation sets.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub probability: f64,
    pub label: bool,
}

/// Inference metrics over a whole dataset at threshold 0.5.
fn evaluate_set(model: &LstmModel, dataset: &WindowedDataset) -> Result<(f64, f64), TrainError> {
    let mut scratch = InferScratch::new(model);
    let mut loss = 0.0;
    let mut correct = 0usize;
    for example in &dataset.examples {
        let p = cell::forward_infer(model, &example.window, &mut scratch)?;
        loss += bce_loss(p, example.label);
        if (p >= 0.5) == example.label {
            correct += 1;
        }
    }
    let n = dataset.examples.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

fn check_dataset(model: &LstmModel, dataset: &WindowedDataset) -> Result<(), TrainError> {
    if dataset.feature_count() != model.config.feature_count {
        return Err(TrainError::FeatureCount {
            expected: model.config.feature_count,
            found: dataset.feature_count(),
        });
    }
    if dataset.window_size != model.config.window_size {
        return Err(TrainError::WindowSize {
            expected: model.config.window_size,
            found: dataset.window_size,
        });
    }
    Ok(())
}

/// Incremental trainer: owns the model and optimizer state so tuner rounds
/// can resume where they stopped.
pub struct Trainer {
    pub model: LstmModel,
    pub opt: OptimizerState,
    pub epochs_done: usize,
}

impl Trainer {
    pub fn new(config: ModelConfig) -> Result<Self, TrainError> {
        let model = LstmModel::new(config)?;
        let opt = OptimizerState::for_model(&model);
        Ok(Self { model, opt, epochs_done: 0 })
    }

    /// Runs `epochs` epochs of shuffled mini-batch Adam updates; records
    /// inference-mode loss/accuracy on both sets after each epoch.
    pub fn run_epochs(
        &mut self,
        train: &WindowedDataset,
        val: &WindowedDataset,
        epochs: usize,
    ) -> Result<Vec<EpochMetrics>, TrainError> {
        if train.examples.is_empty() {
            return Err(TrainError::EmptyTrainSet);
        }
        check_dataset(&self.model, train)?;
        if !val.examples.is_empty() {
            check_dataset(&self.model, val)?;
        }
        let config = self.model.config.clone();
        let mut metrics = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let epoch = self.epochs_done;
            let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(
                config.seed,
                &[salt_str("epoch"), epoch as u64],
            ));
            let mut order: Vec<usize> = (0..train.examples.len()).collect();
            order.shuffle(&mut rng);
            for (batch_no, chunk) in order.chunks(config.batch_size).enumerate() {
                let batch: Vec<&crate::features::WindowedExample> =
                    chunk.iter().map(|&i| &train.examples[i]).collect();
                let (loss, mut grads) = loss_and_gradients(&self.model, &batch, Some(&mut rng))?;
                if !loss.is_finite() {
                    return Err(TrainError::NonFiniteLoss { epoch: epoch + 1, batch: batch_no });
                }
                clip_global_norm(&mut grads, 1.0);
                adam_step(&mut self.model, &grads, &mut self.opt, config.learning_rate);
            }
            self.epochs_done += 1;

            let (train_loss, train_acc) = evaluate_set(&self.model, train)?;
            let (val_loss, val_acc) = if val.examples.is_empty() {
                (None, None)
            } else {
                let (l, a) = evaluate_set(&self.model, val)?;
                (Some(l), Some(a))
            };
            metrics.push(EpochMetrics {
                epoch: self.epochs_done,
                train_loss,
                train_acc,
                val_loss,
                val_acc,
            });
        }
        Ok(metrics)
    }
}

/// Trains a fresh model for `config.epochs` epochs.
pub fn train(
    train_set: &WindowedDataset,
    val_set: &WindowedDataset,
    config: &ModelConfig,
) -> Result<(LstmModel, Vec<EpochMetrics>), TrainError> {
    let mut trainer = Trainer::new(config.clone())?;
    let metrics = trainer.run_epochs(train_set, val_set, config.epochs)?;
    Ok((trainer.model, metrics))
}

/// Inference-mode predictions; `label = probability >= threshold`.
pub fn predict(
    model: &LstmModel,
    dataset: &WindowedDataset,
    threshold: f64,
) -> Result<Vec<Prediction>, TrainError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(TrainError::InvalidThreshold(threshold));
    }
    check_dataset(model, dataset)?;
    let mut scratch = InferScratch::new(model);
    dataset
        .examples
        .iter()
        .map(|example| {
            let probability = cell::forward_infer(model, &example.window, &mut scratch)?;
            Ok(Prediction { probability, label: probability >= threshold })
        })
        .collect()
}

/// Writes `epoch,train_loss,train_acc,val_loss,val_acc`; absent validation
/// metrics become empty cells.
pub fn write_metrics_csv(metrics: &[EpochMetrics], writer: impl Write) -> std::io::Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])?;
    for m in metrics {
        csv.write_record([
            m.epoch.to_string(),
            m.train_loss.to_string(),
            m.train_acc.to_string(),
            m.val_loss.map(|v| v.to_string()).unwrap_or_default(),
            m.val_acc.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    csv.flush()
}

/// Inverse of [`write_metrics_csv`].
pub fn read_metrics_csv(reader: impl Read) -> Result<Vec<EpochMetrics>, csv::Error> {
    let mut csv = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for record in csv.records() {
        let record = record?;
        let parse_opt = |s: &str| -> Option<f64> {
            if s.trim().is_empty() {
                None
            } else {
                s.trim().parse().ok()
            }
        };
        out.push(EpochMetrics {
            epoch: record[0].trim().parse().unwrap_or(0),
            train_loss: record[1].trim().parse().unwrap_or(f64::NAN),
            train_acc: record[2].trim().parse().unwrap_or(f64::NAN),
            val_loss: parse_opt(&record[3]),
            val_acc: parse_opt(&record[4]),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::WindowedExample;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn config(layers: Vec<LayerSpec>, seed: u64) -> ModelConfig {
        ModelConfig {
            layers,
            learning_rate: 0.01,
            window_size: 3,
            feature_count: 2,
            epochs: 5,
            batch_size: 4,
            seed,
            threshold: 0.5,
        }
    }

    fn single_layer(seed: u64) -> ModelConfig {
        config(vec![LayerSpec { units: 4, activation: Activation::Tanh, dropout: 0.0 }], seed)
    }

    /// Separable toy set: positive windows hover around 0.8, negatives around 0.2.
    fn separable_dataset(count: usize, seed: u64, cfg: &ModelConfig) -> WindowedDataset {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let examples = (0..count)
            .map(|i| {
                let label = i % 2 == 0;
                let base = if label { 0.8 } else { 0.2 };
                WindowedExample {
                    window: (0..cfg.window_size * cfg.feature_count)
                        .map(|_| base + rand::Rng::gen_range(&mut rng, -0.05..0.05))
                        .collect(),
                    label,
                    tree_id: "T1".into(),
                    target_date: NaiveDate::from_ymd_opt(2015, 6, 1).unwrap(),
                }
            })
            .collect();
        WindowedDataset {
            examples,
            feature_names: vec!["a".into(), "b".into()],
            window_size: cfg.window_size,
        }
    }

    #[test]
    fn zero_initialized_head_outputs_half() {
        let cfg = single_layer(3);
        let model = LstmModel::new(cfg.clone()).unwrap();
        // Head weights are Glorot-initialized; zero them to check sigma(0).
        let mut model = model;
        model.head = DenseHeadParams::zeros(model.head.weights.cols);
        let window = vec![0.3; cfg.window_size * cfg.feature_count];
        assert_eq!(model.forward(&window).unwrap(), 0.5);
    }

    #[test]
    fn forward_stays_inside_open_unit_interval_and_is_deterministic() {
        let cfg = single_layer(9);
        let model = LstmModel::new(cfg.clone()).unwrap();
        let window: Vec<f64> = (0..cfg.window_size * cfg.feature_count)
            .map(|i| (i as f64) - 2.5)
            .collect();
        let p1 = model.forward(&window).unwrap();
        let p2 = model.forward(&window).unwrap();
        assert_eq!(p1, p2);
        assert!(p1 > 0.0 && p1 < 1.0);
    }

    #[test]
    fn bce_loss_known_values() {
        assert!((bce_loss(0.5, true) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_loss(1.0 - 1e-9, true) < 2e-7); // post-clip, approx 0
        assert!((bce_loss(1e-9, true) - 16.11809565095832).abs() < 1e-12); // clip engaged
    }

    #[test]
    fn dropout_rules() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let rows = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(apply_dropout(&rows, 2, 0.0, &mut rng, true), rows);
        assert_eq!(apply_dropout(&rows, 2, 0.5, &mut rng, false), rows);

        // Shared mask across timesteps: each column is either zeroed at every
        // timestep or scaled by 2 at every timestep.
        let mut any_dropped = false;
        for seed in 0..20 {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let masked = apply_dropout(&rows, 2, 0.5, &mut rng, true);
            for col in 0..2 {
                let dropped = masked[col] == 0.0;
                any_dropped |= dropped;
                for t in 0..3 {
                    let original = rows[t * 2 + col];
                    let value = masked[t * 2 + col];
                    if dropped {
                        assert_eq!(value, 0.0);
                    } else {
                        assert!((value - original * 2.0).abs() < 1e-15);
                    }
                }
            }
        }
        assert!(any_dropped);
    }

    #[test]
    fn training_overfits_separable_data() {
        let cfg = single_layer(7);
        let data = separable_dataset(16, 3, &cfg);
        let (model, metrics) = train(&data, &data, &cfg).unwrap();
        assert_eq!(metrics.len(), cfg.epochs);
        let preds = predict(&model, &data, 0.5).unwrap();
        let correct = preds
            .iter()
            .zip(&data.examples)
            .filter(|(p, e)| p.label == e.label)
            .count();
        assert!(correct >= 14, "only {correct}/16 correct");
    }

    #[test]
    fn zero_epochs_returns_initialized_model() {
        let cfg = ModelConfig { epochs: 0, ..single_layer(4) };
        let data = separable_dataset(8, 1, &cfg);
        let (model, metrics) = train(&data, &data, &cfg).unwrap();
        assert!(metrics.is_empty());
        assert_eq!(model, LstmModel::new(cfg).unwrap());
    }

    #[test]
    fn same_seed_gives_identical_trajectories() {
        let cfg = ModelConfig {
            layers: vec![LayerSpec { units: 4, activation: Activation::Tanh, dropout: 0.2 }],
            ..single_layer(12)
        };
        let data = separable_dataset(12, 5, &cfg);
        let (model_a, metrics_a) = train(&data, &data, &cfg).unwrap();
        let (model_b, metrics_b) = train(&data, &data, &cfg).unwrap();
        assert_eq!(metrics_a, metrics_b);
        assert_eq!(model_a, model_b);
    }

    #[test]
    fn first_adam_step_decreases_first_batch_loss() {
        let cfg = single_layer(21);
        let data = separable_dataset(8, 9, &cfg);
        let mut model = LstmModel::new(cfg.clone()).unwrap();
        let batch: Vec<&WindowedExample> = data.examples.iter().collect();
        let (loss_before, mut grads) = loss_and_gradients(&model, &batch, None).unwrap();
        clip_global_norm(&mut grads, 1.0);
        let mut opt = OptimizerState::for_model(&model);
        adam_step(&mut model, &grads, &mut opt, 0.001);
        let (loss_after, _) = loss_and_gradients(&model, &batch, None).unwrap();
        assert!(loss_after < loss_before, "{loss_after} !< {loss_before}");
    }

    #[test]
    fn duplicated_batch_loss_equals_single_example_loss() {
        let cfg = single_layer(2);
        let model = LstmModel::new(cfg.clone()).unwrap();
        let data = separable_dataset(1, 8, &cfg);
        let single: Vec<&WindowedExample> = data.examples.iter().collect();
        let dup: Vec<&WindowedExample> = vec![&data.examples[0]; 5];
        let (loss_single, _) = loss_and_gradients(&model, &single, None).unwrap();
        let (loss_dup, _) = loss_and_gradients(&model, &dup, None).unwrap();
        assert!((loss_single - loss_dup).abs() < 1e-15);
    }

    #[test]
    fn predict_threshold_rules() {
        let cfg = single_layer(5);
        let model = LstmModel::new(cfg.clone()).unwrap();
        let data = separable_dataset(6, 2, &cfg);
        assert!(matches!(
            predict(&model, &data, 1.0),
            Err(TrainError::InvalidThreshold(_))
        ));
        assert!(matches!(
            predict(&model, &data, 0.0),
            Err(TrainError::InvalidThreshold(_))
        ));
        let low = predict(&model, &data, 0.1).unwrap();
        let high = predict(&model, &data, 0.9).unwrap();
        // raising the threshold never turns a false into a true
        for (lo, hi) in low.iter().zip(&high) {
            assert!(!(hi.label && !lo.label));
        }
        // boundary: probability == threshold counts as true
        let boundary = predict(&model, &data, low[0].probability.clamp(0.01, 0.99));
        if let Ok(preds) = boundary {
            assert!(preds[0].label || preds[0].probability < low[0].probability);
        }
    }

    #[test]
    fn forward_is_permutation_invariant_across_the_batch() {
        let cfg = single_layer(31);
        let model = LstmModel::new(cfg.clone()).unwrap();
        let mut data = separable_dataset(9, 4, &cfg);
        let forward_preds: Vec<f64> = predict(&model, &data, 0.5)
            .unwrap()
            .iter()
            .map(|p| p.probability)
            .collect();
        data.examples.reverse();
        let reversed_preds: Vec<f64> = predict(&model, &data, 0.5)
            .unwrap()
            .iter()
            .map(|p| p.probability)
            .collect();
        for (a, b) in forward_preds.iter().zip(reversed_preds.iter().rev()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn feature_count_mismatch_is_rejected() {
        let cfg = single_layer(5);
        let model = LstmModel::new(cfg.clone()).unwrap();
        let mut data = separable_dataset(2, 2, &cfg);
        data.feature_names.push("extra".into());
        assert!(matches!(
            predict(&model, &data, 0.5),
            Err(TrainError::FeatureCount { .. })
        ));
    }

    #[test]
    fn metrics_csv_round_trips() {
        let metrics = vec![
            EpochMetrics { epoch: 1, train_loss: 0.5, train_acc: 0.75, val_loss: Some(0.6), val_acc: Some(0.7) },
            EpochMetrics { epoch: 2, train_loss: 0.25, train_acc: 0.875, val_loss: None, val_acc: None },
        ];
        let mut bytes = Vec::new();
        write_metrics_csv(&metrics, &mut bytes).unwrap();
        let parsed = read_metrics_csv(bytes.as_slice()).unwrap();
        assert_eq!(parsed, metrics);
    }

    proptest! {
        /// With a tanh candidate and |c_prev| <= B, |c_t| <= B + 1.
        #[test]
        fn cell_state_respects_convexity_bound(
            seed in 0u64..200,
            c0 in -3.0f64..3.0,
            x in proptest::collection::vec(-2.0f64..2.0, 2),
        ) {
            let cfg = config(vec![LayerSpec { units: 1, activation: Activation::Tanh, dropout: 0.0 }], seed);
            let model = LstmModel::new(cfg).unwrap();
            let bound = c0.abs();
            let (_, c, _) = lstm_cell_forward(&x, &[0.1], &[c0], &model.layers[0], Activation::Tanh).unwrap();
            prop_assert!(c[0].abs() <= bound + 1.0 + 1e-12);
        }
    }
}
