//! Mini-batch SGD training loop, evaluation and prediction.

use std::io::Write;

use rand::seq::SliceRandom;

use super::layers::{softmax, Exec, Mode};
use super::network::{sgd_step, InputShape, NetworkConfig, NetworkState};
use super::{CnnError, Scalar, Tensor};
use crate::rng::substream;
use crate::selection::ClassLabel;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// `Exec::Serial` is bit-deterministic for a fixed seed.
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 200, batch_size: 100, learning_rate: 0.01, seed: 0, exec: Exec::Serial }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    /// Accuracy on the training passes themselves (dropout active).
    pub train_acc: f64,
    pub test_acc: f64,
}

pub const METRICS_CSV_HEADER: &str = "epoch,train_loss,train_acc,test_acc";

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!("{},{:.6},{:.6},{:.6}", self.epoch, self.train_loss, self.train_acc, self.test_acc)
    }
}

pub fn write_metrics_csv<W: Write>(mut out: W, metrics: &[EpochMetrics]) -> std::io::Result<()> {
    writeln!(out, "{METRICS_CSV_HEADER}")?;
    for m in metrics {
        writeln!(out, "{}", m.csv_row())?;
    }
    Ok(())
}

/// Borrowed view of flattened `f32` samples and their labels.
#[derive(Debug, Clone, Copy)]
pub struct LabeledSet<'a> {
    pub inputs: &'a [f32],
    pub labels: &'a [u32],
    pub shape: InputShape,
}

impl<'a> LabeledSet<'a> {
    pub fn new(inputs: &'a [f32], labels: &'a [u32], shape: InputShape) -> Result<Self, CnnError> {
        if inputs.len() != labels.len() * shape.len() {
            return Err(CnnError::ShapeMismatch(format!(
                "{} input values for {} samples of {} values",
                inputs.len(),
                labels.len(),
                shape.len()
            )));
        }
        Ok(Self { inputs, labels, shape })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn item(&self, i: usize) -> &'a [f32] {
        let n = self.shape.len();
        &self.inputs[i * n..(i + 1) * n]
    }

    fn batch<T: Scalar>(&self, indices: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let mut data = Vec::with_capacity(indices.len() * self.shape.len());
        for &i in indices {
            data.extend(self.item(i).iter().map(|&v| T::from_f32_lossy(v)));
        }
        let s = self.shape;
        let x = Tensor::from_vec([indices.len(), s.channels, s.height, s.width], data).expect("batch shape");
        (x, indices.iter().map(|&i| self.labels[i] as usize).collect())
    }
}

fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Top-1 accuracy of `state` on `indices` (eval mode).
pub fn accuracy<T: Scalar>(state: &NetworkState<T>, data: &LabeledSet, indices: &[usize], batch_size: usize) -> Result<f64, CnnError> {
    if indices.is_empty() {
        return Ok(0.0);
    }
    let net = state.network();
    let mut correct = 0;
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, labels) = data.batch::<T>(chunk);
        let logits = net.logits(&x)?;
        correct += labels.iter().enumerate().filter(|&(b, &l)| argmax(logits.item(b)) == l).count();
    }
    Ok(correct as f64 / indices.len() as f64)
}

/// Trains a freshly initialized network. `on_epoch` sees each epoch's
/// metrics as soon as they are available.
pub fn train<T: Scalar>(
    data: &LabeledSet,
    train_idx: &[usize],
    test_idx: &[usize],
    net_cfg: NetworkConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<(NetworkState<T>, Vec<EpochMetrics>), CnnError> {
    if cfg.batch_size == 0 {
        return Err(CnnError::InvalidConfig("batch size must be positive".into()));
    }
    if !(cfg.learning_rate.is_finite() && cfg.learning_rate >= 0.0) {
        return Err(CnnError::InvalidConfig(format!("learning rate {}", cfg.learning_rate)));
    }
    if let Some(&label) = data.labels.iter().find(|&&l| l as usize >= net_cfg.classes) {
        return Err(CnnError::LabelOutOfRange { label: label as usize, classes: net_cfg.classes });
    }
    if let Some(&i) = train_idx.iter().chain(test_idx).find(|&&i| i >= data.len()) {
        return Err(CnnError::ShapeMismatch(format!("sample index {i} beyond {} samples", data.len())));
    }

    let mut state = NetworkState::<T>::new(net_cfg, data.shape, &mut substream(cfg.seed, 0))?;
    let mut shuffle_rng = substream(cfg.seed, 1);
    let mut dropout_rng = substream(cfg.seed, 2);
    let lr = T::from_f64(cfg.learning_rate).expect("finite learning rate");
    let mut order = train_idx.to_vec();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, labels) = data.batch::<T>(chunk);
            let net = state.network().with_exec(cfg.exec);
            let (loss, grads, logits) = net.loss_and_grads(&x, &labels, Mode::Train, &mut dropout_rng)?;
            loss_sum += loss.to_f64().expect("finite loss") * chunk.len() as f64;
            correct += labels.iter().enumerate().filter(|&(b, &l)| argmax(logits.item(b)) == l).count();
            sgd_step(&mut state, &grads, lr);
        }
        let seen = order.len().max(1) as f64;
        let metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / seen,
            train_acc: correct as f64 / seen,
            test_acc: accuracy(&state, data, test_idx, cfg.batch_size)?,
        };
        on_epoch(&metrics);
        history.push(metrics);
    }
    Ok((state, history))
}

/// Most likely class and the full probability vector for one sample.
pub fn predict<T: Scalar>(state: &NetworkState<T>, planes: &[f32]) -> Result<(ClassLabel, Vec<f64>), CnnError> {
    let s = state.input;
    if planes.len() != s.len() {
        return Err(CnnError::ShapeMismatch(format!("sample has {} values, network expects {}", planes.len(), s.len())));
    }
    let x = Tensor::from_vec([1, s.channels, s.height, s.width], planes.iter().map(|&v| T::from_f32_lossy(v)).collect())?;
    let logits = state.network().logits(&x)?;
    let probs: Vec<f64> = softmax(logits.item(0)).into_iter().map(|p| p.to_f64().expect("finite")).collect();
    Ok((ClassLabel(argmax(&probs) as u64), probs))
}

/// Predicted class for each of `n` samples stored back to back.
pub fn predict_batch<T: Scalar>(state: &NetworkState<T>, planes: &[f32]) -> Result<Vec<ClassLabel>, CnnError> {
    let s = state.input;
    if s.is_empty() || !planes.len().is_multiple_of(s.len()) {
        return Err(CnnError::ShapeMismatch(format!("{} values is not a whole number of samples", planes.len())));
    }
    let n = planes.len() / s.len();
    let x = Tensor::from_vec([n, s.channels, s.height, s.width], planes.iter().map(|&v| T::from_f32_lossy(v)).collect())?;
    let logits = state.network().logits(&x)?;
    Ok((0..n).map(|b| ClassLabel(argmax(logits.item(b)) as u64)).collect())
}
