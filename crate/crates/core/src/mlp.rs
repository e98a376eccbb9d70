//! Dense classifier trained from scratch.
//!
//! Rectifier hidden layers, a softmax output, sparse categorical
//! cross-entropy, Adam, and a reduce-on-plateau learning-rate schedule that
//! watches validation accuracy.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{QpfError, Result};

/// Hidden-layer widths for 0 to 3 hidden layers.
pub const LADDERS: [&[usize]; 4] = [&[], &[512], &[512, 256], &[512, 256, 128]];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpArchitecture {
    pub input_size: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
}

impl MlpArchitecture {
    /// One of the fixed ladders.
    pub fn new(input_size: usize, hidden: Vec<usize>, classes: usize) -> Result<Self> {
        if !LADDERS.iter().any(|l| *l == hidden.as_slice()) {
            return Err(QpfError::UnsupportedLadder(hidden));
        }
        Self::scaled(input_size, hidden, classes)
    }

    /// The ladder with `depth` hidden layers.
    pub fn with_depth(input_size: usize, depth: usize, classes: usize) -> Result<Self> {
        let ladder = LADDERS
            .get(depth)
            .ok_or_else(|| QpfError::Config(format!("depth {depth} not in 0..=3")))?;
        Self::new(input_size, ladder.to_vec(), classes)
    }

    /// Any widths; used for shrunken copies of the ladders.
    pub fn scaled(input_size: usize, hidden: Vec<usize>, classes: usize) -> Result<Self> {
        if input_size == 0 || classes == 0 || hidden.contains(&0) {
            return Err(QpfError::Shape("layer widths must be positive".into()));
        }
        Ok(MlpArchitecture {
            input_size,
            hidden,
            classes,
        })
    }

    pub fn depth(&self) -> usize {
        self.hidden.len()
    }

    /// `(fan_in, fan_out)` per dense layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_size];
        widths.extend(&self.hidden);
        widths.push(self.classes);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `fan_in × fan_out`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m_w: Array2<f64>,
    v_w: Array2<f64>,
    m_b: Array1<f64>,
    v_b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    arch: MlpArchitecture,
    layers: Vec<Dense>,
    moments: Vec<Moments>,
    step: u64,
}

/// Gradients laid out like [`MlpModel::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

impl MlpModel {
    /// Glorot-uniform weights from `seed`, zero biases.
    pub fn new(arch: MlpArchitecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Dense {
                    weights: Array2::from_shape_simple_fn((fan_in, fan_out), || {
                        rng.gen_range(-limit..limit)
                    }),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Self::from_layers(arch, layers)
    }

    pub fn from_layers(arch: MlpArchitecture, layers: Vec<Dense>) -> Self {
        let moments = layers
            .iter()
            .map(|l| Moments {
                m_w: Array2::zeros(l.weights.raw_dim()),
                v_w: Array2::zeros(l.weights.raw_dim()),
                m_b: Array1::zeros(l.bias.len()),
                v_b: Array1::zeros(l.bias.len()),
            })
            .collect();
        MlpModel {
            arch,
            layers,
            moments,
            step: 0,
        }
    }

    pub fn architecture(&self) -> &MlpArchitecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.arch.input_size {
            return Err(QpfError::Shape(format!(
                "input has {} columns, model expects {}",
                x.ncols(),
                self.arch.input_size
            )));
        }
        Ok(())
    }

    /// Pre-activations of the output layer plus every layer input.
    fn forward_cached(&self, x: ArrayView2<f64>) -> (Vec<Array2<f64>>, Array2<f64>) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut act = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = act.dot(&layer.weights);
            z += &layer.bias;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(std::mem::replace(&mut act, z));
        }
        (inputs, act)
    }

    pub fn logits(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        Ok(self.forward_cached(x).1)
    }

    /// Class probabilities, one row per input.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut z = self.logits(x)?;
        softmax_rows_inplace(&mut z);
        Ok(z)
    }

    fn check_labels(&self, labels: &[usize], rows: usize) -> Result<()> {
        if labels.len() != rows {
            return Err(QpfError::Shape(format!(
                "{} labels for {} rows",
                labels.len(),
                rows
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= self.arch.classes) {
            return Err(QpfError::LabelOutOfRange {
                label,
                classes: self.arch.classes,
            });
        }
        Ok(())
    }

    /// Mean cross-entropy over the batch and its gradient for every parameter.
    pub fn loss_and_grad(&self, x: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Gradients)> {
        self.check_input(&x)?;
        self.check_labels(labels, x.nrows())?;
        let n = x.nrows() as f64;
        let (inputs, mut delta) = self.forward_cached(x);

        let mut loss = 0.0;
        for (mut row, &label) in delta.outer_iter_mut().zip(labels) {
            let lse = log_sum_exp(row.view());
            loss += lse - row[label];
            row.mapv_inplace(|z| (z - lse).exp());
            row[label] -= 1.0;
        }
        delta /= n;

        let mut grads = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let input = &inputs[i];
            let gw = input.t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut upstream = delta.dot(&self.layers[i].weights.t());
                // the stored input is the rectified activation, zero exactly where the unit was off
                Zip::from(&mut upstream).and(input).for_each(|g, &a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
                delta = upstream;
            }
            grads.push(Dense {
                weights: gw,
                bias: gb,
            });
        }
        grads.reverse();
        Ok((loss / n, Gradients { layers: grads }))
    }

    /// One bias-corrected Adam update.
    pub fn adam_step(&mut self, grads: &Gradients, lr: f64, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let (b1, b2, eps) = (cfg.beta1, cfg.beta2, cfg.epsilon);
        for ((layer, m), g) in self.layers.iter_mut().zip(&mut self.moments).zip(&grads.layers) {
            Zip::from(&mut layer.weights)
                .and(&mut m.m_w)
                .and(&mut m.v_w)
                .and(&g.weights)
                .for_each(|w, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
            Zip::from(&mut layer.bias)
                .and(&mut m.m_b)
                .and(&mut m.v_b)
                .and(&g.bias)
                .for_each(|w, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }

    /// Predicted class per row; ties go to the lowest index.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(x.nrows());
        for start in (0..x.nrows()).step_by(1024) {
            let end = (start + 1024).min(x.nrows());
            let probs = self.forward(x.slice(s![start..end, ..]))?;
            out.extend(probs.outer_iter().map(|row| argmax(row.as_slice().unwrap())));
        }
        Ok(out)
    }

    /// Fraction of rows whose arg-max class equals the label.
    pub fn evaluate(&self, x: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
        if labels.len() != x.nrows() {
            return Err(QpfError::Shape(format!(
                "{} labels for {} rows",
                labels.len(),
                x.nrows()
            )));
        }
        if labels.is_empty() {
            return Ok(0.0);
        }
        let pred = self.predict(x)?;
        let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / labels.len() as f64)
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn log_sum_exp(row: ndarray::ArrayView1<f64>) -> f64 {
    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + row.fold(0.0, |acc, &z| acc + (z - m).exp()).ln()
}

/// Row-wise softmax, stabilized by subtracting the row maximum.
pub fn softmax_rows_inplace(z: &mut Array2<f64>) {
    for mut row in z.outer_iter_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let total = row.sum();
        row /= total;
    }
}

/// Mean `−ln p[label]` for probability rows.
pub fn sparse_cross_entropy(probs: ArrayView2<f64>, labels: &[usize]) -> f64 {
    let total: f64 = probs
        .outer_iter()
        .zip(labels)
        .map(|(row, &l)| -row[l].ln())
        .sum();
    total / labels.len() as f64
}

/// Multiplies the learning rate when the monitored metric stops improving.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    best: f64,
    wait: usize,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize, min_lr: f64) -> Result<Self> {
        if !(factor > 0.0 && factor < 1.0) {
            return Err(QpfError::Config(format!("plateau factor {factor} not in (0, 1)")));
        }
        if patience == 0 {
            return Err(QpfError::Config("patience must be positive".into()));
        }
        Ok(PlateauScheduler {
            factor,
            patience,
            min_lr,
            best: f64::NEG_INFINITY,
            wait: 0,
        })
    }

    /// Feeds one epoch's metric; returns true if `lr` was reduced.
    pub fn step(&mut self, metric: f64, lr: &mut f64) -> bool {
        if metric > self.best {
            self.best = metric;
            self.wait = 0;
            return false;
        }
        self.wait += 1;
        if self.wait < self.patience {
            return false;
        }
        self.wait = 0;
        if *lr > self.min_lr {
            *lr = (*lr * self.factor).max(self.min_lr);
            true
        } else {
            false
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub min_lr: f64,
    /// Drives the per-epoch shuffles.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 124,
            learning_rate: 1e-3,
            adam: AdamConfig::default(),
            plateau_patience: 15,
            plateau_factor: 0.1,
            min_lr: 1e-7,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(QpfError::Config("epochs and batch size must be positive".into()));
        }
        PlateauScheduler::new(self.plateau_factor, self.plateau_patience, self.min_lr).map(|_| ())
    }
}

/// Flattened inputs with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
}

impl FeatureSet {
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(QpfError::Shape(format!(
                "{} rows but {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        Ok(FeatureSet { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
    /// The scheduler cut the rate at the end of this epoch.
    pub lr_reduced: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub fn max_val_acc(&self) -> f64 {
        self.epochs.iter().map(|e| e.val_acc).fold(0.0, f64::max)
    }

    pub fn final_val_acc(&self) -> f64 {
        self.epochs.last().map_or(0.0, |e| e.val_acc)
    }

    /// Mean validation accuracy of the final `n` epochs (all, if fewer).
    pub fn last_n_mean(&self, n: usize) -> f64 {
        let tail = &self.epochs[self.epochs.len().saturating_sub(n)..];
        if tail.is_empty() {
            return 0.0;
        }
        tail.iter().map(|e| e.val_acc).sum::<f64>() / tail.len() as f64
    }

    pub fn reduction_epochs(&self) -> Vec<usize> {
        self.epochs
            .iter()
            .filter(|e| e.lr_reduced)
            .map(|e| e.epoch)
            .collect()
    }

    /// `epoch,train_loss,val_acc,lr`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["epoch", "train_loss", "val_acc", "lr"])?;
        for e in &self.epochs {
            csv.write_record([
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.val_acc.to_string(),
                e.lr.to_string(),
            ])?;
        }
        csv.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Mini-batch training with epoch-end validation and plateau scheduling.
pub fn train(
    model: &mut MlpModel,
    train_set: &FeatureSet,
    val_set: &FeatureSet,
    cfg: &TrainConfig,
) -> Result<TrainingHistory> {
    cfg.validate()?;
    model.check_input(&train_set.inputs.view())?;
    model.check_input(&val_set.inputs.view())?;
    model.check_labels(&train_set.labels, train_set.len())?;
    model.check_labels(&val_set.labels, val_set.len())?;
    if train_set.is_empty() {
        return Err(QpfError::EmptyDataset);
    }

    let mut scheduler = PlateauScheduler::new(cfg.plateau_factor, cfg.plateau_patience, cfg.min_lr)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut lr = cfg.learning_rate;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = TrainingHistory::default();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x = train_set.inputs.select(Axis(0), batch);
            let y: Vec<usize> = batch.iter().map(|&i| train_set.labels[i]).collect();
            let (loss, grads) = model.loss_and_grad(x.view(), &y)?;
            model.adam_step(&grads, lr, &cfg.adam);
            loss_sum += loss * batch.len() as f64;
        }
        let val_acc = model.evaluate(val_set.inputs.view(), &val_set.labels)?;
        let used = lr;
        let lr_reduced = scheduler.step(val_acc, &mut lr);
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_acc,
            lr: used,
            lr_reduced,
        });
    }
    Ok(history)
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"QPFM";
const CHECKPOINT_VERSION: u8 = 1;

/// Writes `QPFM`, version, the layer widths, then f32 LE parameters layer by
/// layer (weights row-major, then biases).
pub fn save_checkpoint(model: &MlpModel, path: &Path) -> Result<()> {
    let arch = &model.arch;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.push(CHECKPOINT_VERSION);
    buf.push(arch.hidden.len() as u8);
    buf.extend_from_slice(&[0, 0]);
    buf.extend_from_slice(&(arch.input_size as u32).to_le_bytes());
    for &h in &arch.hidden {
        buf.extend_from_slice(&(h as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(arch.classes as u32).to_le_bytes());
    for layer in &model.layers {
        for &v in layer.weights.iter().chain(layer.bias.iter()) {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let mut w = BufWriter::new(File::create(path).map_err(|e| QpfError::io(path, e))?);
    w.write_all(&buf)
        .and_then(|_| w.flush())
        .map_err(|e| QpfError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<MlpModel> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| QpfError::io(path, e))?;
    let truncated = |needed: usize| QpfError::Truncated {
        path: path.to_path_buf(),
        needed,
        found: bytes.len(),
    };
    if bytes.len() < 8 {
        return Err(truncated(8));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC || bytes[4] != CHECKPOINT_VERSION {
        return Err(QpfError::Format {
            path: path.to_path_buf(),
            reason: "not a version-1 QPFM checkpoint".into(),
        });
    }
    let n_hidden = bytes[5] as usize;
    let mut at = 8;
    let next_u32 = |at: &mut usize| -> Result<usize> {
        let b = bytes.get(*at..*at + 4).ok_or_else(|| truncated(*at + 4))?;
        *at += 4;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    };
    let input = next_u32(&mut at)?;
    let hidden = (0..n_hidden)
        .map(|_| next_u32(&mut at))
        .collect::<Result<Vec<_>>>()?;
    let classes = next_u32(&mut at)?;
    let arch = MlpArchitecture::scaled(input, hidden, classes)?;

    let mut layers = Vec::new();
    for (fan_in, fan_out) in arch.layer_shapes() {
        let n = fan_in * fan_out + fan_out;
        let end = at + 4 * n;
        let chunk = bytes.get(at..end).ok_or_else(|| truncated(end))?;
        let vals: Vec<f64> = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        layers.push(Dense {
            weights: Array2::from_shape_vec((fan_in, fan_out), vals[..fan_in * fan_out].to_vec())
                .expect("sized above"),
            bias: Array1::from(vals[fan_in * fan_out..].to_vec()),
        });
        at = end;
    }
    Ok(MlpModel::from_layers(arch, layers))
}
