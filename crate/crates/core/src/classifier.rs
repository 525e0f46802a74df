//! Single-layer softmax perceptron trained with SGD on cross-entropy, plus
//! the per-class train/test splitter and accuracy evaluation.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One labeled feature row. `label` indexes the class in `0..class_count`.
#[derive(Clone, PartialEq, Debug)]
pub struct Sample {
    pub label: u32,
    pub features: Vec<f64>,
}

/// Per-class shuffle-and-split parameters.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct SplitSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            n_train: 20,
            n_test: 5,
            seed: 3,
        }
    }
}

/// Training parameters. Weights start at zero, so the whole run is a pure
/// function of `(train set, spec)`.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct TrainSpec {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 0.01,
            batch_size: 1,
            seed: 4,
        }
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig("learning_rate must be finite".into()));
        }
        Ok(())
    }
}

/// Shuffles each class with a `ChaCha8Rng` seeded by `spec.seed` (classes in
/// slice order) and puts the first `n_train` samples of each class into the
/// training set, the rest into the test set. Every class must hold exactly
/// `n_train + n_test` samples.
pub fn split(per_class: &[Vec<Sample>], spec: &SplitSpec) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let expected = spec.n_train + spec.n_test;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, samples) in per_class.iter().enumerate() {
        if samples.len() != expected {
            return Err(Error::ClassCardinality {
                label: class as u32,
                expected,
                found: samples.len(),
            });
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);
        for (i, &idx) in order.iter().enumerate() {
            if i < spec.n_train {
                train.push(samples[idx].clone());
            } else {
                test.push(samples[idx].clone());
            }
        }
    }
    Ok((train, test))
}

/// Linear readout: `class_count x dim` weights plus biases.
#[derive(Clone, PartialEq, Debug)]
pub struct PerceptronModel {
    pub class_count: usize,
    pub dim: usize,
    /// Row-major `class_count x dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl PerceptronModel {
    pub fn zeros(class_count: usize, dim: usize) -> Self {
        Self {
            class_count,
            dim,
            weights: vec![0.0; class_count * dim],
            bias: vec![0.0; class_count],
        }
    }

    fn logits(&self, features: &[f64]) -> Vec<f64> {
        let mut logits = self.bias.clone();
        for (k, logit) in logits.iter_mut().enumerate() {
            let row = &self.weights[k * self.dim..(k + 1) * self.dim];
            *logit += row.iter().zip(features).map(|(w, x)| w * x).sum::<f64>();
        }
        logits
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Class probabilities `softmax(W x + b)`.
pub fn forward(model: &PerceptronModel, features: &[f64]) -> Result<Vec<f64>> {
    if features.len() != model.dim {
        return Err(Error::InvalidConfig(format!(
            "feature dim {} does not match model dim {}",
            features.len(),
            model.dim
        )));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("classifier input".into()));
    }
    Ok(softmax(&model.logits(features)))
}

/// Argmax class; ties break toward the lowest class index.
pub fn predict(model: &PerceptronModel, features: &[f64]) -> Result<usize> {
    let probabilities = forward(model, features)?;
    let mut best = 0;
    for (k, &p) in probabilities.iter().enumerate() {
        if p > probabilities[best] {
            best = k;
        }
    }
    Ok(best)
}

/// Model plus the mean cross-entropy per epoch observed during training.
#[derive(Clone, PartialEq, Debug)]
pub struct TrainReport {
    pub model: PerceptronModel,
    pub epoch_losses: Vec<f64>,
}

/// Trains by mini-batch SGD on cross-entropy for exactly `spec.epochs`
/// epochs (no early stopping), reshuffling the sample order every epoch from
/// one `ChaCha8Rng` seeded with `spec.seed`. Returns the final-epoch model.
pub fn train(samples: &[Sample], spec: &TrainSpec, class_count: usize) -> Result<TrainReport> {
    spec.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    if class_count < 2 {
        return Err(Error::InvalidConfig("need at least two classes".into()));
    }
    let dim = samples[0].features.len();
    for (i, s) in samples.iter().enumerate() {
        if s.features.len() != dim {
            return Err(Error::InvalidConfig(format!(
                "sample {i} has dim {}, expected {dim}",
                s.features.len()
            )));
        }
        if (s.label as usize) >= class_count {
            return Err(Error::InvalidConfig(format!(
                "sample {i} has label {} outside 0..{class_count}",
                s.label
            )));
        }
        if s.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("features of sample {i}")));
        }
    }

    let mut model = PerceptronModel::zeros(class_count, dim);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut grad_w = vec![0.0f64; class_count * dim];
    let mut grad_b = vec![0.0f64; class_count];
    let mut epoch_losses = Vec::with_capacity(spec.epochs);

    for epoch in 0..spec.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for (batch_index, batch) in order.chunks(spec.batch_size).enumerate() {
            grad_w.iter_mut().for_each(|g| *g = 0.0);
            grad_b.iter_mut().for_each(|g| *g = 0.0);
            for &idx in batch {
                let sample = &samples[idx];
                let probabilities = softmax(&model.logits(&sample.features));
                let loss = -probabilities[sample.label as usize].max(1e-300).ln();
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "loss at epoch {epoch}, batch {batch_index}"
                    )));
                }
                epoch_loss += loss;
                for k in 0..class_count {
                    let delta = probabilities[k] - if k == sample.label as usize { 1.0 } else { 0.0 };
                    grad_b[k] += delta;
                    let row = &mut grad_w[k * dim..(k + 1) * dim];
                    for (g, &x) in row.iter_mut().zip(&sample.features) {
                        *g += delta * x;
                    }
                }
            }
            let step = spec.learning_rate / batch.len() as f64;
            for (w, g) in model.weights.iter_mut().zip(&grad_w) {
                *w -= step * g;
            }
            for (b, g) in model.bias.iter_mut().zip(&grad_b) {
                *b -= step * g;
            }
        }
        epoch_losses.push(epoch_loss / samples.len() as f64);
    }
    Ok(TrainReport {
        model,
        epoch_losses,
    })
}

/// Analytic cross-entropy gradient for one sample, as `(d_weights, d_bias)`.
/// Exposed for gradient verification against finite differences.
pub fn loss_gradient(model: &PerceptronModel, sample: &Sample) -> (Vec<f64>, Vec<f64>) {
    let probabilities = softmax(&model.logits(&sample.features));
    let mut d_w = vec![0.0f64; model.class_count * model.dim];
    let mut d_b = vec![0.0f64; model.class_count];
    for k in 0..model.class_count {
        let delta = probabilities[k] - if k == sample.label as usize { 1.0 } else { 0.0 };
        d_b[k] = delta;
        for (j, &x) in sample.features.iter().enumerate() {
            d_w[k * model.dim + j] = delta * x;
        }
    }
    (d_w, d_b)
}

/// Cross-entropy of one sample under the model; the quantity whose gradient
/// [`loss_gradient`] computes.
pub fn sample_loss(model: &PerceptronModel, sample: &Sample) -> f64 {
    let probabilities = softmax(&model.logits(&sample.features));
    -probabilities[sample.label as usize].max(1e-300).ln()
}

/// Overall accuracy and per-class recall.
#[derive(Clone, PartialEq, Debug)]
pub struct Evaluation {
    pub accuracy: f64,
    pub per_class: Vec<f64>,
}

pub fn evaluate(model: &PerceptronModel, test: &[Sample]) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let mut correct = vec![0usize; model.class_count];
    let mut totals = vec![0usize; model.class_count];
    let mut hits = 0usize;
    for sample in test {
        let predicted = predict(model, &sample.features)?;
        let label = sample.label as usize;
        if label >= model.class_count {
            return Err(Error::InvalidConfig(format!(
                "test label {label} outside 0..{}",
                model.class_count
            )));
        }
        totals[label] += 1;
        if predicted == label {
            correct[label] += 1;
            hits += 1;
        }
    }
    let per_class = correct
        .iter()
        .zip(&totals)
        .map(|(&c, &t)| if t == 0 { 0.0 } else { c as f64 / t as f64 })
        .collect();
    Ok(Evaluation {
        accuracy: hits as f64 / test.len() as f64,
        per_class,
    })
}

// ---------------------------------------------------------------------------
// Model file: "PERCEPTRON v1 <K> <dim>" then K weight rows and one bias row,
// space-separated decimals.
// ---------------------------------------------------------------------------

pub fn write_model(model: &PerceptronModel, path: &Path) -> Result<()> {
    let mut out = format!("PERCEPTRON v1 {} {}\n", model.class_count, model.dim);
    for k in 0..model.class_count {
        let row = &model.weights[k * model.dim..(k + 1) * model.dim];
        let line: Vec<String> = row.iter().map(|w| w.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    let bias: Vec<String> = model.bias.iter().map(|b| b.to_string()).collect();
    out.push_str(&bias.join(" "));
    out.push('\n');
    fs::write(path, out)?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<PerceptronModel> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or(Error::Format("empty model file".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != "PERCEPTRON" || fields[1] != "v1" {
        return Err(Error::Format("expected 'PERCEPTRON v1 <K> <dim>'".into()));
    }
    let class_count: usize = fields[2].parse().map_err(|e| Error::Parse {
        line: 1,
        msg: format!("bad class count: {e}"),
    })?;
    let dim: usize = fields[3].parse().map_err(|e| Error::Parse {
        line: 1,
        msg: format!("bad dim: {e}"),
    })?;
    let parse_row = |line: &str, ln: usize, expected: usize| -> Result<Vec<f64>> {
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|s| {
                s.parse::<f64>().map_err(|e| Error::Parse {
                    line: ln,
                    msg: format!("bad number {s:?}: {e}"),
                })
            })
            .collect::<Result<_>>()?;
        if row.len() != expected {
            return Err(Error::Parse {
                line: ln,
                msg: format!("expected {expected} numbers, got {}", row.len()),
            });
        }
        Ok(row)
    };
    let mut weights = Vec::with_capacity(class_count * dim);
    for k in 0..class_count {
        let line = lines.next().ok_or(Error::Format("truncated model file".into()))?;
        weights.extend(parse_row(line, k + 2, dim)?);
    }
    let bias_line = lines.next().ok_or(Error::Format("missing bias row".into()))?;
    let bias = parse_row(bias_line, class_count + 2, class_count)?;
    Ok(PerceptronModel {
        class_count,
        dim,
        weights,
        bias,
    })
}
