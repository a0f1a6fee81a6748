use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::model::{
    check_targets, compute_gradients, correct_count, forward, loss_value, Targets, TrainedModel,
};
use super::optimizer::OptimizerState;
use super::spec::{Loss, ModelSpec};
use super::MlError;
use crate::codec::Sample;

/// Fit and evaluation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub batch_size: usize,
    #[serde(default = "one")]
    pub epochs: usize,
    #[serde(default)]
    pub steps_per_epoch: Option<usize>,
    #[serde(default = "yes")]
    pub shuffle: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub validation_batch_size: Option<usize>,
    /// Accepted for compatibility; has no effect.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verbose: Option<i64>,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 1,
            steps_per_epoch: None,
            shuffle: true,
            seed: 0,
            validation_batch_size: None,
            verbose: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), MlError> {
        let mut errs = Vec::new();
        if self.batch_size == 0 {
            errs.push("batch_size must be at least 1".to_string());
        }
        if self.epochs == 0 {
            errs.push("epochs must be at least 1".to_string());
        }
        if self.steps_per_epoch == Some(0) {
            errs.push("steps_per_epoch must be at least 1".to_string());
        }
        if self.validation_batch_size == Some(0) {
            errs.push("validation_batch_size must be at least 1".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(MlError::InvalidConfig(errs))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub training: BTreeMap<String, f64>,
    #[serde(default)]
    pub evaluation: Option<BTreeMap<String, f64>>,
}

/// Stacks decoded samples into a feature matrix and loss-appropriate targets.
pub fn to_batch(spec: &ModelSpec, samples: &[Sample]) -> Result<(Matrix, Targets), MlError> {
    let mut features = Vec::with_capacity(samples.len() * spec.input_dim);
    for s in samples {
        if s.features.values.len() != spec.input_dim {
            return Err(MlError::ShapeMismatch {
                expected: spec.input_dim,
                actual: s.features.values.len(),
            });
        }
        features.extend_from_slice(&s.features.values);
    }
    let features = Matrix::from_vec(samples.len(), spec.input_dim, features);
    let targets = match spec.loss {
        Loss::SparseCategoricalCrossentropy | Loss::BinaryCrossentropy => {
            let classes = samples
                .iter()
                .map(|s| match s.label.values.as_slice() {
                    [y] if *y >= 0.0 && y.fract() == 0.0 => Ok(*y as usize),
                    other => Err(MlError::InvalidLabel(format!(
                        "expected one non-negative integer class, got {other:?}"
                    ))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            Targets::Classes(classes)
        }
        Loss::Mse => {
            let width = spec.output_dim();
            let mut data = Vec::with_capacity(samples.len() * width);
            for s in samples {
                if s.label.values.len() != width {
                    return Err(MlError::InvalidLabel(format!(
                        "expected {width} regression targets, got {}",
                        s.label.values.len()
                    )));
                }
                data.extend_from_slice(&s.label.values);
            }
            Targets::Values(Matrix::from_vec(samples.len(), width, data))
        }
    };
    check_targets(spec, &targets)?;
    Ok((features, targets))
}

/// Per-step dropout seed, decorrelated from the shuffle stream.
fn step_seed(seed: u64, step: u64) -> u64 {
    let mut z = seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Batch index lists for one epoch.
///
/// Without `steps_per_epoch` the epoch is one pass in `batch_size` chunks
/// (last one short). With it, exactly that many full batches are drawn,
/// wrapping around the epoch order when it runs out.
pub(crate) fn epoch_batches(order: &[usize], cfg: &TrainingConfig) -> Vec<Vec<usize>> {
    match cfg.steps_per_epoch {
        None => order
            .chunks(cfg.batch_size)
            .map(<[usize]>::to_vec)
            .collect(),
        Some(steps) => {
            let n = order.len();
            (0..steps)
                .map(|s| {
                    (0..cfg.batch_size)
                        .map(|i| order[(s * cfg.batch_size + i) % n])
                        .collect()
                })
                .collect()
        }
    }
}

/// Fits `model` on `samples`, returning the updated model with training metrics.
pub fn train(
    model: &TrainedModel,
    samples: &[Sample],
    cfg: &TrainingConfig,
) -> Result<TrainedModel, MlError> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(MlError::EmptyDataset);
    }
    let (features, targets) = to_batch(&model.spec, samples)?;
    let mut trained = model.clone();
    let mut optimizer = OptimizerState::new(model.spec.optimizer, &trained.params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut step: u64 = 0;
    let mut last_loss = 0.0;
    let mut last_acc = 0.0;

    for _epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut shuffle_rng);
        }
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut seen = 0usize;
        for batch in epoch_batches(&order, cfg) {
            step += 1;
            let x = features.select_rows(&batch);
            let y = targets.select(&batch);
            let seed = step_seed(cfg.seed, step);
            let grads = compute_gradients(&trained, &x, &y, Some(seed))?;
            if model.spec.has_accuracy() {
                // same dropout mask as the gradient pass
                let pass = forward(&trained, &x, true, seed)?;
                correct += correct_count(model.spec.loss, pass.output(), &y);
            }
            loss_sum += grads.loss * batch.len() as f64;
            seen += batch.len();
            optimizer.step(&mut trained.params, &grads.params, step);
        }
        last_loss = loss_sum / seen as f64;
        last_acc = correct as f64 / seen as f64;
    }

    let mut training = BTreeMap::from([("loss".to_string(), last_loss)]);
    if model.spec.has_accuracy() {
        training.insert("accuracy".to_string(), last_acc);
    }
    trained.metrics = MetricsReport {
        training,
        evaluation: None,
    };
    Ok(trained)
}

/// Loss (and accuracy when compiled) over all samples with dropout disabled.
pub fn evaluate(
    model: &TrainedModel,
    samples: &[Sample],
    cfg: &TrainingConfig,
) -> Result<BTreeMap<String, f64>, MlError> {
    if samples.is_empty() {
        return Err(MlError::EmptyDataset);
    }
    let (features, targets) = to_batch(&model.spec, samples)?;
    let chunk = cfg.validation_batch_size.unwrap_or(samples.len()).max(1);
    let idx: Vec<usize> = (0..samples.len()).collect();
    let mut loss_sum = 0.0;
    let mut correct = 0;
    for batch in idx.chunks(chunk) {
        let x = features.select_rows(batch);
        let y = targets.select(batch);
        let pass = forward(model, &x, false, 0)?;
        loss_sum += loss_value(model.spec.loss, pass.output(), &y) * batch.len() as f64;
        correct += correct_count(model.spec.loss, pass.output(), &y);
    }
    let n = samples.len() as f64;
    let mut out = BTreeMap::from([("loss".to_string(), loss_sum / n)]);
    if model.spec.has_accuracy() {
        out.insert("accuracy".to_string(), correct as f64 / n);
    }
    Ok(out)
}
