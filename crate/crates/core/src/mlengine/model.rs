use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::spec::{Activation, LayerSpec, Loss, ModelSpec};
use super::train::MetricsReport;
use super::MlError;

/// Smallest probability fed to a logarithm.
const PROB_FLOOR: f64 = 1e-15;

/// Weights of one dense layer: `weights` is `units × fan_in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl DenseParams {
    pub fn zeros(units: usize, fan_in: usize) -> Self {
        Self {
            weights: Matrix::zeros(units, fan_in),
            bias: vec![0.0; units],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub params: Vec<DenseParams>,
    #[serde(default)]
    pub metrics: MetricsReport,
}

/// Training targets in the form the compiled loss expects.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// Class indices (sparse categorical) or 0/1 flags (binary).
    Classes(Vec<usize>),
    /// Regression targets, one row per sample.
    Values(Matrix),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(m) => m.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Classes(c) => Targets::Classes(idx.iter().map(|&i| c[i]).collect()),
            Targets::Values(m) => Targets::Values(m.select_rows(idx)),
        }
    }
}

/// Per-layer outputs of a forward pass. `outputs[0]` is the input batch and
/// `outputs[i + 1]` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub outputs: Vec<Matrix>,
    masks: Vec<Option<Matrix>>,
}

impl ForwardPass {
    pub fn output(&self) -> &Matrix {
        self.outputs.last().expect("input is always present")
    }
}

/// Gradients shaped like [`TrainedModel::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<DenseParams>,
    pub loss: f64,
}

/// Glorot-uniform weights and zero biases, deterministic in `seed`.
pub fn init_params(spec: &ModelSpec, seed: u64) -> TrainedModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = spec
        .dense_shapes()
        .into_iter()
        .map(|(units, fan_in)| {
            let limit = (6.0 / (fan_in + units) as f64).sqrt();
            let data = (0..units * fan_in)
                .map(|_| rng.gen_range(-limit..limit))
                .collect();
            DenseParams {
                weights: Matrix::from_vec(units, fan_in, data),
                bias: vec![0.0; units],
            }
        })
        .collect();
    TrainedModel {
        spec: spec.clone(),
        params,
        metrics: MetricsReport::default(),
    }
}

fn activate(act: Activation, z: &mut Matrix) {
    match act {
        Activation::Linear => {}
        Activation::Relu => z.data_mut().iter_mut().for_each(|v| *v = v.max(0.0)),
        Activation::Sigmoid => z.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v)),
        Activation::Softmax => {
            for r in 0..z.rows() {
                softmax_in_place(z.row_mut(r));
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Runs the layer stack. Dropout is active only in `training_mode`, where it
/// zeroes units with probability `rate` and scales survivors by `1/(1-rate)`.
pub fn forward(
    model: &TrainedModel,
    batch: &Matrix,
    training_mode: bool,
    seed: u64,
) -> Result<ForwardPass, MlError> {
    if batch.cols() != model.spec.input_dim {
        return Err(MlError::ShapeMismatch {
            expected: model.spec.input_dim,
            actual: batch.cols(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut outputs = vec![batch.clone()];
    let mut masks = Vec::with_capacity(model.spec.layers.len());
    let mut dense = model.params.iter();
    for layer in &model.spec.layers {
        let input = outputs.last().unwrap();
        match *layer {
            LayerSpec::Dense { activation, .. } => {
                let p = dense.next().expect("params match spec");
                let mut z = input.affine(&p.weights, &p.bias);
                activate(activation, &mut z);
                outputs.push(z);
                masks.push(None);
            }
            LayerSpec::Dropout { rate } if training_mode && rate > 0.0 => {
                let keep = 1.0 / (1.0 - rate);
                let mut mask = Matrix::zeros(input.rows(), input.cols());
                for m in mask.data_mut() {
                    *m = if rng.gen::<f64>() < rate { 0.0 } else { keep };
                }
                let mut out = input.clone();
                for (o, m) in out.data_mut().iter_mut().zip(mask.data()) {
                    *o *= m;
                }
                outputs.push(out);
                masks.push(Some(mask));
            }
            LayerSpec::Dropout { .. } => {
                outputs.push(input.clone());
                masks.push(None);
            }
        }
    }
    Ok(ForwardPass { outputs, masks })
}

/// Inference-mode forward pass.
pub fn predict(model: &TrainedModel, features: &Matrix) -> Result<Matrix, MlError> {
    Ok(forward(model, features, false, 0)?.outputs.pop().unwrap())
}

pub(crate) fn check_targets(spec: &ModelSpec, targets: &Targets) -> Result<(), MlError> {
    let out = spec.output_dim();
    match (spec.loss, targets) {
        (Loss::SparseCategoricalCrossentropy, Targets::Classes(c)) => {
            if let Some(bad) = c.iter().find(|&&y| y >= out) {
                return Err(MlError::InvalidLabel(format!(
                    "class {bad} outside [0, {out})"
                )));
            }
        }
        (Loss::BinaryCrossentropy, Targets::Classes(c)) => {
            if let Some(bad) = c.iter().find(|&&y| y > 1) {
                return Err(MlError::InvalidLabel(format!(
                    "binary label {bad} is not 0 or 1"
                )));
            }
        }
        (Loss::Mse, Targets::Values(m)) => {
            if m.cols() != out {
                return Err(MlError::InvalidLabel(format!(
                    "regression target width {} does not match output width {out}",
                    m.cols()
                )));
            }
        }
        _ => {
            return Err(MlError::InvalidLabel(
                "targets do not match the loss".into(),
            ))
        }
    }
    Ok(())
}

/// Mean loss of `predictions` against `targets`.
pub fn loss_value(loss: Loss, predictions: &Matrix, targets: &Targets) -> f64 {
    let n = predictions.rows() as f64;
    match (loss, targets) {
        (Loss::SparseCategoricalCrossentropy, Targets::Classes(c)) => {
            c.iter()
                .enumerate()
                .map(|(r, &y)| -predictions.get(r, y).max(PROB_FLOOR).ln())
                .sum::<f64>()
                / n
        }
        (Loss::BinaryCrossentropy, Targets::Classes(c)) => {
            c.iter()
                .enumerate()
                .map(|(r, &y)| {
                    let p = predictions.get(r, 0).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
                    if y == 1 {
                        -p.ln()
                    } else {
                        -(1.0 - p).ln()
                    }
                })
                .sum::<f64>()
                / n
        }
        (Loss::Mse, Targets::Values(t)) => {
            let width = predictions.cols() as f64;
            predictions
                .data()
                .iter()
                .zip(t.data())
                .map(|(p, y)| (p - y) * (p - y))
                .sum::<f64>()
                / (n * width)
        }
        _ => f64::NAN,
    }
}

/// Loss of one forward pass; dropout follows `dropout_seed` when given.
pub fn batch_loss(
    model: &TrainedModel,
    features: &Matrix,
    targets: &Targets,
    dropout_seed: Option<u64>,
) -> Result<f64, MlError> {
    check_targets(&model.spec, targets)?;
    let pass = forward(
        model,
        features,
        dropout_seed.is_some(),
        dropout_seed.unwrap_or(0),
    )?;
    Ok(loss_value(model.spec.loss, pass.output(), targets))
}

/// Analytic gradients of the mean batch loss by backpropagation.
pub fn compute_gradients(
    model: &TrainedModel,
    features: &Matrix,
    targets: &Targets,
    dropout_seed: Option<u64>,
) -> Result<Gradients, MlError> {
    check_targets(&model.spec, targets)?;
    if targets.len() != features.rows() {
        return Err(MlError::ShapeMismatch {
            expected: features.rows(),
            actual: targets.len(),
        });
    }
    let pass = forward(
        model,
        features,
        dropout_seed.is_some(),
        dropout_seed.unwrap_or(0),
    )?;
    let prediction = pass.output();
    let loss = loss_value(model.spec.loss, prediction, targets);
    let n = features.rows() as f64;

    // Gradient w.r.t. the output of the current layer; the final dense layer
    // fuses its activation with the loss where the pairing allows it.
    let mut grad_out: Matrix;
    let mut fused_pre_activation = false;
    match (model.spec.loss, targets) {
        (Loss::SparseCategoricalCrossentropy, Targets::Classes(c)) => {
            grad_out = prediction.clone();
            for (r, &y) in c.iter().enumerate() {
                let g = grad_out.row_mut(r);
                g[y] -= 1.0;
                g.iter_mut().for_each(|v| *v /= n);
            }
            fused_pre_activation = true;
        }
        (Loss::BinaryCrossentropy, Targets::Classes(c)) => {
            grad_out = prediction.clone();
            for (r, &y) in c.iter().enumerate() {
                let v = grad_out.get(r, 0);
                grad_out.set(r, 0, (v - y as f64) / n);
            }
            fused_pre_activation = true;
        }
        (Loss::Mse, Targets::Values(t)) => {
            let width = prediction.cols() as f64;
            grad_out = prediction.clone();
            for (g, y) in grad_out.data_mut().iter_mut().zip(t.data()) {
                *g = 2.0 * (*g - y) / (n * width);
            }
        }
        _ => unreachable!("checked by check_targets"),
    }

    let mut grads: Vec<DenseParams> = model
        .params
        .iter()
        .map(|p| DenseParams::zeros(p.weights.rows(), p.weights.cols()))
        .collect();
    let mut dense_idx = model.params.len();
    for (li, layer) in model.spec.layers.iter().enumerate().rev() {
        let input = &pass.outputs[li];
        let output = &pass.outputs[li + 1];
        match *layer {
            LayerSpec::Dense { activation, .. } => {
                dense_idx -= 1;
                let p = &model.params[dense_idx];
                let dz = if fused_pre_activation {
                    fused_pre_activation = false;
                    grad_out
                } else {
                    activation_backward(activation, output, &grad_out)
                };
                let g = &mut grads[dense_idx];
                for r in 0..dz.rows() {
                    let dzr = dz.row(r);
                    let x = input.row(r);
                    for (u, d) in dzr.iter().enumerate() {
                        g.bias[u] += d;
                        let wrow = g.weights.row_mut(u);
                        for k in 0..x.len() {
                            wrow[k] += d * x[k];
                        }
                    }
                }
                grad_out = dz.matmul(&p.weights);
            }
            LayerSpec::Dropout { .. } => {
                if let Some(mask) = &pass.masks[li] {
                    for (g, m) in grad_out.data_mut().iter_mut().zip(mask.data()) {
                        *g *= m;
                    }
                }
            }
        }
    }
    Ok(Gradients {
        params: grads,
        loss,
    })
}

fn activation_backward(act: Activation, output: &Matrix, grad: &Matrix) -> Matrix {
    let mut dz = grad.clone();
    match act {
        Activation::Linear => {}
        Activation::Relu => {
            for (d, a) in dz.data_mut().iter_mut().zip(output.data()) {
                if *a <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        Activation::Sigmoid => {
            for (d, a) in dz.data_mut().iter_mut().zip(output.data()) {
                *d *= a * (1.0 - a);
            }
        }
        Activation::Softmax => {
            for r in 0..dz.rows() {
                let s = output.row(r);
                let g = grad.row(r);
                let dot: f64 = s.iter().zip(g).map(|(a, b)| a * b).sum();
                for (c, d) in dz.row_mut(r).iter_mut().enumerate() {
                    *d = s[c] * (g[c] - dot);
                }
            }
        }
    }
    dz
}

/// Index of the largest entry; the first one wins ties.
pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Number of correctly classified rows.
pub(crate) fn correct_count(loss: Loss, predictions: &Matrix, targets: &Targets) -> usize {
    match (loss, targets) {
        (Loss::SparseCategoricalCrossentropy, Targets::Classes(c)) => c
            .iter()
            .enumerate()
            .filter(|(r, &y)| argmax(predictions.row(*r)) == y)
            .count(),
        (Loss::BinaryCrossentropy, Targets::Classes(c)) => c
            .iter()
            .enumerate()
            .filter(|(r, &y)| usize::from(predictions.get(*r, 0) > 0.5) == y)
            .count(),
        _ => 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlengine::spec::OptimizerSpec;

    fn spec(input_dim: usize, layers: Vec<LayerSpec>, loss: Loss) -> ModelSpec {
        ModelSpec {
            input_dim,
            layers,
            loss,
            optimizer: OptimizerSpec::adam(0.001),
            metrics: vec![],
        }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let s = spec(
            4,
            vec![
                LayerSpec::dense(4, Activation::Sigmoid),
                LayerSpec::dense(2, Activation::Softmax),
            ],
            Loss::SparseCategoricalCrossentropy,
        );
        let a = init_params(&s, 7);
        assert_eq!(a, init_params(&s, 7));
        assert_ne!(a, init_params(&s, 8));
        assert_eq!(
            (a.params[0].weights.rows(), a.params[0].weights.cols()),
            (4, 4)
        );
        assert_eq!(a.params[0].bias, vec![0.0; 4]);

        let big = spec(100, vec![LayerSpec::dense(32, Activation::Relu)], Loss::Mse);
        let m = init_params(&big, 1);
        let limit = (6.0f64 / 132.0).sqrt();
        let w = m.params[0].weights.data();
        assert_eq!(w.len(), 3200);
        assert!(w.iter().all(|v| v.abs() <= limit));
        // spread should reach close to the bound
        assert!(w.iter().any(|v| v.abs() > 0.95 * limit));
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut row = [0.0, 0.0];
        softmax_in_place(&mut row);
        assert_eq!(row, [0.5, 0.5]);
    }

    #[test]
    fn identity_dense_layer() {
        let s = spec(2, vec![LayerSpec::dense(2, Activation::Linear)], Loss::Mse);
        let mut m = init_params(&s, 0);
        m.params[0].weights = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        m.params[0].bias = vec![1.0, 1.0];
        let out = predict(&m, &Matrix::from_rows(&[vec![2.0, 3.0]])).unwrap();
        assert_eq!(out.row(0), &[3.0, 4.0]);
        assert!(matches!(
            predict(&m, &Matrix::from_rows(&[vec![1.0, 2.0, 3.0]])),
            Err(MlError::ShapeMismatch {
                expected: 2,
                actual: 3
            })
        ));
    }

    #[test]
    fn dropout_is_identity_at_inference() {
        let s = spec(
            3,
            vec![
                LayerSpec::dropout(0.2),
                LayerSpec::dense(1, Activation::Linear),
            ],
            Loss::Mse,
        );
        let m = init_params(&s, 0);
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 3.0]]);
        let pass = forward(&m, &x, false, 99).unwrap();
        assert_eq!(pass.outputs[1], x);
        let train = forward(&m, &x, true, 99).unwrap();
        for (o, i) in train.outputs[1].data().iter().zip(x.data()) {
            assert!(*o == 0.0 || (*o - i / 0.8).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_two_class_prediction_costs_ln2() {
        let s = spec(
            3,
            vec![LayerSpec::dense(2, Activation::Softmax)],
            Loss::SparseCategoricalCrossentropy,
        );
        let mut m = init_params(&s, 0);
        m.params[0] = DenseParams::zeros(2, 3);
        let g = compute_gradients(
            &m,
            &Matrix::from_rows(&[vec![0.3, -1.0, 2.0]]),
            &Targets::Classes(vec![1]),
            None,
        )
        .unwrap();
        assert!((g.loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_class_is_rejected() {
        let s = spec(
            1,
            vec![LayerSpec::dense(2, Activation::Softmax)],
            Loss::SparseCategoricalCrossentropy,
        );
        let m = init_params(&s, 0);
        let err = compute_gradients(
            &m,
            &Matrix::from_rows(&[vec![0.0]]),
            &Targets::Classes(vec![7]),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, MlError::InvalidLabel(_)));
    }
}
