use serde::{Deserialize, Serialize};

use super::MlError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Softmax,
    Linear,
}

impl Activation {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "relu" => Activation::Relu,
            "sigmoid" => Activation::Sigmoid,
            "softmax" => Activation::Softmax,
            "linear" => Activation::Linear,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LayerSpec {
    Dense {
        units: usize,
        activation: Activation,
    },
    Dropout {
        rate: f64,
    },
}

impl LayerSpec {
    pub fn dense(units: usize, activation: Activation) -> Self {
        LayerSpec::Dense { units, activation }
    }

    pub fn dropout(rate: f64) -> Self {
        LayerSpec::Dropout { rate }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    SparseCategoricalCrossentropy,
    BinaryCrossentropy,
    Mse,
}

impl Loss {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "sparse_categorical_crossentropy" => Loss::SparseCategoricalCrossentropy,
            "binary_crossentropy" => Loss::BinaryCrossentropy,
            "mse" | "mean_squared_error" => Loss::Mse,
            _ => return None,
        })
    }

    pub fn is_classification(self) -> bool {
        !matches!(self, Loss::Mse)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    #[serde(rename = "type")]
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerSpec {
    pub fn adam(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            ..Self::adam(learning_rate)
        }
    }
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self::adam(0.001)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Accuracy,
}

/// A validated layer stack with its compiled loss and optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
    pub loss: Loss,
    pub optimizer: OptimizerSpec,
    #[serde(default)]
    pub metrics: Vec<Metric>,
}

impl ModelSpec {
    /// Width of the final layer.
    pub fn output_dim(&self) -> usize {
        self.layers.iter().fold(self.input_dim, |w, l| match l {
            LayerSpec::Dense { units, .. } => *units,
            LayerSpec::Dropout { .. } => w,
        })
    }

    /// `(units, fan_in)` of every dense layer in order.
    pub fn dense_shapes(&self) -> Vec<(usize, usize)> {
        let mut width = self.input_dim;
        let mut out = Vec::new();
        for l in &self.layers {
            if let LayerSpec::Dense { units, .. } = l {
                out.push((*units, width));
                width = *units;
            }
        }
        out
    }

    pub fn has_accuracy(&self) -> bool {
        self.metrics.contains(&Metric::Accuracy) && self.loss.is_classification()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("spec serializes")
    }

    /// Checks every structural rule, returning all violations at once.
    pub fn validate(&self) -> Result<(), MlError> {
        let mut errors = Vec::new();
        if self.input_dim == 0 {
            errors.push("input_dim must be at least 1".to_string());
        }
        if !self
            .layers
            .iter()
            .any(|l| matches!(l, LayerSpec::Dense { .. }))
        {
            errors.push("at least one dense layer is required".to_string());
        }
        let last = self.layers.len().saturating_sub(1);
        for (i, l) in self.layers.iter().enumerate() {
            match *l {
                LayerSpec::Dense { units, activation } => {
                    if units == 0 {
                        errors.push(format!("layer {i}: units must be at least 1"));
                    }
                    if activation == Activation::Softmax && i != last {
                        errors.push(format!(
                            "layer {i}: softmax is only allowed on the final layer"
                        ));
                    }
                }
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        errors.push(format!("layer {i}: dropout rate must be in [0, 1)"));
                    }
                }
            }
        }
        if let Some(LayerSpec::Dropout { .. }) = self.layers.last() {
            errors.push("the final layer must be dense".to_string());
        }
        let final_act = match self.layers.last() {
            Some(LayerSpec::Dense { activation, .. }) => Some(*activation),
            _ => None,
        };
        let out = self.output_dim();
        match self.loss {
            Loss::SparseCategoricalCrossentropy => {
                if final_act.is_some() && (final_act != Some(Activation::Softmax) || out < 2) {
                    errors.push(
                        "sparse_categorical_crossentropy needs a softmax output with at least 2 units"
                            .to_string(),
                    );
                }
            }
            Loss::BinaryCrossentropy => {
                if final_act.is_some() && (final_act != Some(Activation::Sigmoid) || out != 1) {
                    errors
                        .push("binary_crossentropy needs a single sigmoid output unit".to_string());
                }
            }
            Loss::Mse => {}
        }
        let o = &self.optimizer;
        if !(o.learning_rate >= 0.0 && o.learning_rate.is_finite()) {
            errors.push("learning_rate must be a non-negative finite number".to_string());
        }
        if !(o.beta1 > 0.0 && o.beta1 < 1.0) || !(o.beta2 > 0.0 && o.beta2 < 1.0) {
            errors.push("beta1 and beta2 must lie in (0, 1)".to_string());
        }
        if o.epsilon.is_nan() || o.epsilon <= 0.0 {
            errors.push("epsilon must be positive".to_string());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(MlError::InvalidSpec(errors))
        }
    }
}

#[derive(Deserialize)]
struct LooseSpec {
    input_dim: Option<i64>,
    layers: Option<Vec<LooseLayer>>,
    loss: Option<String>,
    optimizer: Option<LooseOptimizer>,
    #[serde(default)]
    metrics: Vec<String>,
}

#[derive(Deserialize)]
struct LooseLayer {
    #[serde(rename = "type")]
    kind: Option<String>,
    units: Option<i64>,
    activation: Option<String>,
    rate: Option<f64>,
    input_dim: Option<i64>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LooseOptimizer {
    Name(String),
    Full {
        #[serde(rename = "type")]
        kind: String,
        #[serde(alias = "lr")]
        learning_rate: Option<f64>,
        beta1: Option<f64>,
        beta2: Option<f64>,
        epsilon: Option<f64>,
    },
}

/// Parses the JSON model description, reporting every violation found.
pub fn parse_model_spec(json: &str) -> Result<ModelSpec, MlError> {
    let loose: LooseSpec =
        serde_json::from_str(json).map_err(|e| MlError::InvalidSpec(vec![e.to_string()]))?;
    let mut errors = Vec::new();

    let input_dim = match loose.input_dim {
        Some(d) if d >= 1 => d as usize,
        Some(d) => {
            errors.push(format!("input_dim must be at least 1, got {d}"));
            0
        }
        None => {
            errors.push("missing input_dim".to_string());
            0
        }
    };

    let mut layers = Vec::new();
    let mut width = input_dim;
    for (i, l) in loose.layers.unwrap_or_default().into_iter().enumerate() {
        if let Some(d) = l.input_dim {
            if d < 0 || d as usize != width {
                errors.push(format!(
                    "layer {i}: declared input_dim {d} does not match incoming width {width}"
                ));
            }
        }
        match l.kind.as_deref() {
            Some("dense") => {
                let units = match l.units {
                    Some(u) if u >= 1 => u as usize,
                    _ => {
                        errors.push(format!("layer {i}: dense layer needs units >= 1"));
                        1
                    }
                };
                let activation = match l.activation.as_deref() {
                    None => Activation::Linear,
                    Some(a) => Activation::parse(a).unwrap_or_else(|| {
                        errors.push(format!("layer {i}: unknown activation {a:?}"));
                        Activation::Linear
                    }),
                };
                width = units;
                layers.push(LayerSpec::Dense { units, activation });
            }
            Some("dropout") => {
                let rate = l.rate.unwrap_or_else(|| {
                    errors.push(format!("layer {i}: dropout layer needs a rate"));
                    0.0
                });
                layers.push(LayerSpec::Dropout { rate });
            }
            Some(other) => errors.push(format!("layer {i}: unknown layer type {other:?}")),
            None => errors.push(format!("layer {i}: missing layer type")),
        }
    }
    if layers.is_empty() && errors.is_empty() {
        errors.push("at least one layer is required".to_string());
    }

    let loss = match loose.loss.as_deref() {
        Some(s) => Loss::parse(s).unwrap_or_else(|| {
            errors.push(format!("unknown loss {s:?}"));
            Loss::Mse
        }),
        None => {
            errors.push("missing loss".to_string());
            Loss::Mse
        }
    };

    let optimizer = match loose.optimizer {
        None => OptimizerSpec::default(),
        Some(LooseOptimizer::Name(n)) => match n.as_str() {
            "adam" => OptimizerSpec::adam(0.001),
            "sgd" => OptimizerSpec::sgd(0.01),
            other => {
                errors.push(format!("unknown optimizer {other:?}"));
                OptimizerSpec::default()
            }
        },
        Some(LooseOptimizer::Full {
            kind,
            learning_rate,
            beta1,
            beta2,
            epsilon,
        }) => {
            let base = match kind.as_str() {
                "adam" => OptimizerSpec::adam(0.001),
                "sgd" => OptimizerSpec::sgd(0.01),
                other => {
                    errors.push(format!("unknown optimizer {other:?}"));
                    OptimizerSpec::default()
                }
            };
            OptimizerSpec {
                learning_rate: learning_rate.unwrap_or(base.learning_rate),
                beta1: beta1.unwrap_or(base.beta1),
                beta2: beta2.unwrap_or(base.beta2),
                epsilon: epsilon.unwrap_or(base.epsilon),
                ..base
            }
        }
    };

    let mut metrics = Vec::new();
    for m in loose.metrics {
        match m.as_str() {
            "accuracy" | "acc" => metrics.push(Metric::Accuracy),
            other => errors.push(format!("unknown metric {other:?}")),
        }
    }

    let spec = ModelSpec {
        input_dim,
        layers,
        loss,
        optimizer,
        metrics,
    };
    if let Err(MlError::InvalidSpec(more)) = spec.validate() {
        for e in more {
            if !errors.contains(&e) {
                errors.push(e);
            }
        }
    }
    if errors.is_empty() {
        Ok(spec)
    } else {
        Err(MlError::InvalidSpec(errors))
    }
}
