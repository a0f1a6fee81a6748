//! Record codecs for training and inference streams.
//!
//! Two formats are supported. RAW carries one fixed-dtype tensor plus label
//! per record; STRUCTURED follows an ordered field schema. In both, features
//! come first and the label (if any) follows, so the feature prefix of a
//! training record decodes the same way an inference record does.

mod config;
mod raw;
mod structured;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{validate_config, InputConfig};
pub use raw::{decode_raw, encode_raw, ElemType, RawConfig};
pub use structured::{
    decode_fields, decode_structured, encode_fields, encode_structured, Field, FieldType,
    FieldValue, RecordSchema, StructuredConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum InputFormat {
    Raw,
    Structured,
}

impl std::fmt::Display for InputFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InputFormat::Raw => "RAW",
            InputFormat::Structured => "STRUCTURED",
        })
    }
}

impl std::str::FromStr for InputFormat {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "RAW" => Ok(InputFormat::Raw),
            "STRUCTURED" => Ok(InputFormat::Structured),
            _ => Err(CodecError::MalformedConfig(format!(
                "unknown input format {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodecError {
    #[error("expected {expected} bytes, got {actual}")]
    LengthMismatch { expected: String, actual: usize },
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("unknown field type {0:?}")]
    UnknownFieldType(String),
    #[error("malformed input config: {0}")]
    MalformedConfig(String),
    #[error("value {value} is not representable as {target}")]
    NotRepresentable { value: f64, target: &'static str },
    #[error("string field {0:?} cannot be fed to a model; map it to a number first")]
    StringField(String),
    #[error("field {0:?} holds invalid UTF-8")]
    InvalidUtf8(String),
}

/// A flat row-major tensor with its declared shape.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Tensor {
    pub values: Vec<f64>,
    pub shape: Vec<usize>,
}

impl Tensor {
    pub fn new(values: Vec<f64>, shape: Vec<usize>) -> Self {
        Self { values, shape }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        let n = values.len();
        Self::new(values, vec![n])
    }

    pub fn scalar(value: f64) -> Self {
        Self::new(vec![value], vec![1])
    }
}

/// One decoded record: features and (on training streams) its label.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Sample {
    pub features: Tensor,
    pub label: Tensor,
}

impl Sample {
    pub fn new(features: Tensor, label: Tensor) -> Self {
        Self { features, label }
    }

    /// Feature-only sample, as seen on inference streams.
    pub fn unlabeled(features: Tensor) -> Self {
        Self {
            features,
            label: Tensor::default(),
        }
    }
}

pub(crate) fn shape_len(shape: &[usize]) -> usize {
    shape.iter().product()
}
