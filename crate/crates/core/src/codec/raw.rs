use serde::{Deserialize, Serialize};

use super::{shape_len, CodecError, Sample, Tensor};

/// Element type of a RAW tensor. Values are little-endian on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElemType {
    F32,
    F64,
    I32,
    U8,
}

impl ElemType {
    pub fn size(self) -> usize {
        match self {
            ElemType::F32 | ElemType::I32 => 4,
            ElemType::F64 => 8,
            ElemType::U8 => 1,
        }
    }

    fn name(self) -> &'static str {
        match self {
            ElemType::F32 => "f32",
            ElemType::F64 => "f64",
            ElemType::I32 => "i32",
            ElemType::U8 => "u8",
        }
    }

    pub(crate) fn write(self, value: f64, out: &mut Vec<u8>) -> Result<(), CodecError> {
        let bad = || CodecError::NotRepresentable {
            value,
            target: self.name(),
        };
        match self {
            ElemType::F32 => {
                let v = value as f32;
                if value.is_finite() && !v.is_finite() {
                    return Err(bad());
                }
                out.extend_from_slice(&v.to_le_bytes());
            }
            ElemType::F64 => out.extend_from_slice(&value.to_le_bytes()),
            ElemType::I32 => {
                if value.fract() != 0.0 || value < i32::MIN as f64 || value > i32::MAX as f64 {
                    return Err(bad());
                }
                out.extend_from_slice(&(value as i32).to_le_bytes());
            }
            ElemType::U8 => {
                if value.fract() != 0.0 || !(0.0..=255.0).contains(&value) {
                    return Err(bad());
                }
                out.push(value as u8);
            }
        }
        Ok(())
    }

    pub(crate) fn read(self, bytes: &[u8]) -> f64 {
        match self {
            ElemType::F32 => f32::from_le_bytes(bytes.try_into().unwrap()) as f64,
            ElemType::F64 => f64::from_le_bytes(bytes.try_into().unwrap()),
            ElemType::I32 => i32::from_le_bytes(bytes.try_into().unwrap()) as f64,
            ElemType::U8 => bytes[0] as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub data_type: ElemType,
    pub data_reshape: Vec<usize>,
    pub label_type: ElemType,
    pub label_shape: Vec<usize>,
}

impl RawConfig {
    pub fn feature_count(&self) -> usize {
        shape_len(&self.data_reshape)
    }

    pub fn feature_bytes(&self) -> usize {
        self.data_type.size() * self.feature_count()
    }

    pub fn label_bytes(&self) -> usize {
        self.label_type.size() * shape_len(&self.label_shape)
    }

    pub fn record_bytes(&self) -> usize {
        self.feature_bytes() + self.label_bytes()
    }
}

fn check_shape(t: &Tensor, expected: &[usize]) -> Result<(), CodecError> {
    if shape_len(&t.shape) != shape_len(expected) || t.values.len() != shape_len(expected) {
        return Err(CodecError::ShapeMismatch {
            expected: expected.to_vec(),
            actual: t.shape.clone(),
        });
    }
    Ok(())
}

/// Features (row-major) followed by the label. An empty label tensor encodes
/// a feature-only inference record.
pub fn encode_raw(sample: &Sample, cfg: &RawConfig) -> Result<Vec<u8>, CodecError> {
    check_shape(&sample.features, &cfg.data_reshape)?;
    let with_label = !sample.label.values.is_empty() || !sample.label.shape.is_empty();
    if with_label {
        check_shape(&sample.label, &cfg.label_shape)?;
    }
    let mut out = Vec::with_capacity(cfg.record_bytes());
    for v in &sample.features.values {
        cfg.data_type.write(*v, &mut out)?;
    }
    if with_label {
        for v in &sample.label.values {
            cfg.label_type.write(*v, &mut out)?;
        }
    }
    Ok(out)
}

fn read_tensor(bytes: &[u8], ty: ElemType, shape: &[usize]) -> Tensor {
    let values = bytes.chunks_exact(ty.size()).map(|c| ty.read(c)).collect();
    Tensor::new(values, shape.to_vec())
}

/// Decodes a RAW record. Without the label, both feature-only records and
/// full training records are accepted.
pub fn decode_raw(value: &[u8], cfg: &RawConfig, with_label: bool) -> Result<Sample, CodecError> {
    let fb = cfg.feature_bytes();
    let full = cfg.record_bytes();
    let ok_len = if with_label {
        value.len() == full
    } else {
        value.len() == fb || value.len() == full
    };
    if !ok_len {
        return Err(CodecError::LengthMismatch {
            expected: if with_label {
                full.to_string()
            } else {
                format!("{fb} or {full}")
            },
            actual: value.len(),
        });
    }
    let features = read_tensor(&value[..fb], cfg.data_type, &cfg.data_reshape);
    let label = if with_label {
        read_tensor(&value[fb..], cfg.label_type, &cfg.label_shape)
    } else {
        Tensor::default()
    };
    Ok(Sample { features, label })
}
