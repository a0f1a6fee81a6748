use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{CodecError, Sample, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldType {
    F32,
    F64,
    I32,
    I64,
    String,
}

impl std::str::FromStr for FieldType {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "f32" => FieldType::F32,
            "f64" => FieldType::F64,
            "i32" => FieldType::I32,
            "i64" => FieldType::I64,
            "string" => FieldType::String,
            other => return Err(CodecError::UnknownFieldType(other.to_string())),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Field {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: FieldType,
}

impl Field {
    pub fn new(name: impl Into<String>, ty: FieldType) -> Self {
        Self {
            name: name.into(),
            ty,
        }
    }
}

/// Ordered fields; the order is the byte layout.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordSchema {
    pub fields: Vec<Field>,
}

impl RecordSchema {
    pub fn new(fields: Vec<Field>) -> Self {
        Self { fields }
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn has_strings(&self) -> bool {
        self.fields.iter().any(|f| f.ty == FieldType::String)
    }

    pub(crate) fn validate(&self, which: &str) -> Result<(), CodecError> {
        if self.fields.is_empty() {
            return Err(CodecError::MalformedConfig(format!(
                "{which} has no fields"
            )));
        }
        let mut seen = HashSet::new();
        for f in &self.fields {
            if f.name.is_empty() {
                return Err(CodecError::MalformedConfig(format!(
                    "{which} has an unnamed field"
                )));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(CodecError::MalformedConfig(format!(
                    "{which} repeats field {:?}",
                    f.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructuredConfig {
    pub data_scheme: RecordSchema,
    pub label_scheme: RecordSchema,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldValue {
    F32(f32),
    F64(f64),
    I32(i32),
    I64(i64),
    Str(String),
}

impl FieldValue {
    fn from_number(value: f64, field: &Field) -> Result<Self, CodecError> {
        let bad = |target| CodecError::NotRepresentable { value, target };
        Ok(match field.ty {
            FieldType::F32 => {
                let v = value as f32;
                if value.is_finite() && !v.is_finite() {
                    return Err(bad("f32"));
                }
                FieldValue::F32(v)
            }
            FieldType::F64 => FieldValue::F64(value),
            FieldType::I32 => {
                if value.fract() != 0.0 || value < i32::MIN as f64 || value > i32::MAX as f64 {
                    return Err(bad("i32"));
                }
                FieldValue::I32(value as i32)
            }
            FieldType::I64 => {
                // f64 holds integers exactly only up to 2^53
                if value.fract() != 0.0 || value.abs() > 9_007_199_254_740_992.0 {
                    return Err(bad("i64"));
                }
                FieldValue::I64(value as i64)
            }
            FieldType::String => return Err(CodecError::StringField(field.name.clone())),
        })
    }

    fn as_number(&self, field: &Field) -> Result<f64, CodecError> {
        Ok(match self {
            FieldValue::F32(v) => *v as f64,
            FieldValue::F64(v) => *v,
            FieldValue::I32(v) => *v as f64,
            FieldValue::I64(v) => *v as f64,
            FieldValue::Str(_) => return Err(CodecError::StringField(field.name.clone())),
        })
    }

    fn matches(&self, ty: FieldType) -> bool {
        matches!(
            (self, ty),
            (FieldValue::F32(_), FieldType::F32)
                | (FieldValue::F64(_), FieldType::F64)
                | (FieldValue::I32(_), FieldType::I32)
                | (FieldValue::I64(_), FieldType::I64)
                | (FieldValue::Str(_), FieldType::String)
        )
    }
}

/// Numeric fields are fixed-width little-endian; strings are a big-endian
/// u32 byte length followed by UTF-8.
pub fn encode_fields(
    values: &[FieldValue],
    schema: &RecordSchema,
    out: &mut Vec<u8>,
) -> Result<(), CodecError> {
    if values.len() != schema.len() {
        return Err(CodecError::ShapeMismatch {
            expected: vec![schema.len()],
            actual: vec![values.len()],
        });
    }
    for (v, f) in values.iter().zip(&schema.fields) {
        if !v.matches(f.ty) {
            return Err(CodecError::MalformedConfig(format!(
                "value for {:?} does not match declared type {:?}",
                f.name, f.ty
            )));
        }
        match v {
            FieldValue::F32(x) => out.extend_from_slice(&x.to_le_bytes()),
            FieldValue::F64(x) => out.extend_from_slice(&x.to_le_bytes()),
            FieldValue::I32(x) => out.extend_from_slice(&x.to_le_bytes()),
            FieldValue::I64(x) => out.extend_from_slice(&x.to_le_bytes()),
            FieldValue::Str(s) => {
                out.extend_from_slice(&(s.len() as u32).to_be_bytes());
                out.extend_from_slice(s.as_bytes());
            }
        }
    }
    Ok(())
}

/// Decodes one schema's worth of fields from the front of `bytes`.
pub fn decode_fields<'a>(
    bytes: &'a [u8],
    schema: &RecordSchema,
) -> Result<(Vec<FieldValue>, &'a [u8]), CodecError> {
    let mut rest = bytes;
    let mut take = |n: usize| -> Result<&'a [u8], CodecError> {
        if rest.len() < n {
            return Err(CodecError::LengthMismatch {
                expected: format!("at least {} more", n),
                actual: rest.len(),
            });
        }
        let (head, tail) = rest.split_at(n);
        rest = tail;
        Ok(head)
    };
    let mut out = Vec::with_capacity(schema.len());
    for f in &schema.fields {
        out.push(match f.ty {
            FieldType::F32 => FieldValue::F32(f32::from_le_bytes(take(4)?.try_into().unwrap())),
            FieldType::F64 => FieldValue::F64(f64::from_le_bytes(take(8)?.try_into().unwrap())),
            FieldType::I32 => FieldValue::I32(i32::from_le_bytes(take(4)?.try_into().unwrap())),
            FieldType::I64 => FieldValue::I64(i64::from_le_bytes(take(8)?.try_into().unwrap())),
            FieldType::String => {
                let len = u32::from_be_bytes(take(4)?.try_into().unwrap()) as usize;
                let raw = take(len)?;
                FieldValue::Str(
                    String::from_utf8(raw.to_vec())
                        .map_err(|_| CodecError::InvalidUtf8(f.name.clone()))?,
                )
            }
        });
    }
    Ok((out, rest))
}

fn to_values(t: &Tensor, schema: &RecordSchema) -> Result<Vec<FieldValue>, CodecError> {
    if t.values.len() != schema.len() {
        return Err(CodecError::ShapeMismatch {
            expected: vec![schema.len()],
            actual: t.shape.clone(),
        });
    }
    t.values
        .iter()
        .zip(&schema.fields)
        .map(|(v, f)| FieldValue::from_number(*v, f))
        .collect()
}

fn to_tensor(values: &[FieldValue], schema: &RecordSchema) -> Result<Tensor, CodecError> {
    let nums = values
        .iter()
        .zip(&schema.fields)
        .map(|(v, f)| v.as_number(f))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Tensor::vector(nums))
}

pub fn encode_structured(sample: &Sample, cfg: &StructuredConfig) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::new();
    encode_fields(
        &to_values(&sample.features, &cfg.data_scheme)?,
        &cfg.data_scheme,
        &mut out,
    )?;
    if !sample.label.values.is_empty() || !sample.label.shape.is_empty() {
        encode_fields(
            &to_values(&sample.label, &cfg.label_scheme)?,
            &cfg.label_scheme,
            &mut out,
        )?;
    }
    Ok(out)
}

pub fn decode_structured(
    value: &[u8],
    cfg: &StructuredConfig,
    with_label: bool,
) -> Result<Sample, CodecError> {
    let (features, rest) = decode_fields(value, &cfg.data_scheme)?;
    let features = to_tensor(&features, &cfg.data_scheme)?;
    if !with_label && rest.is_empty() {
        return Ok(Sample::unlabeled(features));
    }
    let (label, rest) = decode_fields(rest, &cfg.label_scheme)?;
    if !rest.is_empty() {
        return Err(CodecError::LengthMismatch {
            expected: format!("{}", value.len() - rest.len()),
            actual: value.len(),
        });
    }
    if !with_label {
        return Ok(Sample::unlabeled(features));
    }
    Ok(Sample::new(features, to_tensor(&label, &cfg.label_scheme)?))
}
