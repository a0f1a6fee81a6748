//! Weight blob format.
//!
//! ```text
//! "KMLW" | u16 version | u32 dense layer count |
//!   per layer: u32 units | u32 fan_in | units·fan_in f64 (row-major W) | units f64 (b)
//! ```
//! All integers and floats little-endian.

use super::matrix::Matrix;
use super::model::{DenseParams, TrainedModel};
use super::spec::ModelSpec;
use super::train::MetricsReport;
use super::MlError;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"KMLW";
pub const WEIGHTS_VERSION: u16 = 1;

pub fn save_weights(model: &TrainedModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for p in &model.params {
        out.extend_from_slice(&(p.weights.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(p.weights.cols() as u32).to_le_bytes());
        for w in p.weights.data() {
            out.extend_from_slice(&w.to_le_bytes());
        }
        for b in &p.bias {
            out.extend_from_slice(&b.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], MlError> {
        if self.buf.len() < n {
            return Err(MlError::CorruptWeights("blob is truncated".into()));
        }
        let (h, t) = self.buf.split_at(n);
        self.buf = t;
        Ok(h)
    }

    fn u32(&mut self) -> Result<u32, MlError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, MlError> {
        Ok(self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn load_weights(spec: &ModelSpec, bytes: &[u8]) -> Result<TrainedModel, MlError> {
    let mut r = Reader { buf: bytes };
    if r.take(4)? != WEIGHTS_MAGIC {
        return Err(MlError::CorruptWeights("bad magic".into()));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != WEIGHTS_VERSION {
        return Err(MlError::CorruptWeights(format!(
            "unsupported version {version}"
        )));
    }
    let shapes = spec.dense_shapes();
    let count = r.u32()? as usize;
    if count != shapes.len() {
        return Err(MlError::SpecMismatch(format!(
            "blob has {count} dense layers, spec has {}",
            shapes.len()
        )));
    }
    let mut params = Vec::with_capacity(count);
    for (i, (units, fan_in)) in shapes.into_iter().enumerate() {
        let (u, f) = (r.u32()? as usize, r.u32()? as usize);
        if (u, f) != (units, fan_in) {
            return Err(MlError::SpecMismatch(format!(
                "layer {i} is {u}x{f} in the blob but {units}x{fan_in} in the spec"
            )));
        }
        let weights = Matrix::from_vec(units, fan_in, r.f64s(units * fan_in)?);
        let bias = r.f64s(units)?;
        params.push(DenseParams { weights, bias });
    }
    if !r.buf.is_empty() {
        return Err(MlError::CorruptWeights(format!(
            "{} trailing bytes",
            r.buf.len()
        )));
    }
    Ok(TrainedModel {
        spec: spec.clone(),
        params,
        metrics: MetricsReport::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlengine::{init_params, parse_model_spec, predict};

    fn spec(hidden: usize) -> ModelSpec {
        parse_model_spec(&format!(
            r#"{{"input_dim":4,"layers":[{{"type":"dropout","rate":0.2}},{{"type":"dense","units":{hidden},"activation":"sigmoid"}},
                {{"type":"dense","units":2,"activation":"softmax"}}],"loss":"sparse_categorical_crossentropy"}}"#
        ))
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = init_params(&spec(4), 3);
        let blob = save_weights(&m);
        assert_eq!(&blob[..4], b"KMLW");
        assert_eq!(
            blob.len(),
            4 + 2 + 4 + (8 + 8 * (16 + 4)) + (8 + 8 * (8 + 2))
        );
        let back = load_weights(&m.spec, &blob).unwrap();
        assert_eq!(back.params, m.params);
        let x = Matrix::from_rows(&[vec![0.1, 0.2, -0.3, 4.0], vec![1.0, 0.0, 0.0, -1.0]]);
        assert_eq!(predict(&back, &x).unwrap(), predict(&m, &x).unwrap());
    }

    #[test]
    fn truncated_blob_is_corrupt() {
        let blob = save_weights(&init_params(&spec(4), 3));
        for cut in [0, 3, 5, 9, 20, blob.len() - 1] {
            assert!(matches!(
                load_weights(&spec(4), &blob[..cut]),
                Err(MlError::CorruptWeights(_))
            ));
        }
    }

    #[test]
    fn other_spec_is_a_mismatch() {
        let blob = save_weights(&init_params(&spec(4), 3));
        assert!(matches!(
            load_weights(&spec(5), &blob),
            Err(MlError::SpecMismatch(_))
        ));
    }
}
