//! Fixtures shared by the benchmarks in `benches/`.

use kml_core::codec::Tensor;
use kml_core::mlengine::parse_model_spec;
use kml_core::streamclient::gaussian_clusters;
use kml_core::{ModelSpec, Sample};

pub const RAW_CONFIG: &str =
    r#"{"data_type":"f32","data_reshape":[4],"label_type":"i32","label_shape":[1]}"#;

/// Dropout 0.2, Dense 4 sigmoid, Dense 2 softmax.
pub fn small_classifier() -> ModelSpec {
    parse_model_spec(
        r#"{"input_dim":4,"layers":[{"type":"dropout","rate":0.2},
            {"type":"dense","units":4,"activation":"sigmoid"},
            {"type":"dense","units":2,"activation":"softmax"}],
            "optimizer":{"type":"adam","learning_rate":0.0001},
            "loss":"sparse_categorical_crossentropy","metrics":["accuracy"]}"#,
    )
    .expect("fixture spec is valid")
}

pub fn cluster_samples(n: usize, seed: u64) -> Vec<Sample> {
    let ds = gaussian_clusters(n, 4, 1.5, seed);
    ds.features
        .into_iter()
        .zip(ds.labels)
        .map(|(f, l)| Sample::new(Tensor::vector(f), Tensor::vector(vec![l])))
        .collect()
}
