use super::{
    decode_raw, decode_structured, encode_raw, encode_structured, CodecError, InputFormat,
    RawConfig, Sample, StructuredConfig,
};

/// A validated decoding configuration for one of the input formats.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InputConfig {
    Raw(RawConfig),
    Structured(StructuredConfig),
}

impl InputConfig {
    pub fn format(&self) -> InputFormat {
        match self {
            InputConfig::Raw(_) => InputFormat::Raw,
            InputConfig::Structured(_) => InputFormat::Structured,
        }
    }

    /// Parses and validates `json` as the configuration for `format`.
    pub fn parse(format: InputFormat, json: &str) -> Result<Self, CodecError> {
        validate_config(format, json)
    }

    pub fn to_json(&self) -> String {
        match self {
            InputConfig::Raw(c) => serde_json::to_string(c),
            InputConfig::Structured(c) => serde_json::to_string(c),
        }
        .expect("config serializes")
    }

    /// Number of scalar features a model sees per record.
    pub fn feature_count(&self) -> usize {
        match self {
            InputConfig::Raw(c) => c.feature_count(),
            InputConfig::Structured(c) => c.data_scheme.len(),
        }
    }

    pub fn encode(&self, sample: &Sample) -> Result<Vec<u8>, CodecError> {
        match self {
            InputConfig::Raw(c) => encode_raw(sample, c),
            InputConfig::Structured(c) => encode_structured(sample, c),
        }
    }

    pub fn decode(&self, value: &[u8], with_label: bool) -> Result<Sample, CodecError> {
        match self {
            InputConfig::Raw(c) => decode_raw(value, c, with_label),
            InputConfig::Structured(c) => decode_structured(value, c, with_label),
        }
    }

    /// Structured schemes may carry strings; models only take numbers.
    pub fn is_numeric(&self) -> bool {
        match self {
            InputConfig::Raw(_) => true,
            InputConfig::Structured(c) => {
                !c.data_scheme.has_strings() && !c.label_scheme.has_strings()
            }
        }
    }
}

pub fn validate_config(format: InputFormat, config_json: &str) -> Result<InputConfig, CodecError> {
    let malformed = |e: serde_json::Error| CodecError::MalformedConfig(e.to_string());
    match format {
        InputFormat::Raw => {
            let cfg: RawConfig = serde_json::from_str(config_json).map_err(malformed)?;
            for (name, shape) in [
                ("data_reshape", &cfg.data_reshape),
                ("label_shape", &cfg.label_shape),
            ] {
                if shape.is_empty() || shape.contains(&0) {
                    return Err(CodecError::MalformedConfig(format!(
                        "{name} must be a non-empty list of positive integers"
                    )));
                }
            }
            Ok(InputConfig::Raw(cfg))
        }
        InputFormat::Structured => {
            let cfg: StructuredConfig = serde_json::from_str(config_json).map_err(malformed)?;
            cfg.data_scheme.validate("data_scheme")?;
            cfg.label_scheme.validate("label_scheme")?;
            Ok(InputConfig::Structured(cfg))
        }
    }
}
