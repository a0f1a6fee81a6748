use serde::{Deserialize, Serialize};

use crate::codec::{validate_config, CodecError, InputConfig, InputFormat};
use crate::logbroker::OffsetSpec;

/// Announces where a training stream lives and how to read it.
///
/// Published on the control topic once the data records are in the log;
/// deployed training jobs wait for the one naming their deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlMessage {
    pub deployment_id: u64,
    pub topics: Vec<OffsetSpec>,
    pub input_format: InputFormat,
    /// JSON text of the format-specific decoding configuration.
    pub input_config: String,
    pub validation_rate: f64,
    pub total_msg: u64,
}

impl ControlMessage {
    pub fn validate(&self) -> Result<InputConfig, String> {
        if !(0.0..1.0).contains(&self.validation_rate) {
            return Err(format!(
                "validation_rate {} outside [0, 1)",
                self.validation_rate
            ));
        }
        if self.total_msg == 0 {
            return Err("total_msg must be at least 1".into());
        }
        let sum: u64 = self.topics.iter().map(|t| t.length).sum();
        if sum != self.total_msg {
            return Err(format!(
                "offset specs address {sum} records but total_msg is {}",
                self.total_msg
            ));
        }
        validate_config(self.input_format, &self.input_config)
            .map_err(|e: CodecError| e.to_string())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("control message serializes")
    }

    /// Parses and validates a control topic record.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        let msg: ControlMessage = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
        msg.validate()?;
        Ok(msg)
    }
}
