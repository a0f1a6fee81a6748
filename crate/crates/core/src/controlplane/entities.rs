use serde::{Deserialize, Serialize};

use super::ControlMessage;
use crate::codec::InputFormat;
use crate::mlengine::{MetricsReport, ModelSpec, TrainingConfig};

pub type Id = u64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntity {
    pub id: Id,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub spec: ModelSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Configuration {
    pub id: Id,
    pub name: String,
    pub model_ids: Vec<Id>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Pending,
    Training,
    Uploaded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobState {
    pub model_id: Id,
    pub status: JobStatus,
    #[serde(default)]
    pub restart_count: u32,
    #[serde(default)]
    pub result_id: Option<Id>,
    /// The control message the job trained from, once matched.
    #[serde(default)]
    pub control: Option<ControlMessage>,
    #[serde(default)]
    pub error: Option<String>,
}

impl JobState {
    pub fn pending(model_id: Id) -> Self {
        Self {
            model_id,
            status: JobStatus::Pending,
            restart_count: 0,
            result_id: None,
            control: None,
            error: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingDeployment {
    pub id: Id,
    pub configuration_id: Id,
    pub training_config: TrainingConfig,
    pub jobs: Vec<JobState>,
    pub created_ms: i64,
}

impl TrainingDeployment {
    pub fn job(&self, model_id: Id) -> Option<&JobState> {
        self.jobs.iter().find(|j| j.model_id == model_id)
    }

    pub fn job_mut(&mut self, model_id: Id) -> Option<&mut JobState> {
        self.jobs.iter_mut().find(|j| j.model_id == model_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResultStatus {
    Uploaded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultEntity {
    pub id: Id,
    pub deployment_id: Id,
    pub model_id: Id,
    pub metrics: MetricsReport,
    /// SHA-256 over the consumed record values, in consumption order.
    pub stream_digest: String,
    pub consumed_records: u64,
    pub weights_file: String,
    pub status: ResultStatus,
}

/// What a training job sends alongside its weight blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UploadMeta {
    pub metrics: MetricsReport,
    pub stream_digest: String,
    pub consumed_records: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferenceStatus {
    Running,
    Stopped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceDeployment {
    pub id: Id,
    pub result_id: Id,
    pub replicas: u32,
    pub input_topic: String,
    pub output_topic: String,
    pub input_format: InputFormat,
    pub input_config: String,
    pub group_id: String,
    pub status: InferenceStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Datastream {
    pub id: Id,
    pub message: ControlMessage,
    /// Offset of the message on the control topic.
    pub control_offset: u64,
    pub received_ms: i64,
}
