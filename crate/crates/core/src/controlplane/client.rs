use std::io::Read;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::entities::{
    Configuration, Datastream, Id, InferenceDeployment, ModelEntity, ResultEntity,
    TrainingDeployment, UploadMeta,
};
use super::service::{InferenceView, NewInference};
use super::ControlMessage;
use crate::mlengine::{ModelSpec, TrainingConfig};

/// Body of every non-2xx backend response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub details: Vec<String>,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend returned {status} {}: {}", body.error, body.message)]
    Http { status: u16, body: ErrorBody },
    #[error("backend unreachable: {0}")]
    Transport(String),
    #[error("unexpected backend response: {0}")]
    Decode(String),
}

impl BackendError {
    pub fn status(&self) -> Option<u16> {
        match self {
            BackendError::Http { status, .. } => Some(*status),
            _ => None,
        }
    }

    pub fn code(&self) -> Option<&str> {
        match self {
            BackendError::Http { body, .. } => Some(&body.error),
            _ => None,
        }
    }

    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Http { status, .. } => *status >= 500,
            BackendError::Decode(_) => false,
        }
    }
}

fn from_ureq(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Status(status, resp) => {
            let text = resp.into_string().unwrap_or_default();
            let body = serde_json::from_str(&text).unwrap_or(ErrorBody {
                error: "http".into(),
                message: text,
                details: Vec::new(),
            });
            BackendError::Http { status, body }
        }
        ureq::Error::Transport(t) => BackendError::Transport(t.to_string()),
    }
}

/// Blocking REST client for the control plane.
#[derive(Debug, Clone)]
pub struct BackendClient {
    base: String,
    agent: ureq::Agent,
}

impl BackendClient {
    /// `base` is either `http://host:port` or a bare `host:port`.
    pub fn new(base: &str) -> Self {
        let base = if base.starts_with("http://") || base.starts_with("https://") {
            base.trim_end_matches('/').to_string()
        } else {
            format!("http://{}", base.trim_end_matches('/'))
        };
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(Duration::from_secs(5))
            .timeout_read(Duration::from_secs(60))
            .build();
        Self { base, agent }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn decode<T: DeserializeOwned>(resp: ureq::Response) -> Result<T, BackendError> {
        resp.into_json()
            .map_err(|e| BackendError::Decode(e.to_string()))
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, BackendError> {
        Self::decode(self.agent.get(&self.url(path)).call().map_err(from_ureq)?)
    }

    fn post<T: DeserializeOwned>(&self, path: &str, body: Value) -> Result<T, BackendError> {
        Self::decode(
            self.agent
                .post(&self.url(path))
                .send_json(body)
                .map_err(from_ureq)?,
        )
    }

    fn delete<T: DeserializeOwned>(&self, path: &str) -> Result<T, BackendError> {
        Self::decode(
            self.agent
                .delete(&self.url(path))
                .call()
                .map_err(from_ureq)?,
        )
    }

    pub fn create_model(
        &self,
        name: &str,
        description: &str,
        spec: &Value,
    ) -> Result<ModelEntity, BackendError> {
        self.post(
            "/models",
            json!({"name": name, "description": description, "spec": spec}),
        )
    }

    pub fn models(&self) -> Result<Vec<ModelEntity>, BackendError> {
        self.get("/models")
    }

    pub fn model(&self, id: Id) -> Result<ModelEntity, BackendError> {
        self.get(&format!("/models/{id}"))
    }

    pub fn delete_model(&self, id: Id) -> Result<ModelEntity, BackendError> {
        self.delete(&format!("/models/{id}"))
    }

    pub fn create_configuration(
        &self,
        name: &str,
        model_ids: &[Id],
    ) -> Result<Configuration, BackendError> {
        self.post(
            "/configurations",
            json!({"name": name, "model_ids": model_ids}),
        )
    }

    pub fn deploy_training(
        &self,
        configuration_id: Id,
        training_config: &TrainingConfig,
    ) -> Result<TrainingDeployment, BackendError> {
        self.post(
            "/deployments",
            json!({"configuration_id": configuration_id, "training_config": training_config}),
        )
    }

    pub fn deployment(&self, id: Id) -> Result<TrainingDeployment, BackendError> {
        self.get(&format!("/deployments/{id}"))
    }

    pub fn model_spec(&self, deployment_id: Id, model_id: Id) -> Result<ModelSpec, BackendError> {
        self.get(&format!(
            "/deployments/{deployment_id}/model-spec?model_id={model_id}"
        ))
    }

    /// Tells the backend the job matched `msg` and started training.
    pub fn mark_training(
        &self,
        deployment_id: Id,
        model_id: Id,
        msg: &ControlMessage,
    ) -> Result<(), BackendError> {
        let _: Value = self.post(
            &format!("/deployments/{deployment_id}/jobs/{model_id}/training"),
            serde_json::to_value(msg).expect("control message serializes"),
        )?;
        Ok(())
    }

    pub fn upload_result(
        &self,
        deployment_id: Id,
        model_id: Id,
        meta: &UploadMeta,
        weights: &[u8],
    ) -> Result<ResultEntity, BackendError> {
        let boundary = format!("kml-{:016x}", rand::random::<u64>());
        let mut body = Vec::with_capacity(weights.len() + 512);
        body.extend_from_slice(
            format!(
                "--{boundary}\r\nContent-Disposition: form-data; name=\"metrics\"\r\nContent-Type: application/json\r\n\r\n"
            )
            .as_bytes(),
        );
        body.extend_from_slice(&serde_json::to_vec(meta).expect("metrics serialize"));
        body.extend_from_slice(
            format!(
                "\r\n--{boundary}\r\nContent-Disposition: form-data; name=\"weights\"; filename=\"weights.kmlw\"\r\nContent-Type: application/octet-stream\r\n\r\n"
            )
            .as_bytes(),
        );
        body.extend_from_slice(weights);
        body.extend_from_slice(format!("\r\n--{boundary}--\r\n").as_bytes());
        let resp = self
            .agent
            .post(&self.url(&format!("/deployments/{deployment_id}/results/{model_id}")))
            .set(
                "Content-Type",
                &format!("multipart/form-data; boundary={boundary}"),
            )
            .send_bytes(&body)
            .map_err(from_ureq)?;
        Self::decode(resp)
    }

    pub fn results(&self) -> Result<Vec<ResultEntity>, BackendError> {
        self.get("/results")
    }

    pub fn result(&self, id: Id) -> Result<ResultEntity, BackendError> {
        self.get(&format!("/results/{id}"))
    }

    pub fn download(&self, result_id: Id) -> Result<Vec<u8>, BackendError> {
        let resp = self
            .agent
            .get(&self.url(&format!("/results/{result_id}/download")))
            .call()
            .map_err(from_ureq)?;
        let mut out = Vec::new();
        resp.into_reader()
            .read_to_end(&mut out)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(out)
    }

    pub fn deploy_inference(
        &self,
        req: &NewInference,
    ) -> Result<InferenceDeployment, BackendError> {
        self.post(
            "/inferences",
            serde_json::to_value(req).expect("request serializes"),
        )
    }

    pub fn inferences(&self) -> Result<Vec<InferenceView>, BackendError> {
        self.get("/inferences")
    }

    pub fn inference(&self, id: Id) -> Result<InferenceView, BackendError> {
        self.get(&format!("/inferences/{id}"))
    }

    pub fn stop_inference(&self, id: Id) -> Result<InferenceDeployment, BackendError> {
        self.delete(&format!("/inferences/{id}"))
    }

    pub fn datastreams(&self) -> Result<Vec<Datastream>, BackendError> {
        self.get("/datastreams")
    }

    pub fn replay(
        &self,
        datastream_id: Id,
        deployment_id: Id,
    ) -> Result<ControlMessage, BackendError> {
        self.post(
            &format!("/datastreams/{datastream_id}/replay"),
            json!({"deployment_id": deployment_id}),
        )
    }
}
