use std::collections::HashMap;
use std::io;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::entities::*;
use super::registry::Registry;
use super::supervisor::{Supervisor, TaskControl, TaskEvent, TaskKey};
use super::{ControlMessage, DEFAULT_BACKEND_ADDR, DEFAULT_CONTROL_TOPIC, DEFAULT_RESTARTS};
use crate::inferworker::{self, ReplicaContext, ReplicaStats, StatsSnapshot};
use crate::logbroker::{
    BrokerClient, BrokerError, ClientError, OffsetSpec, RetentionPolicy, DEFAULT_BROKER_ADDR,
};
use crate::mlengine::{load_weights, parse_model_spec, MlError, ModelSpec, TrainingConfig};
use crate::trainworker::{self, FaultPlan, JobContext};

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("{0}")]
    BadRequest(String),
    #[error("{kind} {id} not found")]
    NotFound { kind: &'static str, id: Id },
    #[error("{message}")]
    Conflict { code: &'static str, message: String },
    #[error("weights rejected: {0}")]
    Weights(MlError),
    #[error("stream expired: {spec} is no longer retained (retained from offset {base})")]
    StreamExpired { spec: OffsetSpec, base: u64 },
    #[error("broker: {0}")]
    Broker(ClientError),
    #[error("storage: {0}")]
    Storage(#[from] io::Error),
}

impl ApiError {
    pub fn status(&self) -> u16 {
        match self {
            ApiError::Validation(_) | ApiError::BadRequest(_) | ApiError::Weights(_) => 400,
            ApiError::NotFound { .. } => 404,
            ApiError::Conflict { .. } => 409,
            ApiError::StreamExpired { .. } => 410,
            ApiError::Broker(e) if e.is_transient() => 503,
            ApiError::Broker(_) => 502,
            ApiError::Storage(_) => 500,
        }
    }

    pub fn code(&self) -> String {
        match self {
            ApiError::Validation(_) => "validation".into(),
            ApiError::BadRequest(_) => "bad_request".into(),
            ApiError::NotFound { kind, .. } => format!("unknown_{kind}"),
            ApiError::Conflict { code, .. } => (*code).into(),
            ApiError::Weights(MlError::SpecMismatch(_)) => "spec_mismatch".into(),
            ApiError::Weights(_) => "corrupt_weights".into(),
            ApiError::StreamExpired { .. } => "stream_expired".into(),
            ApiError::Broker(_) => "broker_unavailable".into(),
            ApiError::Storage(_) => "storage".into(),
        }
    }

    pub fn details(&self) -> Vec<String> {
        match self {
            ApiError::Validation(v) => v.clone(),
            ApiError::StreamExpired { spec, .. } => vec![spec.to_string()],
            _ => Vec::new(),
        }
    }

    fn not_found(kind: &'static str, id: Id) -> Self {
        ApiError::NotFound { kind, id }
    }

    fn conflict(code: &'static str, message: impl Into<String>) -> Self {
        ApiError::Conflict {
            code,
            message: message.into(),
        }
    }
}

/// Backend settings; every field has an environment variable.
#[derive(Debug, Clone)]
pub struct BackendConfig {
    /// `BACKEND_ADDR`
    pub addr: String,
    /// `BROKER_ADDR`
    pub broker_addr: String,
    /// `CONTROL_TOPIC`
    pub control_topic: String,
    /// `DATA_DIR`
    pub data_dir: PathBuf,
    /// `SUPERVISOR_RESTARTS`
    pub max_restarts: u32,
    pub restart_delay: Duration,
    pub fetch_batch: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            addr: DEFAULT_BACKEND_ADDR.into(),
            broker_addr: DEFAULT_BROKER_ADDR.into(),
            control_topic: DEFAULT_CONTROL_TOPIC.into(),
            data_dir: PathBuf::from("kml-data"),
            max_restarts: DEFAULT_RESTARTS,
            restart_delay: Duration::from_millis(100),
            fetch_batch: 100,
        }
    }
}

impl BackendConfig {
    pub fn from_env() -> Self {
        let mut c = Self::default();
        if let Ok(v) = std::env::var("BACKEND_ADDR") {
            c.addr = v;
        }
        if let Ok(v) = std::env::var("BROKER_ADDR") {
            c.broker_addr = v;
        }
        if let Ok(v) = std::env::var("CONTROL_TOPIC") {
            c.control_topic = v;
        }
        if let Ok(v) = std::env::var("DATA_DIR") {
            c.data_dir = v.into();
        }
        if let Some(v) = std::env::var("SUPERVISOR_RESTARTS")
            .ok()
            .and_then(|v| v.parse().ok())
        {
            c.max_restarts = v;
        }
        c
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewModel {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub spec: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewConfiguration {
    pub name: String,
    pub model_ids: Vec<Id>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewDeployment {
    pub configuration_id: Id,
    pub training_config: TrainingConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewInference {
    pub result_id: Id,
    pub replicas: u32,
    pub input_topic: String,
    pub output_topic: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceView {
    #[serde(flatten)]
    pub deployment: InferenceDeployment,
    pub live_replicas: usize,
    pub stats: StatsSnapshot,
}

fn now_ms() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0)
}

/// Registry, supervisor and broker glue behind the REST surface.
pub struct ControlPlane {
    cfg: BackendConfig,
    backend_url: String,
    registry: Arc<Registry>,
    supervisor: Supervisor,
    faults: Arc<Mutex<HashMap<(Id, Id), FaultPlan>>>,
    replica_stats: Mutex<HashMap<Id, Vec<Arc<ReplicaStats>>>>,
    // serializes the check-then-write sequences below
    write: Mutex<()>,
}

impl std::fmt::Debug for ControlPlane {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ControlPlane")
            .field("backend_url", &self.backend_url)
            .field("data_dir", &self.cfg.data_dir)
            .finish_non_exhaustive()
    }
}

impl ControlPlane {
    /// Opens the registry. Workers reach the backend at `backend_url`.
    pub fn open(cfg: BackendConfig, backend_url: String) -> io::Result<Self> {
        let registry = Arc::new(Registry::open(&cfg.data_dir)?);
        let supervisor = Supervisor::new(cfg.max_restarts, cfg.restart_delay);
        let reg = Arc::clone(&registry);
        supervisor.set_listener(move |ev| record_job_event(&reg, ev));
        Ok(Self {
            cfg,
            backend_url,
            registry,
            supervisor,
            faults: Arc::default(),
            replica_stats: Mutex::default(),
            write: Mutex::new(()),
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.cfg
    }

    pub fn backend_url(&self) -> &str {
        &self.backend_url
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn supervisor(&self) -> &Supervisor {
        &self.supervisor
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, ()> {
        self.write.lock().expect("control plane poisoned")
    }

    fn broker(&self) -> Result<BrokerClient, ApiError> {
        BrokerClient::connect(self.cfg.broker_addr.as_str()).map_err(ApiError::Broker)
    }

    /// Restarts unfinished jobs and running inferences after a reload.
    pub fn resume(&self) {
        for dep in self.registry.list::<TrainingDeployment>() {
            for job in &dep.jobs {
                if matches!(job.status, JobStatus::Pending | JobStatus::Training) {
                    self.spawn_job(&dep, job);
                }
            }
        }
        for inf in self.registry.list::<InferenceDeployment>() {
            if inf.status == InferenceStatus::Running {
                self.spawn_replicas(&inf);
            }
        }
    }

    /// Makes the job for `(deployment_id, model_id)` panic after reading
    /// `plan.crash_after_records` records on its first attempts.
    pub fn inject_fault(&self, deployment_id: Id, model_id: Id, plan: FaultPlan) {
        self.faults
            .lock()
            .expect("fault table poisoned")
            .insert((deployment_id, model_id), plan);
    }

    // models

    pub fn create_model(&self, req: NewModel) -> Result<ModelEntity, ApiError> {
        let mut errs = Vec::new();
        if req.name.trim().is_empty() {
            errs.push("name must not be empty".to_string());
        }
        let spec = match parse_model_spec(&req.spec.to_string()) {
            Ok(s) => Some(s),
            Err(MlError::InvalidSpec(v)) => {
                errs.extend(v);
                None
            }
            Err(e) => {
                errs.push(e.to_string());
                None
            }
        };
        match spec {
            Some(spec) if errs.is_empty() => Ok(self.registry.create(|id| ModelEntity {
                id,
                name: req.name,
                description: req.description,
                spec,
            })?),
            _ => Err(ApiError::Validation(errs)),
        }
    }

    pub fn models(&self) -> Vec<ModelEntity> {
        self.registry.list()
    }

    pub fn model(&self, id: Id) -> Result<ModelEntity, ApiError> {
        self.registry
            .get(id)
            .ok_or(ApiError::not_found("model", id))
    }

    pub fn delete_model(&self, id: Id) -> Result<ModelEntity, ApiError> {
        let _g = self.lock();
        self.registry
            .remove_if::<ModelEntity, ApiError>(id, |s| {
                match s
                    .configurations
                    .values()
                    .find(|c| c.model_ids.contains(&id))
                {
                    Some(c) => Err(ApiError::conflict(
                        "model_in_use",
                        format!("model {id} is part of configuration {}", c.id),
                    )),
                    None => Ok(()),
                }
            })?
            .ok_or(ApiError::not_found("model", id))
    }

    // configurations

    pub fn create_configuration(&self, req: NewConfiguration) -> Result<Configuration, ApiError> {
        let _g = self.lock();
        let mut errs = Vec::new();
        if req.name.trim().is_empty() {
            errs.push("name must not be empty".to_string());
        }
        if req.model_ids.is_empty() {
            errs.push("model_ids must not be empty".to_string());
        }
        let mut seen = std::collections::HashSet::new();
        for id in &req.model_ids {
            if self.registry.get::<ModelEntity>(*id).is_none() {
                errs.push(format!("model {id} does not exist"));
            }
            if !seen.insert(id) {
                errs.push(format!("model {id} listed twice"));
            }
        }
        if !errs.is_empty() {
            return Err(ApiError::Validation(errs));
        }
        Ok(self.registry.create(|id| Configuration {
            id,
            name: req.name,
            model_ids: req.model_ids,
        })?)
    }

    pub fn configurations(&self) -> Vec<Configuration> {
        self.registry.list()
    }

    pub fn configuration(&self, id: Id) -> Result<Configuration, ApiError> {
        self.registry
            .get(id)
            .ok_or(ApiError::not_found("configuration", id))
    }

    // training

    pub fn deploy_training(&self, req: NewDeployment) -> Result<TrainingDeployment, ApiError> {
        let dep = {
            let _g = self.lock();
            let conf = self.configuration(req.configuration_id)?;
            match req.training_config.validate() {
                Err(MlError::InvalidConfig(v)) => return Err(ApiError::Validation(v)),
                Err(e) => return Err(ApiError::BadRequest(e.to_string())),
                Ok(()) => {}
            }
            self.registry.create(|id| TrainingDeployment {
                id,
                configuration_id: conf.id,
                training_config: req.training_config,
                jobs: conf
                    .model_ids
                    .iter()
                    .map(|m| JobState::pending(*m))
                    .collect(),
                created_ms: now_ms(),
            })?
        };
        for job in &dep.jobs {
            self.spawn_job(&dep, job);
        }
        Ok(dep)
    }

    fn spawn_job(&self, dep: &TrainingDeployment, job: &JobState) {
        let ctx = JobContext {
            backend_url: self.backend_url.clone(),
            broker_addr: self.cfg.broker_addr.clone(),
            control_topic: self.cfg.control_topic.clone(),
            deployment_id: dep.id,
            model_id: job.model_id,
            training_config: dep.training_config.clone(),
            fetch_batch: self.cfg.fetch_batch,
            poll_interval_ms: 20,
        };
        let faults = Arc::clone(&self.faults);
        let key = TaskKey::Job {
            deployment_id: dep.id,
            model_id: job.model_id,
        };
        self.supervisor.spawn_job(
            key,
            job.restart_count,
            Arc::new(move |ctl: &TaskControl| {
                let fault = || {
                    faults
                        .lock()
                        .expect("fault table poisoned")
                        .get(&(ctx.deployment_id, ctx.model_id))
                        .copied()
                };
                trainworker::run_training_job(&ctx, ctl, fault)
                    .map(|_| ())
                    .map_err(|e| e.into_failure())
            }),
        );
    }

    pub fn deployments(&self) -> Vec<TrainingDeployment> {
        self.registry.list()
    }

    pub fn deployment(&self, id: Id) -> Result<TrainingDeployment, ApiError> {
        self.registry
            .get(id)
            .ok_or(ApiError::not_found("deployment", id))
    }

    fn job(
        &self,
        deployment_id: Id,
        model_id: Id,
    ) -> Result<(TrainingDeployment, JobState), ApiError> {
        let dep = self.deployment(deployment_id)?;
        let job = dep
            .job(model_id)
            .cloned()
            .ok_or(ApiError::not_found("job", model_id))?;
        Ok((dep, job))
    }

    pub fn model_spec(&self, deployment_id: Id, model_id: Id) -> Result<ModelSpec, ApiError> {
        self.job(deployment_id, model_id)?;
        Ok(self.model(model_id)?.spec)
    }

    /// A job matched its control message and started training.
    pub fn mark_training(
        &self,
        deployment_id: Id,
        model_id: Id,
        msg: ControlMessage,
    ) -> Result<JobState, ApiError> {
        msg.validate().map_err(ApiError::BadRequest)?;
        let _g = self.lock();
        self.job(deployment_id, model_id)?;
        let updated =
            self.registry
                .update::<TrainingDeployment, _, ApiError>(deployment_id, |dep| {
                    let job = dep.job_mut(model_id).expect("checked above");
                    if job.status == JobStatus::Uploaded {
                        return Err(ApiError::conflict(
                            "already_uploaded",
                            "job already uploaded its result",
                        ));
                    }
                    job.status = JobStatus::Training;
                    job.control = Some(msg);
                    Ok(job.clone())
                })?;
        updated.ok_or(ApiError::not_found("deployment", deployment_id))
    }

    pub fn upload_result(
        &self,
        deployment_id: Id,
        model_id: Id,
        meta: UploadMeta,
        weights: &[u8],
    ) -> Result<ResultEntity, ApiError> {
        let _g = self.lock();
        let (_, job) = self.job(deployment_id, model_id)?;
        match job.status {
            JobStatus::Uploaded => {
                return Err(ApiError::conflict(
                    "already_uploaded",
                    "job already uploaded its result",
                ))
            }
            JobStatus::Training => {}
            s => {
                return Err(ApiError::conflict(
                    "job_not_training",
                    format!("job is {s:?}, expected training").to_lowercase(),
                ))
            }
        }
        let spec = self.model(model_id)?.spec;
        load_weights(&spec, weights).map_err(ApiError::Weights)?;
        let result = self.registry.try_create::<_, ApiError>(|id| {
            let weights_file = format!("{id}.kmlw");
            self.registry.put_blob(&weights_file, weights)?;
            Ok(ResultEntity {
                id,
                deployment_id,
                model_id,
                metrics: meta.metrics,
                stream_digest: meta.stream_digest,
                consumed_records: meta.consumed_records,
                weights_file,
                status: ResultStatus::Uploaded,
            })
        })?;
        self.registry
            .update::<TrainingDeployment, _, ApiError>(deployment_id, |dep| {
                let job = dep.job_mut(model_id).expect("checked above");
                job.status = JobStatus::Uploaded;
                job.result_id = Some(result.id);
                job.error = None;
                Ok(())
            })?;
        Ok(result)
    }

    pub fn results(&self) -> Vec<ResultEntity> {
        self.registry.list()
    }

    pub fn result(&self, id: Id) -> Result<ResultEntity, ApiError> {
        self.registry
            .get(id)
            .ok_or(ApiError::not_found("result", id))
    }

    pub fn download(&self, id: Id) -> Result<Vec<u8>, ApiError> {
        let r = self.result(id)?;
        if r.status != ResultStatus::Uploaded {
            return Err(ApiError::conflict(
                "result_not_uploaded",
                format!("result {id} is not uploaded"),
            ));
        }
        Ok(self.registry.read_blob(&r.weights_file)?)
    }

    /// The control message a result was trained from.
    pub fn training_stream(&self, result: &ResultEntity) -> Option<ControlMessage> {
        let from_job = self
            .registry
            .get::<TrainingDeployment>(result.deployment_id)
            .and_then(|d| d.job(result.model_id).and_then(|j| j.control.clone()));
        from_job.or_else(|| {
            self.registry
                .list::<Datastream>()
                .into_iter()
                .rev()
                .find(|d| d.message.deployment_id == result.deployment_id)
                .map(|d| d.message)
        })
    }

    // inference

    pub fn deploy_inference(&self, req: NewInference) -> Result<InferenceDeployment, ApiError> {
        let result = self.result(req.result_id)?;
        if result.status != ResultStatus::Uploaded {
            return Err(ApiError::conflict(
                "result_not_uploaded",
                format!("result {} is not uploaded", result.id),
            ));
        }
        if req.replicas == 0 {
            return Err(ApiError::Validation(vec![
                "replicas must be at least 1".into()
            ]));
        }
        if req.input_topic == req.output_topic {
            return Err(ApiError::Validation(vec![
                "input and output topics must differ".into(),
            ]));
        }
        let msg = self.training_stream(&result).ok_or_else(|| {
            ApiError::conflict(
                "no_stream",
                format!("no control message recorded for result {}", result.id),
            )
        })?;
        let mut broker = self.broker()?;
        let topic_err = |e: ClientError| match e {
            ClientError::Broker(b @ BrokerError::InvalidName(_)) => {
                ApiError::Validation(vec![b.to_string()])
            }
            e => ApiError::Broker(e),
        };
        broker
            .ensure_topic(&req.input_topic, req.replicas, RetentionPolicy::default())
            .map_err(topic_err)?;
        broker
            .ensure_topic(&req.output_topic, 1, RetentionPolicy::default())
            .map_err(topic_err)?;
        let inf = self.registry.create(|id| InferenceDeployment {
            id,
            result_id: result.id,
            replicas: req.replicas,
            input_topic: req.input_topic,
            output_topic: req.output_topic,
            input_format: msg.input_format,
            input_config: msg.input_config,
            group_id: inferworker::group_id(id),
            status: InferenceStatus::Running,
        })?;
        self.spawn_replicas(&inf);
        Ok(inf)
    }

    fn spawn_replicas(&self, inf: &InferenceDeployment) {
        let stats: Vec<Arc<ReplicaStats>> = (0..inf.replicas).map(|_| Arc::default()).collect();
        for (index, st) in (0..inf.replicas).zip(&stats) {
            let ctx = ReplicaContext {
                backend_url: self.backend_url.clone(),
                broker_addr: self.cfg.broker_addr.clone(),
                inference_id: inf.id,
                replica_index: index,
                result_id: inf.result_id,
                input_topic: inf.input_topic.clone(),
                output_topic: inf.output_topic.clone(),
                input_format: inf.input_format,
                input_config: inf.input_config.clone(),
                group_id: inf.group_id.clone(),
                poll_interval_ms: 5,
            };
            let st = Arc::clone(st);
            self.supervisor.spawn_replica(
                TaskKey::Replica {
                    inference_id: inf.id,
                    index,
                },
                Arc::new(move |ctl: &TaskControl| {
                    inferworker::run_inference_loop(&ctx, ctl, &st).map_err(|e| e.into_failure())
                }),
            );
        }
        self.replica_stats
            .lock()
            .expect("stats poisoned")
            .insert(inf.id, stats);
    }

    fn view(&self, inf: InferenceDeployment) -> InferenceView {
        let mut stats = StatsSnapshot::default();
        if let Some(v) = self
            .replica_stats
            .lock()
            .expect("stats poisoned")
            .get(&inf.id)
        {
            for s in v {
                let s = s.snapshot();
                stats.predictions += s.predictions;
                stats.decode_errors += s.decode_errors;
            }
        }
        InferenceView {
            live_replicas: self.supervisor.live_replicas(inf.id),
            deployment: inf,
            stats,
        }
    }

    pub fn inferences(&self) -> Vec<InferenceView> {
        self.registry
            .list::<InferenceDeployment>()
            .into_iter()
            .map(|i| self.view(i))
            .collect()
    }

    pub fn inference(&self, id: Id) -> Result<InferenceView, ApiError> {
        let inf = self
            .registry
            .get::<InferenceDeployment>(id)
            .ok_or(ApiError::not_found("inference", id))?;
        Ok(self.view(inf))
    }

    pub fn stop_inference(&self, id: Id) -> Result<InferenceDeployment, ApiError> {
        let inf = self
            .registry
            .get::<InferenceDeployment>(id)
            .ok_or(ApiError::not_found("inference", id))?;
        for index in 0..inf.replicas {
            self.supervisor.stop(TaskKey::Replica {
                inference_id: id,
                index,
            });
        }
        self.registry
            .update::<InferenceDeployment, _, ApiError>(id, |i| {
                i.status = InferenceStatus::Stopped;
                Ok(i.clone())
            })?
            .ok_or(ApiError::not_found("inference", id))
    }

    // data streams

    /// Called by the control logger for each control topic record.
    pub fn record_control(
        &self,
        offset: u64,
        value: &[u8],
    ) -> Result<Option<Datastream>, ApiError> {
        match ControlMessage::from_bytes(value) {
            Ok(message) => Ok(Some(self.registry.create(|id| Datastream {
                id,
                message,
                control_offset: offset,
                received_ms: now_ms(),
            })?)),
            Err(e) => {
                tracing::warn!(offset, "ignoring malformed control message: {e}");
                Ok(None)
            }
        }
    }

    pub fn datastreams(&self) -> Vec<Datastream> {
        self.registry.list()
    }

    /// Re-publishes a logged control message for another deployment. No data
    /// records are sent again; the target's jobs read the original slice.
    pub fn replay(&self, datastream_id: Id, deployment_id: Id) -> Result<ControlMessage, ApiError> {
        let ds = self
            .registry
            .get::<Datastream>(datastream_id)
            .ok_or(ApiError::not_found("datastream", datastream_id))?;
        let dep = self.deployment(deployment_id)?;
        if !dep.jobs.iter().any(|j| j.status == JobStatus::Pending) {
            return Err(ApiError::conflict(
                "no_pending_jobs",
                format!("deployment {deployment_id} has no job waiting for a stream"),
            ));
        }
        let mut broker = self.broker()?;
        let mut offsets: HashMap<String, Vec<crate::logbroker::PartitionOffsets>> = HashMap::new();
        for spec in &ds.message.topics {
            if !offsets.contains_key(&spec.topic) {
                let o = match broker.offsets(&spec.topic) {
                    Ok(o) => o,
                    Err(ClientError::Broker(BrokerError::UnknownTopic(_))) => Vec::new(),
                    Err(e) => return Err(ApiError::Broker(e)),
                };
                offsets.insert(spec.topic.clone(), o);
            }
            let part = offsets[&spec.topic]
                .iter()
                .find(|p| p.partition == spec.partition);
            match part {
                Some(p) if spec.offset >= p.base || spec.length == 0 => {}
                Some(p) => {
                    return Err(ApiError::StreamExpired {
                        spec: spec.clone(),
                        base: p.base,
                    })
                }
                None => {
                    return Err(ApiError::StreamExpired {
                        spec: spec.clone(),
                        base: 0,
                    })
                }
            }
        }
        let mut msg = ds.message;
        msg.deployment_id = deployment_id;
        broker
            .ensure_topic(&self.cfg.control_topic, 1, RetentionPolicy::default())
            .map_err(ApiError::Broker)?;
        broker
            .produce(&self.cfg.control_topic, Some(0), None, &msg.to_bytes())
            .map_err(ApiError::Broker)?;
        tracing::info!(datastream_id, deployment_id, "control message replayed");
        Ok(msg)
    }

    /// Stops every supervised worker.
    pub fn shutdown(&self) {
        self.supervisor.stop_all();
    }
}

/// Mirrors job restarts and failures into the registry.
fn record_job_event(registry: &Registry, ev: &TaskEvent) {
    let (key, restart_count, failed) = match ev {
        TaskEvent::Restarting { key, restart_count } => (*key, *restart_count, None),
        TaskEvent::GaveUp {
            key,
            restart_count,
            message,
        } => (*key, *restart_count, Some(message.clone())),
        _ => return,
    };
    let TaskKey::Job {
        deployment_id,
        model_id,
    } = key
    else {
        return;
    };
    let res = registry.update::<TrainingDeployment, _, io::Error>(deployment_id, |dep| {
        if let Some(job) = dep.job_mut(model_id) {
            job.restart_count = restart_count;
            if let Some(m) = failed {
                job.status = JobStatus::Failed;
                job.error = Some(m);
            }
        }
        Ok(())
    });
    if let Err(e) = res {
        tracing::error!("recording job event: {e}");
    }
}

/// Parses a JSON request body; shape errors become 400s.
pub(crate) fn parse_body<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::BadRequest(format!("invalid request body: {e}")))
}
