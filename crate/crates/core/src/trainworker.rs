//! Run-to-completion training job.
//!
//! 1. fetch the model spec from the backend
//! 2. scan the control topic for a message naming this deployment
//! 3. read exactly `total_msg` records across its offset specs, in order
//! 4. decode, split head/tail into training and evaluation sets
//! 5. train, evaluate, upload weights and metrics

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::{CodecError, Sample};
use crate::controlplane::{
    BackendClient, BackendError, ControlMessage, Id, ResultEntity, TaskControl, TaskFailure,
    UploadMeta, DEFAULT_CONTROL_TOPIC,
};
use crate::logbroker::{BrokerClient, BrokerError, ClientError, OffsetSpec, Record};
use crate::mlengine::{evaluate, init_params, save_weights, train, MlError, TrainingConfig};
use crate::retry::Backoff;

/// Everything a job needs to run. Serialized into `KAFKA_ML_JOB` when the job
/// runs as its own process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobContext {
    pub backend_url: String,
    pub broker_addr: String,
    #[serde(default = "default_control_topic")]
    pub control_topic: String,
    pub deployment_id: Id,
    pub model_id: Id,
    pub training_config: TrainingConfig,
    #[serde(default = "default_fetch_batch")]
    pub fetch_batch: usize,
    #[serde(default = "default_poll_ms")]
    pub poll_interval_ms: u64,
}

fn default_control_topic() -> String {
    DEFAULT_CONTROL_TOPIC.to_string()
}

fn default_fetch_batch() -> usize {
    100
}

fn default_poll_ms() -> u64 {
    20
}

/// Test hook: panic once `crash_after_records` records have been read, on
/// each of the first `crash_attempts` attempts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultPlan {
    pub crash_after_records: u64,
    pub crash_attempts: u32,
}

#[derive(Debug, Error)]
pub enum JobError {
    #[error("stream expired: {spec} starts below the retained base offset {base}")]
    StreamExpired { spec: OffsetSpec, base: u64 },
    #[error("slice {spec} runs past the partition end {end}")]
    SliceBeyondEnd { spec: OffsetSpec, end: u64 },
    #[error("record {index} of the stream does not decode: {source}")]
    Decode { index: usize, source: CodecError },
    #[error("control message rejected: {0}")]
    Control(String),
    #[error(transparent)]
    Model(#[from] MlError),
    #[error(transparent)]
    Broker(ClientError),
    #[error(transparent)]
    Backend(BackendError),
    #[error("killed")]
    Killed,
}

impl JobError {
    /// Whether a restart could possibly succeed.
    pub fn is_permanent(&self) -> bool {
        match self {
            JobError::Killed => false,
            JobError::Broker(e) => !e.is_transient(),
            JobError::Backend(e) => !e.is_transient(),
            _ => true,
        }
    }

    pub fn into_failure(self) -> TaskFailure {
        if self.is_permanent() {
            TaskFailure::permanent(self.to_string())
        } else {
            TaskFailure::transient(self.to_string())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobOutcome {
    pub result: ResultEntity,
    pub stream_digest: String,
    pub consumed_records: u64,
}

/// Number of leading samples used for training: `ceil((1 - rate) * n)`.
pub fn train_count(n: usize, validation_rate: f64) -> usize {
    // the guard keeps 0.8 * 275 = 220.00000000000003 from rounding up to 221
    let exact = (1.0 - validation_rate) * n as f64;
    ((exact - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Sequential split: the head trains, the tail evaluates.
pub fn split_stream<T>(mut samples: Vec<T>, validation_rate: f64) -> (Vec<T>, Vec<T>) {
    let tail = samples.split_off(train_count(samples.len(), validation_rate));
    (samples, tail)
}

/// A broker connection that reconnects with backoff on transport errors.
pub(crate) struct BrokerSession {
    addr: String,
    client: Option<BrokerClient>,
}

impl BrokerSession {
    pub fn new(addr: &str) -> Self {
        Self {
            addr: addr.to_string(),
            client: None,
        }
    }

    pub fn call<T>(
        &mut self,
        ctl: &TaskControl,
        mut op: impl FnMut(&mut BrokerClient) -> Result<T, ClientError>,
    ) -> Result<T, ClientError> {
        let mut backoff = Backoff::default();
        loop {
            let res = match self.client.as_mut() {
                Some(c) => op(c),
                None => match BrokerClient::connect(self.addr.as_str()) {
                    Ok(c) => {
                        self.client = Some(c);
                        continue;
                    }
                    Err(e) => Err(e),
                },
            };
            match res {
                Err(e) if e.is_transient() => {
                    tracing::debug!("broker call failed, retrying: {e}");
                    self.client = None;
                    if !backoff.wait(ctl) {
                        return Err(e);
                    }
                }
                other => return other,
            }
        }
    }
}

pub(crate) fn with_backend_retry<T>(
    ctl: &TaskControl,
    mut op: impl FnMut() -> Result<T, BackendError>,
) -> Result<T, BackendError> {
    let mut backoff = Backoff::default();
    loop {
        match op() {
            Err(e) if e.is_transient() => {
                tracing::debug!("backend call failed, retrying: {e}");
                if !backoff.wait(ctl) {
                    return Err(e);
                }
            }
            other => return other,
        }
    }
}

fn check_exit(ctl: &TaskControl) -> Result<(), JobError> {
    if ctl.should_exit() {
        Err(JobError::Killed)
    } else {
        Ok(())
    }
}

/// Scans the control topic from its earliest retained record until a
/// message for `deployment_id` shows up.
fn await_control(
    ctx: &JobContext,
    ctl: &TaskControl,
    session: &mut BrokerSession,
) -> Result<ControlMessage, JobError> {
    let poll = std::time::Duration::from_millis(ctx.poll_interval_ms);
    let mut offset = 0;
    loop {
        check_exit(ctl)?;
        let batch = session.call(ctl, |c| c.fetch(&ctx.control_topic, 0, offset, 100));
        let records = match batch {
            Ok(r) => r,
            Err(ClientError::Broker(BrokerError::OffsetPurged { base, .. })) => {
                offset = base;
                continue;
            }
            // the control topic appears with the first stream
            Err(ClientError::Broker(BrokerError::UnknownTopic(_))) => Vec::new(),
            Err(e) => return Err(JobError::Broker(e)),
        };
        if records.is_empty() {
            ctl.sleep(poll);
            continue;
        }
        for r in records {
            offset = r.offset + 1;
            match ControlMessage::from_bytes(&r.value) {
                Ok(msg) if msg.deployment_id == ctx.deployment_id => return Ok(msg),
                Ok(_) => {}
                Err(e) => {
                    tracing::debug!(offset = r.offset, "skipping malformed control record: {e}")
                }
            }
        }
    }
}

/// Reads every record addressed by `msg`, hashing values in consumption order.
fn read_slice(
    ctx: &JobContext,
    ctl: &TaskControl,
    session: &mut BrokerSession,
    msg: &ControlMessage,
    fault: Option<FaultPlan>,
) -> Result<(Vec<Record>, String), JobError> {
    let mut digest = Sha256::new();
    let mut out = Vec::with_capacity(msg.total_msg as usize);
    for spec in &msg.topics {
        let mut pos = spec.offset;
        while pos < spec.end() {
            check_exit(ctl)?;
            let want = (spec.end() - pos).min(ctx.fetch_batch.max(1) as u64) as usize;
            let records = session
                .call(ctl, |c| c.fetch(&spec.topic, spec.partition, pos, want))
                .map_err(|e| match e {
                    ClientError::Broker(BrokerError::OffsetPurged { base, .. }) => {
                        JobError::StreamExpired {
                            spec: spec.clone(),
                            base,
                        }
                    }
                    ClientError::Broker(BrokerError::UnknownTopic(_)) => JobError::StreamExpired {
                        spec: spec.clone(),
                        base: 0,
                    },
                    e => JobError::Broker(e),
                })?;
            if records.is_empty() {
                let end = session
                    .call(ctl, |c| c.offsets(&spec.topic))
                    .map_err(JobError::Broker)?
                    .iter()
                    .find(|p| p.partition == spec.partition)
                    .map_or(0, |p| p.end);
                return Err(JobError::SliceBeyondEnd {
                    spec: spec.clone(),
                    end,
                });
            }
            for r in records.into_iter().take(want) {
                pos = r.offset + 1;
                digest.update(&r.value);
                out.push(r);
                if let Some(f) = fault {
                    if ctl.attempt() < f.crash_attempts && out.len() as u64 >= f.crash_after_records
                    {
                        panic!("injected fault after {} records", out.len());
                    }
                }
            }
        }
    }
    Ok((out, hex::encode(digest.finalize())))
}

/// Runs one attempt of the job end to end. `fault` is consulted once the
/// control message has matched, so a plan injected while the job waits still
/// applies.
pub fn run_training_job(
    ctx: &JobContext,
    ctl: &TaskControl,
    fault: impl Fn() -> Option<FaultPlan>,
) -> Result<JobOutcome, JobError> {
    let backend = BackendClient::new(&ctx.backend_url);
    let (d, m) = (ctx.deployment_id, ctx.model_id);
    let spec = with_backend_retry(ctl, || backend.model_spec(d, m)).map_err(JobError::Backend)?;
    ctx.training_config.validate()?;

    let mut session = BrokerSession::new(&ctx.broker_addr);
    let msg = await_control(ctx, ctl, &mut session)?;
    let input = msg.validate().map_err(JobError::Control)?;
    if !input.is_numeric() {
        return Err(JobError::Control(
            "string-typed fields cannot feed a model; map them to numbers first".into(),
        ));
    }
    with_backend_retry(ctl, || backend.mark_training(d, m, &msg)).map_err(JobError::Backend)?;
    tracing::info!(
        deployment = d,
        model = m,
        total = msg.total_msg,
        "control message matched"
    );

    let (records, stream_digest) = read_slice(ctx, ctl, &mut session, &msg, fault())?;
    drop(session);
    let samples = records
        .iter()
        .enumerate()
        .map(|(index, r)| {
            input
                .decode(&r.value, true)
                .map_err(|source| JobError::Decode { index, source })
        })
        .collect::<Result<Vec<Sample>, _>>()?;
    let consumed_records = samples.len() as u64;
    let (training, evaluation) = split_stream(samples, msg.validation_rate);

    let cfg = &ctx.training_config;
    let mut model = train(&init_params(&spec, cfg.seed), &training, cfg)?;
    if !evaluation.is_empty() {
        model.metrics.evaluation = Some(evaluate(&model, &evaluation, cfg)?);
    }
    check_exit(ctl)?;

    let meta = UploadMeta {
        metrics: model.metrics.clone(),
        stream_digest: stream_digest.clone(),
        consumed_records,
    };
    let weights = save_weights(&model);
    let result = match with_backend_retry(ctl, || backend.upload_result(d, m, &meta, &weights)) {
        Ok(r) => r,
        // an earlier try went through but its response was lost
        Err(e) if e.code() == Some("already_uploaded") => {
            let job = backend.deployment(d).map_err(JobError::Backend)?;
            let id = job
                .job(m)
                .and_then(|j| j.result_id)
                .ok_or(JobError::Backend(e))?;
            backend.result(id).map_err(JobError::Backend)?
        }
        Err(e) => return Err(JobError::Backend(e)),
    };
    tracing::info!(
        deployment = d,
        model = m,
        result = result.id,
        "result uploaded"
    );
    Ok(JobOutcome {
        result,
        stream_digest,
        consumed_records,
    })
}
