//! Inference replica: a consumer-group member that predicts every record on
//! its assigned partitions and publishes the predictions.
//!
//! Offsets are committed only after the prediction is produced, so a crash
//! between the two causes a redelivery rather than a loss.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{InputConfig, InputFormat};
use crate::controlplane::{BackendClient, BackendError, Id, TaskControl, TaskFailure};
use crate::logbroker::{BrokerError, ClientError, TaggedRecord};
use crate::mlengine::{load_weights, predict, Matrix, MlError, TrainedModel};
use crate::retry::Backoff;
use crate::trainworker::{with_backend_retry, BrokerSession};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicaContext {
    pub backend_url: String,
    pub broker_addr: String,
    pub inference_id: Id,
    pub replica_index: u32,
    pub result_id: Id,
    pub input_topic: String,
    pub output_topic: String,
    pub input_format: InputFormat,
    pub input_config: String,
    pub group_id: String,
    #[serde(default = "default_poll_ms")]
    pub poll_interval_ms: u64,
}

fn default_poll_ms() -> u64 {
    5
}

impl ReplicaContext {
    pub fn member_id(&self) -> String {
        format!("replica-{}", self.replica_index)
    }
}

pub fn group_id(inference_id: Id) -> String {
    format!("inference-{inference_id}")
}

/// Counters shared across restarts of one replica.
#[derive(Debug, Default)]
pub struct ReplicaStats {
    pub predictions: AtomicU64,
    pub decode_errors: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StatsSnapshot {
    pub predictions: u64,
    pub decode_errors: u64,
}

impl ReplicaStats {
    pub fn snapshot(&self) -> StatsSnapshot {
        StatsSnapshot {
            predictions: self.predictions.load(Ordering::Relaxed),
            decode_errors: self.decode_errors.load(Ordering::Relaxed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRef {
    pub topic: String,
    pub partition: u32,
    pub offset: u64,
}

/// Value of every record on the output topic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub values: Vec<f64>,
    pub input: InputRef,
}

#[derive(Debug, Error)]
pub enum InferError {
    #[error("loading model: {0}")]
    Load(#[from] BackendError),
    #[error(transparent)]
    Model(#[from] MlError),
    #[error("input config: {0}")]
    Config(String),
    #[error(transparent)]
    Broker(ClientError),
    #[error("killed")]
    Killed,
}

impl InferError {
    pub fn into_failure(self) -> TaskFailure {
        // replicas are always restarted, so there is nothing permanent
        TaskFailure::transient(self.to_string())
    }
}

/// Fetches the result's spec and weights from the backend.
pub fn load_model(
    backend: &BackendClient,
    ctl: &TaskControl,
    result_id: Id,
) -> Result<TrainedModel, InferError> {
    let result = with_backend_retry(ctl, || backend.result(result_id))?;
    let model = with_backend_retry(ctl, || backend.model(result.model_id))?;
    let blob = with_backend_retry(ctl, || backend.download(result_id))?;
    Ok(load_weights(&model.spec, &blob)?)
}

/// Predicts one record, or `None` when its value does not decode.
pub fn predict_record(
    model: &TrainedModel,
    input: &InputConfig,
    r: &TaggedRecord,
) -> Option<Prediction> {
    let sample = input.decode(&r.record.value, false).ok()?;
    let x = Matrix::from_vec(1, sample.features.values.len(), sample.features.values);
    let out = predict(model, &x).ok()?;
    Some(Prediction {
        values: out.row(0).to_vec(),
        input: InputRef {
            topic: r.topic.clone(),
            partition: r.partition,
            offset: r.record.offset,
        },
    })
}

/// Poll, decode, predict, produce, commit; until stopped or killed.
pub fn run_inference_loop(
    ctx: &ReplicaContext,
    ctl: &TaskControl,
    stats: &Arc<ReplicaStats>,
) -> Result<(), InferError> {
    let input = InputConfig::parse(ctx.input_format, &ctx.input_config)
        .map_err(|e| InferError::Config(e.to_string()))?;
    let model = load_model(&BackendClient::new(&ctx.backend_url), ctl, ctx.result_id)?;
    let member = ctx.member_id();
    let idle = Duration::from_millis(ctx.poll_interval_ms);
    let mut session = BrokerSession::new(&ctx.broker_addr);
    let join = |s: &mut BrokerSession| {
        s.call(ctl, |c| {
            c.join_group(&ctx.group_id, &member, &ctx.input_topic)
        })
        .map_err(InferError::Broker)
    };
    let assignment = join(&mut session)?;
    tracing::info!(group = %ctx.group_id, %member, ?assignment, "replica joined");
    let mut backoff = Backoff::default();

    loop {
        if ctl.stopped() {
            let _ = session.call(ctl, |c| c.leave_group(&ctx.group_id, &member));
            return Ok(());
        }
        if ctl.killed() {
            return Err(InferError::Killed);
        }
        let batch = match session.call(ctl, |c| c.poll(&ctx.group_id, &member, 64)) {
            Ok(b) => b,
            Err(ClientError::Broker(BrokerError::RebalanceInProgress)) => continue,
            Err(ClientError::Broker(BrokerError::UnknownMember(_))) => {
                join(&mut session)?;
                continue;
            }
            Err(e) if e.is_transient() && backoff.wait(ctl) => {
                join(&mut session)?;
                continue;
            }
            Err(e) => return Err(InferError::Broker(e)),
        };
        backoff = Backoff::default();
        if batch.is_empty() {
            ctl.sleep(idle);
            continue;
        }
        for r in &batch {
            match predict_record(&model, &input, r) {
                Some(p) => {
                    let value = serde_json::to_vec(&p).expect("prediction serializes");
                    session
                        .call(ctl, |c| c.produce(&ctx.output_topic, None, None, &value))
                        .map_err(InferError::Broker)?;
                    stats.predictions.fetch_add(1, Ordering::Relaxed);
                }
                None => {
                    stats.decode_errors.fetch_add(1, Ordering::Relaxed);
                    tracing::warn!(topic = %r.topic, partition = r.partition, offset = r.record.offset, "skipping undecodable record");
                }
            }
            // a kill here models a crash between produce and commit
            if ctl.killed() {
                return Err(InferError::Killed);
            }
            match session.call(ctl, |c| {
                c.commit(
                    &ctx.group_id,
                    &member,
                    &r.topic,
                    r.partition,
                    r.record.offset + 1,
                )
            }) {
                Ok(_) => {}
                // lost the partition in a rebalance; the new owner redelivers
                Err(ClientError::Broker(
                    BrokerError::NotAssigned { .. } | BrokerError::UnknownMember(_),
                )) => break,
                Err(e) => return Err(InferError::Broker(e)),
            }
        }
    }
}
