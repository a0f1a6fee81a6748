//! Embedded commit log: topics, partitions, retention, consumer groups and a
//! framed TCP protocol for remote clients.

mod broker;
mod client;
mod group;
mod partition;
mod record;
mod server;
pub mod wire;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use broker::Broker;
pub use client::{BrokerClient, ClientError};
pub use group::assign_round_robin;
pub use record::{
    format_offset_spec, parse_offset_spec, OffsetSpec, PartitionOffsets, Record, RetentionPolicy,
    TaggedRecord, TopicMeta, DEFAULT_RETENTION_MS,
};
pub use server::{BrokerServer, ServerConfig};

/// Default listen address of the broker.
pub const DEFAULT_BROKER_ADDR: &str = "127.0.0.1:9372";

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "code", content = "data", rename_all = "snake_case")]
pub enum BrokerError {
    #[error("topic {0} already exists")]
    DuplicateTopic(String),
    #[error("invalid topic name {0:?}")]
    InvalidName(String),
    #[error("partition count must be at least 1")]
    InvalidPartitionCount,
    #[error("retention limits must be positive")]
    InvalidRetention,
    #[error("unknown topic {0}")]
    UnknownTopic(String),
    #[error("partition {partition} out of range for topic {topic} with {partitions} partitions")]
    PartitionOutOfRange {
        topic: String,
        partition: u32,
        partitions: u32,
    },
    #[error(
        "offset {offset} of {topic}:{partition} was purged by retention (retained from {base})"
    )]
    OffsetPurged {
        topic: String,
        partition: u32,
        offset: u64,
        base: u64,
    },
    #[error("unknown group member {0}")]
    UnknownMember(String),
    #[error("group rebalance in progress, re-read assignment")]
    RebalanceInProgress,
    #[error("partition {partition} is not assigned to {member}")]
    NotAssigned { member: String, partition: u32 },
    #[error("commit offset {offset} is past the partition end {end}")]
    CommitBeyondEnd { offset: u64, end: u64 },
    #[error("group {group} is bound to topic {topic}")]
    GroupTopicMismatch { group: String, topic: String },
    #[error("malformed offset spec {0:?}")]
    MalformedOffsetSpec(String),
    #[error("bad request: {0}")]
    BadRequest(String),
}
