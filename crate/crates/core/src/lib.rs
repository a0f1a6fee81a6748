//! Stream-native machine-learning pipelines.
//!
//! Data streams are appended to an embedded commit log ([`logbroker`]),
//! decoded by [`codec`], trained and served by [`mlengine`] models inside
//! supervised workers ([`trainworker`], [`inferworker`]) that the
//! [`controlplane`] launches and tracks. [`streamclient`] is the producer side.

pub mod clock;
pub mod codec;
pub mod controlplane;
pub mod inferworker;
pub mod logbroker;
pub mod mlengine;
mod retry;
pub mod streamclient;
pub mod trainworker;

pub use codec::{InputConfig, InputFormat, Sample};
pub use controlplane::ControlMessage;
pub use logbroker::{Broker, BrokerClient, BrokerError, OffsetSpec, Record, RetentionPolicy};
pub use mlengine::{ModelSpec, TrainedModel, TrainingConfig};
