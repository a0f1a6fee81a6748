//! Producer side: turn a CSV into a training stream plus its control message,
//! and send or receive inference traffic.

mod dataset;
mod synthetic;

use std::io;
use std::time::{Duration, Instant};

use thiserror::Error;

pub use dataset::{
    ingest_csv, ingest_features, ingest_reader, parse_mapping, standardize, Dataset, Mappings,
    Standardization,
};
pub use synthetic::{gaussian_clusters, write_csv};

use crate::codec::{CodecError, InputConfig, InputFormat, Sample, Tensor};
use crate::controlplane::ControlMessage;
use crate::inferworker::Prediction;
use crate::logbroker::{BrokerClient, ClientError, OffsetSpec, RetentionPolicy};

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("column {0:?} not found in the CSV header")]
    MissingColumn(String),
    #[error("row {row}: value {value:?} in column {column:?} has no mapping")]
    UnmappedCategory {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: {message}")]
    MalformedRow { row: usize, message: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("row {row}: {source}")]
    Encode { row: usize, source: CodecError },
    #[error("input config: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("broker: {0}")]
    Broker(#[from] ClientError),
    #[error("stream incomplete after {sent} records, no control message sent: {source}")]
    Incomplete { sent: u64, source: ClientError },
    #[error("timed out after {0:?}")]
    Timeout(Duration),
}

/// Where and how to send a training stream.
#[derive(Debug, Clone)]
pub struct SendOptions {
    pub broker_addr: String,
    pub topic: String,
    pub control_topic: String,
    pub deployment_id: u64,
    pub format: InputFormat,
    pub config: String,
    pub validation_rate: f64,
    pub standardize: bool,
    /// Target partition of the data topic.
    pub partition: u32,
}

/// Collapses produce acknowledgements into maximal contiguous offset specs.
pub fn offset_runs(topic: &str, acks: &[(u32, u64)]) -> Vec<OffsetSpec> {
    let mut out: Vec<OffsetSpec> = Vec::new();
    for &(p, o) in acks {
        match out.last_mut() {
            Some(last) if last.partition == p && last.offset + last.length == o => last.length += 1,
            _ => out.push(OffsetSpec::new(topic, p, o, 1)),
        }
    }
    out
}

fn labeled_sample(features: &[f64], label: f64) -> Sample {
    Sample::new(
        Tensor::vector(features.to_vec()),
        Tensor::vector(vec![label]),
    )
}

/// Encodes, produces and announces `ds`. The control message goes out only
/// after every data record was acknowledged.
pub fn send_stream(ds: &Dataset, opts: &SendOptions) -> Result<ControlMessage, StreamError> {
    if ds.is_empty() {
        return Err(StreamError::EmptyDataset);
    }
    if !(0.0..1.0).contains(&opts.validation_rate) {
        return Err(StreamError::Config(format!(
            "validation rate {} outside [0, 1)",
            opts.validation_rate
        )));
    }
    let input = InputConfig::parse(opts.format, &opts.config)
        .map_err(|e| StreamError::Config(e.to_string()))?;
    let mut ds = ds.clone();
    if opts.standardize {
        standardize(&mut ds, opts.validation_rate);
    }
    // encode everything first so a bad row sends nothing
    let values = ds
        .features
        .iter()
        .zip(&ds.labels)
        .enumerate()
        .map(|(i, (f, l))| {
            input
                .encode(&labeled_sample(f, *l))
                .map_err(|source| StreamError::Encode { row: i + 2, source })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut client = BrokerClient::connect(opts.broker_addr.as_str())?;
    client.ensure_topic(&opts.topic, 1, RetentionPolicy::default())?;
    let mut acks = Vec::with_capacity(values.len());
    for v in &values {
        let ack = client
            .produce(&opts.topic, Some(opts.partition), None, v)
            .map_err(|source| StreamError::Incomplete {
                sent: acks.len() as u64,
                source,
            })?;
        acks.push(ack);
    }
    let msg = ControlMessage {
        deployment_id: opts.deployment_id,
        topics: offset_runs(&opts.topic, &acks),
        input_format: opts.format,
        input_config: input.to_json(),
        validation_rate: opts.validation_rate,
        total_msg: acks.len() as u64,
    };
    client.ensure_topic(&opts.control_topic, 1, RetentionPolicy::default())?;
    client.produce(&opts.control_topic, Some(0), None, &msg.to_bytes())?;
    Ok(msg)
}

/// Produces feature-only records for an inference deployment. Every row is
/// encoded before anything is sent.
pub fn infer_send(
    client: &mut BrokerClient,
    topic: &str,
    rows: &[Vec<f64>],
    input: &InputConfig,
) -> Result<Vec<(u32, u64)>, StreamError> {
    let values = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            input
                .encode(&Sample::unlabeled(Tensor::vector(r.clone())))
                .map_err(|source| StreamError::Encode { row: i + 1, source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut acks = Vec::with_capacity(values.len());
    for v in &values {
        acks.push(client.produce(topic, None, None, v)?);
    }
    Ok(acks)
}

/// Follows every partition of an output topic.
#[derive(Debug)]
pub struct OutputTail {
    client: BrokerClient,
    topic: String,
    positions: Vec<(u32, u64)>,
}

impl OutputTail {
    /// Starts at the current end of each partition, or at its base when
    /// `from_beginning`.
    pub fn open(broker_addr: &str, topic: &str, from_beginning: bool) -> Result<Self, StreamError> {
        let mut client = BrokerClient::connect(broker_addr)?;
        let positions = client
            .offsets(topic)?
            .into_iter()
            .map(|p| (p.partition, if from_beginning { p.base } else { p.end }))
            .collect();
        Ok(Self {
            client,
            topic: topic.to_string(),
            positions,
        })
    }

    /// Whatever arrived since the last call, without blocking.
    pub fn poll(&mut self) -> Result<Vec<Prediction>, StreamError> {
        let mut out = Vec::new();
        for (p, next) in &mut self.positions {
            for r in self.client.fetch(&self.topic, *p, *next, 500)? {
                *next = r.offset + 1;
                match serde_json::from_slice::<Prediction>(&r.value) {
                    Ok(pred) => out.push(pred),
                    Err(e) => tracing::warn!(offset = r.offset, "not a prediction: {e}"),
                }
            }
        }
        Ok(out)
    }

    /// Collects predictions until `n` arrived or `timeout` passed.
    pub fn recv(&mut self, n: usize, timeout: Duration) -> Result<Vec<Prediction>, StreamError> {
        let until = Instant::now() + timeout;
        let mut out = Vec::new();
        while out.len() < n {
            let got = self.poll()?;
            if got.is_empty() {
                if Instant::now() >= until {
                    return Err(StreamError::Timeout(timeout));
                }
                std::thread::sleep(Duration::from_millis(2));
            }
            out.extend(got);
        }
        Ok(out)
    }

    /// Waits for the prediction answering `(partition, offset)` of `input_topic`.
    pub fn wait_for(
        &mut self,
        input_topic: &str,
        partition: u32,
        offset: u64,
        timeout: Duration,
    ) -> Result<Prediction, StreamError> {
        let until = Instant::now() + timeout;
        loop {
            for p in self.poll()? {
                if p.input.topic == input_topic
                    && p.input.partition == partition
                    && p.input.offset == offset
                {
                    return Ok(p);
                }
            }
            if Instant::now() >= until {
                return Err(StreamError::Timeout(timeout));
            }
            std::thread::sleep(Duration::from_millis(1));
        }
    }
}

/// Sends one row and times how long its prediction takes to appear.
pub fn round_trip(
    client: &mut BrokerClient,
    tail: &mut OutputTail,
    input_topic: &str,
    row: &[f64],
    input: &InputConfig,
    timeout: Duration,
) -> Result<(Prediction, Duration), StreamError> {
    let start = Instant::now();
    let (p, o) = infer_send(client, input_topic, &[row.to_vec()], input)?[0];
    let pred = tail.wait_for(input_topic, p, o, timeout)?;
    Ok((pred, start.elapsed()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runs_merge_contiguous_acks() {
        let acks: Vec<(u32, u64)> = (0..275).map(|o| (0, o)).collect();
        let runs = offset_runs("t", &acks);
        assert_eq!(runs.len(), 1);
        assert_eq!(runs[0].to_string(), "t:0:0:275");

        let runs = offset_runs("t", &[(0, 4), (0, 5), (1, 0), (0, 9)]);
        let s: Vec<String> = runs.iter().map(ToString::to_string).collect();
        assert_eq!(s, vec!["t:0:4:2", "t:1:0:1", "t:0:9:1"]);
        assert_eq!(runs.iter().map(|r| r.length).sum::<u64>(), 4);
    }
}
