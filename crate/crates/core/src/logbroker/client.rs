use std::io::{self, BufReader, BufWriter};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

use super::wire::{self, Frame};
use super::{BrokerError, PartitionOffsets, Record, RetentionPolicy, TaggedRecord, TopicMeta};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Broker(#[from] BrokerError),
    #[error("broker connection: {0}")]
    Io(#[from] io::Error),
    #[error("protocol violation: {0}")]
    Protocol(String),
}

impl ClientError {
    pub fn broker(&self) -> Option<&BrokerError> {
        match self {
            ClientError::Broker(e) => Some(e),
            _ => None,
        }
    }

    /// Connection-level failures worth retrying with a fresh session.
    pub fn is_transient(&self) -> bool {
        matches!(self, ClientError::Io(_) | ClientError::Protocol(_))
    }
}

/// Blocking session with a remote broker. One request in flight at a time.
#[derive(Debug)]
pub struct BrokerClient {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    next_corr: u64,
}

impl BrokerClient {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(Duration::from_secs(30)))?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
            next_corr: 1,
        })
    }

    fn call(&mut self, mut header: Value, payload: Vec<u8>) -> Result<Frame, ClientError> {
        let corr = self.next_corr;
        self.next_corr += 1;
        header["corr"] = json!(corr);
        wire::write_frame(&mut self.writer, &Frame::with_payload(header, payload))?;
        let response = wire::read_frame(&mut self.reader)?
            .ok_or_else(|| io::Error::new(io::ErrorKind::UnexpectedEof, "broker closed session"))?;
        if response.header["corr"] != json!(corr) {
            return Err(ClientError::Protocol(format!(
                "correlation id mismatch: sent {corr}, got {}",
                response.header["corr"]
            )));
        }
        if response.header["ok"] != json!(true) {
            let detail = response
                .header
                .get("detail")
                .cloned()
                .unwrap_or(Value::Null);
            return Err(match serde_json::from_value::<BrokerError>(detail) {
                Ok(e) => ClientError::Broker(e),
                Err(_) => ClientError::Protocol(
                    response.header["error"]
                        .as_str()
                        .unwrap_or("unknown error")
                        .to_string(),
                ),
            });
        }
        Ok(response)
    }

    fn field<T: serde::de::DeserializeOwned>(frame: &Frame, name: &str) -> Result<T, ClientError> {
        serde_json::from_value(frame.header.get(name).cloned().unwrap_or(Value::Null))
            .map_err(|e| ClientError::Protocol(format!("field {name}: {e}")))
    }

    pub fn create_topic(
        &mut self,
        topic: &str,
        partitions: u32,
        retention: RetentionPolicy,
    ) -> Result<TopicMeta, ClientError> {
        let f = self.call(
            json!({"op": "create_topic", "topic": topic, "partitions": partitions, "retention": retention}),
            Vec::new(),
        )?;
        Self::field(&f, "topic")
    }

    /// Creates the topic unless it already exists.
    pub fn ensure_topic(
        &mut self,
        topic: &str,
        partitions: u32,
        retention: RetentionPolicy,
    ) -> Result<(), ClientError> {
        match self.create_topic(topic, partitions, retention) {
            Ok(_) | Err(ClientError::Broker(BrokerError::DuplicateTopic(_))) => Ok(()),
            Err(e) => Err(e),
        }
    }

    pub fn produce(
        &mut self,
        topic: &str,
        partition: Option<u32>,
        key: Option<&[u8]>,
        value: &[u8],
    ) -> Result<(u32, u64), ClientError> {
        let mut header = json!({"op": "produce", "topic": topic, "partition": partition});
        let mut payload = Vec::with_capacity(key.map_or(0, <[u8]>::len) + value.len());
        if let Some(k) = key {
            header["key_len"] = json!(k.len());
            payload.extend_from_slice(k);
        }
        payload.extend_from_slice(value);
        let f = self.call(header, payload)?;
        Ok((Self::field(&f, "partition")?, Self::field(&f, "offset")?))
    }

    pub fn fetch(
        &mut self,
        topic: &str,
        partition: u32,
        offset: u64,
        max_records: usize,
    ) -> Result<Vec<Record>, ClientError> {
        let f = self.call(
            json!({"op": "fetch", "topic": topic, "partition": partition, "offset": offset, "max_records": max_records}),
            Vec::new(),
        )?;
        let count: usize = Self::field(&f, "count")?;
        let (records, rest) = wire::decode_records(&f.payload, count)?;
        if !rest.is_empty() {
            return Err(ClientError::Protocol(
                "trailing bytes after record batch".into(),
            ));
        }
        Ok(records)
    }

    pub fn join_group(
        &mut self,
        group: &str,
        member: &str,
        topic: &str,
    ) -> Result<Vec<u32>, ClientError> {
        let f = self.call(
            json!({"op": "join", "group": group, "member": member, "topic": topic}),
            Vec::new(),
        )?;
        Self::field(&f, "assignment")
    }

    pub fn poll(
        &mut self,
        group: &str,
        member: &str,
        max_records: usize,
    ) -> Result<Vec<TaggedRecord>, ClientError> {
        let f = self.call(
            json!({"op": "poll", "group": group, "member": member, "max_records": max_records}),
            Vec::new(),
        )?;
        let batches: Vec<Value> = Self::field(&f, "batches")?;
        let mut rest = f.payload.as_slice();
        let mut out = Vec::new();
        for b in batches {
            let topic = b["topic"].as_str().unwrap_or_default().to_string();
            let partition = b["partition"].as_u64().unwrap_or(0) as u32;
            let count = b["count"].as_u64().unwrap_or(0) as usize;
            let (records, tail) = wire::decode_records(rest, count)?;
            rest = tail;
            out.extend(records.into_iter().map(|record| TaggedRecord {
                topic: topic.clone(),
                partition,
                record,
            }));
        }
        Ok(out)
    }

    pub fn commit(
        &mut self,
        group: &str,
        member: &str,
        topic: &str,
        partition: u32,
        offset: u64,
    ) -> Result<u64, ClientError> {
        let f = self.call(
            json!({"op": "commit", "group": group, "member": member, "topic": topic, "partition": partition, "offset": offset}),
            Vec::new(),
        )?;
        Self::field(&f, "committed")
    }

    pub fn leave_group(&mut self, group: &str, member: &str) -> Result<(), ClientError> {
        self.call(
            json!({"op": "leave", "group": group, "member": member}),
            Vec::new(),
        )?;
        Ok(())
    }

    pub fn offsets(&mut self, topic: &str) -> Result<Vec<PartitionOffsets>, ClientError> {
        let f = self.call(json!({"op": "offsets", "topic": topic}), Vec::new())?;
        Self::field(&f, "partitions")
    }
}
