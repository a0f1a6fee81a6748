use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::BrokerError;

/// Default record age limit: seven days.
pub const DEFAULT_RETENTION_MS: i64 = 604_800_000;

/// One entry in a partition log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub offset: u64,
    pub timestamp_ms: i64,
    pub key: Option<Vec<u8>>,
    pub value: Vec<u8>,
}

impl Record {
    /// Bytes charged against `retention_bytes`.
    pub fn size_bytes(&self) -> u64 {
        (self.key.as_ref().map_or(0, Vec::len) + self.value.len()) as u64
    }
}

/// A record returned from a group poll, tagged with where it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedRecord {
    pub topic: String,
    pub partition: u32,
    pub record: Record,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetentionPolicy {
    #[serde(default)]
    pub retention_bytes: Option<u64>,
    #[serde(default = "default_retention_ms")]
    pub retention_ms: Option<i64>,
}

fn default_retention_ms() -> Option<i64> {
    Some(DEFAULT_RETENTION_MS)
}

impl Default for RetentionPolicy {
    fn default() -> Self {
        Self {
            retention_bytes: None,
            retention_ms: Some(DEFAULT_RETENTION_MS),
        }
    }
}

impl RetentionPolicy {
    pub fn with_ms(retention_ms: i64) -> Self {
        Self {
            retention_ms: Some(retention_ms),
            ..Self::default()
        }
    }

    pub fn with_bytes(retention_bytes: u64) -> Self {
        Self {
            retention_bytes: Some(retention_bytes),
            ..Self::default()
        }
    }

    pub(crate) fn validate(&self) -> Result<(), BrokerError> {
        if self.retention_bytes == Some(0) || self.retention_ms.is_some_and(|ms| ms <= 0) {
            return Err(BrokerError::InvalidRetention);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicMeta {
    pub name: String,
    pub partitions: u32,
    pub retention: RetentionPolicy,
}

/// Retained offset range of one partition: `[base, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionOffsets {
    pub partition: u32,
    pub base: u64,
    pub end: u64,
}

pub(crate) fn validate_topic_name(name: &str) -> Result<(), BrokerError> {
    let ok = !name.is_empty()
        && name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'));
    if ok {
        Ok(())
    } else {
        Err(BrokerError::InvalidName(name.to_string()))
    }
}

/// Address of a contiguous slice of one partition, written `topic:partition:offset:length`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OffsetSpec {
    pub topic: String,
    pub partition: u32,
    pub offset: u64,
    pub length: u64,
}

impl OffsetSpec {
    pub fn new(topic: impl Into<String>, partition: u32, offset: u64, length: u64) -> Self {
        Self {
            topic: topic.into(),
            partition,
            offset,
            length,
        }
    }

    /// One past the last addressed offset.
    pub fn end(&self) -> u64 {
        self.offset + self.length
    }
}

impl fmt::Display for OffsetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}:{}",
            self.topic, self.partition, self.offset, self.length
        )
    }
}

impl FromStr for OffsetSpec {
    type Err = BrokerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_offset_spec(s)
    }
}

pub fn parse_offset_spec(s: &str) -> Result<OffsetSpec, BrokerError> {
    let malformed = || BrokerError::MalformedOffsetSpec(s.to_string());
    let mut fields = s.rsplitn(4, ':');
    let length = fields.next().ok_or_else(malformed)?;
    let offset = fields.next().ok_or_else(malformed)?;
    let partition = fields.next().ok_or_else(malformed)?;
    let topic = fields.next().ok_or_else(malformed)?;
    if topic.is_empty() || topic.contains(':') {
        return Err(malformed());
    }
    let num = |f: &str| -> Result<u64, BrokerError> {
        if f.is_empty() || !f.bytes().all(|b| b.is_ascii_digit()) {
            return Err(malformed());
        }
        f.parse().map_err(|_| malformed())
    };
    Ok(OffsetSpec {
        topic: topic.to_string(),
        partition: u32::try_from(num(partition)?).map_err(|_| malformed())?,
        offset: num(offset)?,
        length: num(length)?,
    })
}

pub fn format_offset_spec(spec: &OffsetSpec) -> String {
    spec.to_string()
}

impl Serialize for OffsetSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for OffsetSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_offset_spec(&s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_single_slice_example() {
        let spec = parse_offset_spec("kafka-ml:0:0:70000").unwrap();
        assert_eq!(spec, OffsetSpec::new("kafka-ml", 0, 0, 70000));
    }

    #[test]
    fn empty_slice_round_trip() {
        let spec = OffsetSpec::new("t", 0, 0, 0);
        assert_eq!(format_offset_spec(&spec), "t:0:0:0");
        assert_eq!(parse_offset_spec("t:0:0:0").unwrap(), spec);
    }

    #[test]
    fn rejects_malformed() {
        for bad in [
            "a:b:c:d",
            "t:0:0",
            ":0:0:1",
            "t:0:-1:2",
            "a:b:0:0:1",
            "t:0:0:1x",
            "t::0:1",
        ] {
            assert!(
                matches!(
                    parse_offset_spec(bad),
                    Err(BrokerError::MalformedOffsetSpec(_))
                ),
                "{bad}"
            );
        }
    }

    #[test]
    fn topic_names() {
        assert!(validate_topic_name("kafka-ml.v1_x").is_ok());
        assert!(validate_topic_name("").is_err());
        assert!(validate_topic_name("a:b").is_err());
        assert!(validate_topic_name("a b").is_err());
    }

    proptest! {
        #[test]
        fn offset_spec_round_trips(
            topic in "[a-zA-Z0-9._-]{1,24}",
            partition in any::<u32>(),
            offset in any::<u64>(),
            length in any::<u64>(),
        ) {
            let spec = OffsetSpec::new(topic, partition, offset, length);
            let text = format_offset_spec(&spec);
            prop_assert_eq!(parse_offset_spec(&text).unwrap(), spec);
            prop_assert_eq!(format_offset_spec(&parse_offset_spec(&text).unwrap()), text);
        }
    }
}
