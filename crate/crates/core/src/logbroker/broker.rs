use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use super::group::Group;
use super::partition::PartitionLog;
use super::record::{
    validate_topic_name, PartitionOffsets, Record, RetentionPolicy, TaggedRecord, TopicMeta,
};
use super::BrokerError;
use crate::clock::{Clock, SystemClock};

#[derive(Debug)]
struct Topic {
    meta: TopicMeta,
    partitions: Vec<Mutex<PartitionLog>>,
    next_round_robin: AtomicU32,
}

impl Topic {
    fn partition(&self, partition: u32) -> Result<&Mutex<PartitionLog>, BrokerError> {
        self.partitions
            .get(partition as usize)
            .ok_or(BrokerError::PartitionOutOfRange {
                topic: self.meta.name.clone(),
                partition,
                partitions: self.meta.partitions,
            })
    }
}

/// The single-node commit log.
///
/// Every partition has its own lock, so appends and reads on different
/// partitions proceed in parallel. Group coordination takes the group table
/// lock first and partition locks second.
#[derive(Debug)]
pub struct Broker {
    topics: RwLock<HashMap<String, Arc<Topic>>>,
    groups: Mutex<HashMap<String, Group>>,
    clock: Arc<dyn Clock>,
}

impl Default for Broker {
    fn default() -> Self {
        Self::new()
    }
}

impl Broker {
    pub fn new() -> Self {
        Self::with_clock(Arc::new(SystemClock))
    }

    pub fn with_clock(clock: Arc<dyn Clock>) -> Self {
        Self {
            topics: RwLock::new(HashMap::new()),
            groups: Mutex::new(HashMap::new()),
            clock,
        }
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    fn topic(&self, name: &str) -> Result<Arc<Topic>, BrokerError> {
        self.topics
            .read()
            .expect("topic table poisoned")
            .get(name)
            .cloned()
            .ok_or_else(|| BrokerError::UnknownTopic(name.to_string()))
    }

    pub fn create_topic(
        &self,
        name: &str,
        partitions: u32,
        retention: RetentionPolicy,
    ) -> Result<TopicMeta, BrokerError> {
        validate_topic_name(name)?;
        if partitions == 0 {
            return Err(BrokerError::InvalidPartitionCount);
        }
        retention.validate()?;
        let mut topics = self.topics.write().expect("topic table poisoned");
        if topics.contains_key(name) {
            return Err(BrokerError::DuplicateTopic(name.to_string()));
        }
        let meta = TopicMeta {
            name: name.to_string(),
            partitions,
            retention,
        };
        topics.insert(
            name.to_string(),
            Arc::new(Topic {
                meta: meta.clone(),
                partitions: (0..partitions).map(|_| Mutex::default()).collect(),
                next_round_robin: AtomicU32::new(0),
            }),
        );
        Ok(meta)
    }

    pub fn topic_meta(&self, name: &str) -> Result<TopicMeta, BrokerError> {
        Ok(self.topic(name)?.meta.clone())
    }

    pub fn offsets(&self, name: &str) -> Result<Vec<PartitionOffsets>, BrokerError> {
        let topic = self.topic(name)?;
        Ok(topic
            .partitions
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let log = p.lock().expect("partition poisoned");
                PartitionOffsets {
                    partition: i as u32,
                    base: log.base(),
                    end: log.end(),
                }
            })
            .collect())
    }

    /// Appends a record. Without an explicit partition, keyed records hash to
    /// a partition and unkeyed records go round-robin.
    pub fn produce(
        &self,
        topic: &str,
        partition: Option<u32>,
        key: Option<Vec<u8>>,
        value: Vec<u8>,
    ) -> Result<(u32, u64), BrokerError> {
        let t = self.topic(topic)?;
        let partition = match (partition, &key) {
            (Some(p), _) => p,
            (None, Some(k)) => (fnv1a(k) % t.meta.partitions as u64) as u32,
            (None, None) => t.next_round_robin.fetch_add(1, Ordering::Relaxed) % t.meta.partitions,
        };
        let now = self.clock.now_ms();
        let offset = t
            .partition(partition)?
            .lock()
            .expect("partition poisoned")
            .append(now, key, value);
        Ok((partition, offset))
    }

    /// Non-blocking read of up to `max_records` starting at `offset`.
    pub fn fetch(
        &self,
        topic: &str,
        partition: u32,
        offset: u64,
        max_records: usize,
    ) -> Result<Vec<Record>, BrokerError> {
        let t = self.topic(topic)?;
        let log = t.partition(partition)?.lock().expect("partition poisoned");
        if offset < log.base() {
            return Err(BrokerError::OffsetPurged {
                topic: topic.to_string(),
                partition,
                offset,
                base: log.base(),
            });
        }
        Ok(log.read(offset, max_records))
    }

    pub fn join_group(
        &self,
        group_id: &str,
        member_id: &str,
        topic: &str,
    ) -> Result<Vec<u32>, BrokerError> {
        let t = self.topic(topic)?;
        let mut groups = self.groups.lock().expect("group table poisoned");
        let group = groups
            .entry(group_id.to_string())
            .or_insert_with(|| Group::new(topic, t.meta.partitions));
        if group.topic != topic {
            return Err(BrokerError::GroupTopicMismatch {
                group: group_id.to_string(),
                topic: group.topic.clone(),
            });
        }
        Ok(group.join(member_id))
    }

    pub fn leave_group(&self, group_id: &str, member_id: &str) -> Result<(), BrokerError> {
        let mut groups = self.groups.lock().expect("group table poisoned");
        let group = groups
            .get_mut(group_id)
            .ok_or_else(|| BrokerError::UnknownMember(member_id.to_string()))?;
        group.leave(member_id)
    }

    /// Current partition → member map of a group, for inspection.
    pub fn group_assignment(&self, group_id: &str) -> BTreeMap<u32, String> {
        self.groups
            .lock()
            .expect("group table poisoned")
            .get(group_id)
            .map(|g| g.assignment().clone())
            .unwrap_or_default()
    }

    pub fn group_generation(&self, group_id: &str) -> u64 {
        self.groups
            .lock()
            .expect("group table poisoned")
            .get(group_id)
            .map_or(0, Group::generation)
    }

    pub fn committed(&self, group_id: &str, partition: u32) -> Option<u64> {
        self.groups
            .lock()
            .expect("group table poisoned")
            .get(group_id)
            .and_then(|g| g.committed(partition))
    }

    /// Records past the group's position on this member's partitions.
    pub fn poll(
        &self,
        group_id: &str,
        member_id: &str,
        max_records: usize,
    ) -> Result<Vec<TaggedRecord>, BrokerError> {
        let mut groups = self.groups.lock().expect("group table poisoned");
        let group = groups
            .get_mut(group_id)
            .ok_or_else(|| BrokerError::UnknownMember(member_id.to_string()))?;
        let assigned = group.begin_poll(member_id)?;
        let topic = self.topic(&group.topic)?;
        let mut out = Vec::new();
        for partition in assigned {
            let remaining = max_records.saturating_sub(out.len());
            if remaining == 0 {
                break;
            }
            let log = topic
                .partition(partition)?
                .lock()
                .expect("partition poisoned");
            let start = group.position(partition).max(log.base());
            let batch = log.read(start, remaining);
            group.set_position(partition, start + batch.len() as u64);
            out.extend(batch.into_iter().map(|record| TaggedRecord {
                topic: group.topic.clone(),
                partition,
                record,
            }));
        }
        Ok(out)
    }

    /// Records that the group has processed everything before `offset`.
    pub fn commit(
        &self,
        group_id: &str,
        member_id: &str,
        topic: &str,
        partition: u32,
        offset: u64,
    ) -> Result<u64, BrokerError> {
        let t = self.topic(topic)?;
        let end = t
            .partition(partition)?
            .lock()
            .expect("partition poisoned")
            .end();
        let mut groups = self.groups.lock().expect("group table poisoned");
        let group = groups
            .get_mut(group_id)
            .ok_or_else(|| BrokerError::UnknownMember(member_id.to_string()))?;
        if group.topic != topic {
            return Err(BrokerError::NotAssigned {
                member: member_id.to_string(),
                partition,
            });
        }
        group.commit(member_id, partition, offset, end)
    }

    /// Applies every topic's retention policy as of `now_ms`.
    pub fn enforce_retention(&self, now_ms: i64) -> BTreeMap<(String, u32), u64> {
        let topics: Vec<Arc<Topic>> = self
            .topics
            .read()
            .expect("topic table poisoned")
            .values()
            .cloned()
            .collect();
        let mut purged = BTreeMap::new();
        for t in topics {
            for (i, p) in t.partitions.iter().enumerate() {
                let n = p
                    .lock()
                    .expect("partition poisoned")
                    .enforce(&t.meta.retention, now_ms);
                purged.insert((t.meta.name.clone(), i as u32), n);
            }
        }
        purged
    }

    /// Retention pass against the broker's own clock.
    pub fn enforce_retention_now(&self) -> BTreeMap<(String, u32), u64> {
        self.enforce_retention(self.clock.now_ms())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}
