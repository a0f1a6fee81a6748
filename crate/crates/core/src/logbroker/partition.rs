use std::collections::VecDeque;

use super::record::{Record, RetentionPolicy};

/// Append-only record log for one partition.
///
/// Retention removes records from the head only, so the retained records are
/// always the contiguous offset range `[base, end)`.
#[derive(Debug, Default)]
pub(crate) struct PartitionLog {
    records: VecDeque<Record>,
    base: u64,
    size_bytes: u64,
}

impl PartitionLog {
    pub fn base(&self) -> u64 {
        self.base
    }

    pub fn end(&self) -> u64 {
        self.base + self.records.len() as u64
    }

    #[cfg(test)]
    pub fn size_bytes(&self) -> u64 {
        self.size_bytes
    }

    pub fn append(&mut self, timestamp_ms: i64, key: Option<Vec<u8>>, value: Vec<u8>) -> u64 {
        let offset = self.end();
        let record = Record {
            offset,
            timestamp_ms,
            key,
            value,
        };
        self.size_bytes += record.size_bytes();
        self.records.push_back(record);
        offset
    }

    /// Records at `offset..` up to `max`. `offset` must be `>= base`.
    pub fn read(&self, offset: u64, max: usize) -> Vec<Record> {
        debug_assert!(offset >= self.base);
        let start = (offset - self.base) as usize;
        self.records.iter().skip(start).take(max).cloned().collect()
    }

    /// Drops expired records from the head, then the oldest records until the
    /// partition fits its byte budget. Returns how many were removed.
    pub fn enforce(&mut self, policy: &RetentionPolicy, now_ms: i64) -> u64 {
        let mut purged = 0;
        if let Some(max_age) = policy.retention_ms {
            while let Some(head) = self.records.front() {
                if now_ms.saturating_sub(head.timestamp_ms) > max_age {
                    self.pop_head();
                    purged += 1;
                } else {
                    break;
                }
            }
        }
        if let Some(max_bytes) = policy.retention_bytes {
            while self.size_bytes > max_bytes && !self.records.is_empty() {
                self.pop_head();
                purged += 1;
            }
        }
        purged
    }

    fn pop_head(&mut self) {
        if let Some(r) = self.records.pop_front() {
            self.size_bytes -= r.size_bytes();
            self.base += 1;
        }
    }
}
