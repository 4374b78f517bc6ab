use std::collections::BTreeMap;

use serde::Serialize;

use super::id::NodeId;
use crate::sim::VirtualTime;

/// What a well-known name resolves to: a node address plus a service tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct DhtValue {
    pub node: NodeId,
    pub port: u16,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DhtRecord {
    pub key: String,
    pub value: DhtValue,
    pub ttl_s: u32,
    pub version: u64,
}

impl DhtRecord {
    pub fn key_id(&self) -> NodeId {
        NodeId::for_key(self.key.as_bytes())
    }
}

#[derive(Clone, Debug)]
struct Stored {
    record: DhtRecord,
    stored_at: VirtualTime,
}

impl Stored {
    fn expired(&self, now: VirtualTime) -> bool {
        now.saturating_sub(self.stored_at) > u64::from(self.record.ttl_s) * 1000
    }
}

/// Records held by one node as a replica.
#[derive(Clone, Debug, Default)]
pub struct DhtStore {
    records: BTreeMap<String, Stored>,
}

impl DhtStore {
    /// Stores `record` unless a higher version is already held. An equal
    /// version refreshes the storage time.
    pub fn put(&mut self, record: DhtRecord, now: VirtualTime) -> bool {
        match self.records.get(&record.key) {
            Some(s) if !s.expired(now) && s.record.version > record.version => false,
            _ => {
                self.records.insert(
                    record.key.clone(),
                    Stored {
                        record,
                        stored_at: now,
                    },
                );
                true
            }
        }
    }

    /// Stores a copy carrying its original storage time, replacing only
    /// older versions or older copies of the same version.
    pub fn put_at(&mut self, record: DhtRecord, stored_at: VirtualTime, now: VirtualTime) -> bool {
        match self.records.get(&record.key) {
            Some(s)
                if !s.expired(now)
                    && (s.record.version > record.version
                        || (s.record.version == record.version && s.stored_at >= stored_at)) =>
            {
                false
            }
            _ => {
                self.records
                    .insert(record.key.clone(), Stored { record, stored_at });
                true
            }
        }
    }

    pub fn stored(&self) -> impl Iterator<Item = (DhtRecord, VirtualTime)> + '_ {
        self.records
            .values()
            .map(|s| (s.record.clone(), s.stored_at))
    }

    pub fn get(&self, key: &str, now: VirtualTime) -> Option<&DhtRecord> {
        self.records
            .get(key)
            .filter(|s| !s.expired(now))
            .map(|s| &s.record)
    }

    pub fn drop_expired(&mut self, now: VirtualTime) -> usize {
        let before = self.records.len();
        self.records.retain(|_, s| !s.expired(now));
        before - self.records.len()
    }

    pub fn records(&self) -> impl Iterator<Item = &DhtRecord> {
        self.records.values().map(|s| &s.record)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}
