use std::collections::BTreeMap;

use super::id::{xor_distance, Distance, NodeId, ID_BITS, ID_BYTES};
use super::KiraConfig;
use crate::sim::{NodeRef, VirtualTime};

/// Route to a remote node: which neighbor to hand traffic to and how far
/// the target is believed to be.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Contact {
    pub target: NodeId,
    pub next_hop: NodeRef,
    pub hops: u32,
    /// Timestamp the target stamped on the newest advertisement seen.
    pub freshness: VirtualTime,
    /// Local time the entry last received a newer advertisement.
    pub refreshed_at: VirtualTime,
}

/// One advertised contact as carried in CONTACT_GOSSIP payloads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GossipEntry {
    pub target: NodeId,
    pub hops: u8,
    pub freshness: VirtualTime,
}

const ENTRY_LEN: usize = ID_BYTES + 1 + 8;

pub fn encode_gossip(entries: &[GossipEntry]) -> Vec<u8> {
    let mut out = Vec::with_capacity(entries.len() * ENTRY_LEN);
    for e in entries {
        out.extend_from_slice(&e.target.0);
        out.push(e.hops);
        out.extend_from_slice(&e.freshness.to_be_bytes());
    }
    out
}

/// Decodes a gossip payload, returning well-formed entries and the number of
/// skipped malformed ones (truncated tails, hop counts over `max_hops`).
pub fn decode_gossip(bytes: &[u8], max_hops: u32) -> (Vec<GossipEntry>, usize) {
    let mut entries = Vec::with_capacity(bytes.len() / ENTRY_LEN);
    let mut malformed = 0;
    let mut chunks = bytes.chunks_exact(ENTRY_LEN);
    for c in &mut chunks {
        let mut target = [0u8; ID_BYTES];
        target.copy_from_slice(&c[..ID_BYTES]);
        let hops = c[ID_BYTES];
        let mut f = [0u8; 8];
        f.copy_from_slice(&c[ID_BYTES + 1..]);
        if u32::from(hops) > max_hops {
            malformed += 1;
            continue;
        }
        entries.push(GossipEntry {
            target: NodeId(target),
            hops,
            freshness: u64::from_be_bytes(f),
        });
    }
    if !chunks.remainder().is_empty() {
        malformed += 1;
    }
    (entries, malformed)
}

/// Structural table changes; freshness-only refreshes are not counted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TableDelta {
    pub added: usize,
    pub removed: usize,
    pub rerouted: usize,
}

impl TableDelta {
    pub fn is_empty(&self) -> bool {
        self.added == 0 && self.removed == 0 && self.rerouted == 0
    }

    pub fn absorb(&mut self, other: TableDelta) {
        self.added += other.added;
        self.removed += other.removed;
        self.rerouted += other.rerouted;
    }
}

#[derive(Clone, Copy, Debug)]
struct Offer {
    from: NodeRef,
    hops: u32,
    freshness: VirtualTime,
}

/// Prefix-bucketed contact table owned by one node.
#[derive(Clone, Debug)]
pub struct RoutingTable {
    owner: NodeId,
    k: usize,
    // an entry that missed a full gossip period is eviction-eligible
    grace: VirtualTime,
    buckets: Vec<Vec<Contact>>,
    // newest freshness ever accepted per target; stops looping stale routes
    // from being re-installed after they age out
    seen: BTreeMap<NodeId, VirtualTime>,
}

impl RoutingTable {
    pub fn new(owner: NodeId, k: usize, grace: VirtualTime) -> Self {
        Self {
            owner,
            k,
            grace,
            buckets: vec![Vec::new(); ID_BITS],
            seen: BTreeMap::new(),
        }
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    pub fn bucket_index(&self, target: &NodeId) -> usize {
        self.owner.shared_prefix_len(target)
    }

    pub fn buckets(&self) -> impl Iterator<Item = (usize, &[Contact])> {
        self.buckets
            .iter()
            .enumerate()
            .filter(|(_, b)| !b.is_empty())
            .map(|(i, b)| (i, b.as_slice()))
    }

    pub fn contacts(&self) -> impl Iterator<Item = &Contact> {
        self.buckets.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.buckets.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, target: &NodeId) -> Option<&Contact> {
        if *target == self.owner {
            return None;
        }
        self.buckets[self.bucket_index(target)]
            .iter()
            .find(|c| c.target == *target)
    }

    /// Contact XOR-closest to `dst` among those strictly closer than the owner.
    pub fn closest_toward(&self, dst: &NodeId) -> Option<&Contact> {
        let own = xor_distance(&self.owner, dst);
        self.contacts()
            .map(|c| (xor_distance(&c.target, dst), c))
            .filter(|(d, _)| *d < own)
            .min_by(|(da, a), (db, b)| {
                da.cmp(db)
                    .then(a.target.cmp(&b.target))
                    .then(a.next_hop.cmp(&b.next_hop))
            })
            .map(|(_, c)| c)
    }

    /// All contacts strictly closer to `dst` than the owner, closest first.
    pub fn closer_contacts(&self, dst: &NodeId) -> Vec<(Distance, Contact)> {
        let own = xor_distance(&self.owner, dst);
        let mut v: Vec<_> = self
            .contacts()
            .map(|c| (xor_distance(&c.target, dst), *c))
            .filter(|(d, _)| *d < own)
            .collect();
        v.sort_by(|(da, a), (db, b)| {
            da.cmp(db)
                .then(a.target.cmp(&b.target))
                .then(a.next_hop.cmp(&b.next_hop))
        });
        v
    }

    /// Installs a directly linked neighbor as a one-hop contact.
    pub fn on_hello(&mut self, neighbor: NodeId, via: NodeRef, now: VirtualTime) -> TableDelta {
        self.apply(
            neighbor,
            &[Offer {
                from: via,
                hops: 1,
                freshness: now,
            }],
            now,
        )
    }

    /// Contacts to advertise to `neighbor`, with split horizon: routes that
    /// go through `neighbor` are not advertised back to it.
    pub fn advertisement_for(&self, neighbor: NodeRef, now: VirtualTime) -> Vec<GossipEntry> {
        let mut out = vec![GossipEntry {
            target: self.owner,
            hops: 0,
            freshness: now,
        }];
        out.extend(
            self.contacts()
                .filter(|c| c.next_hop != neighbor)
                .map(|c| GossipEntry {
                    target: c.target,
                    hops: c.hops.min(u8::MAX as u32) as u8,
                    freshness: c.freshness,
                }),
        );
        out
    }

    /// Merges one round of gossip received from neighbors.
    pub fn merge_round(
        &mut self,
        received: &[(NodeRef, Vec<GossipEntry>)],
        now: VirtualTime,
        max_hops: u32,
    ) -> TableDelta {
        let mut offers: BTreeMap<NodeId, Vec<Offer>> = BTreeMap::new();
        for (from, entries) in received {
            for e in entries {
                let hops = u32::from(e.hops) + 1;
                if e.target == self.owner || hops > max_hops {
                    continue;
                }
                offers.entry(e.target).or_default().push(Offer {
                    from: *from,
                    hops,
                    freshness: e.freshness,
                });
            }
        }
        let mut delta = TableDelta::default();
        for (target, list) in offers {
            delta.absorb(self.apply(target, &list, now));
        }
        delta
    }

    fn apply(&mut self, target: NodeId, offers: &[Offer], now: VirtualTime) -> TableDelta {
        let mut delta = TableDelta::default();
        let bucket = self.bucket_index(&target);
        let pos = self.buckets[bucket].iter().position(|c| c.target == target);
        let current_hop = pos.map(|p| self.buckets[bucket][p].next_hop);

        // fewer hops, then fresher, then the neighbor already in use, then lower ref
        let best = offers
            .iter()
            .min_by(|a, b| {
                a.hops
                    .cmp(&b.hops)
                    .then(b.freshness.cmp(&a.freshness))
                    .then((Some(b.from) == current_hop).cmp(&(Some(a.from) == current_hop)))
                    .then(a.from.cmp(&b.from))
            })
            .copied();
        let Some(best) = best else { return delta };

        match pos {
            None => {
                if self.seen.get(&target).is_some_and(|&f| best.freshness <= f) {
                    return delta;
                }
                if self.insert(bucket, target, best, now) {
                    self.seen.insert(target, best.freshness);
                    delta.added += 1;
                }
            }
            Some(p) => {
                let entry = self.buckets[bucket][p];
                let better = (best.hops < entry.hops && best.freshness >= entry.freshness)
                    || (best.hops == entry.hops && best.freshness > entry.freshness);
                let chosen = if better && best.from != entry.next_hop {
                    Some(best)
                } else {
                    // distance-vector: the neighbor in use is authoritative
                    offers
                        .iter()
                        .find(|o| o.from == entry.next_hop && o.freshness >= entry.freshness)
                        .copied()
                };
                if let Some(o) = chosen {
                    let c = &mut self.buckets[bucket][p];
                    if c.next_hop != o.from || c.hops != o.hops {
                        delta.rerouted += 1;
                    }
                    c.next_hop = o.from;
                    c.hops = o.hops;
                    if o.freshness > c.freshness {
                        c.freshness = o.freshness;
                        c.refreshed_at = now;
                        self.seen.insert(target, o.freshness);
                    }
                }
            }
        }
        delta
    }

    fn insert(&mut self, bucket: usize, target: NodeId, offer: Offer, now: VirtualTime) -> bool {
        let contact = Contact {
            target,
            next_hop: offer.from,
            hops: offer.hops,
            freshness: offer.freshness,
            refreshed_at: now,
        };
        let (k, grace) = (self.k, self.grace);
        let slot = &mut self.buckets[bucket];
        if slot.len() < k {
            slot.push(contact);
            return true;
        }
        // evict the stalest entry, else the farthest one, if the newcomer beats it
        let (wi, worst) = slot
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| {
                b.refreshed_at
                    .cmp(&a.refreshed_at)
                    .then(a.hops.cmp(&b.hops))
                    .then(b.freshness.cmp(&a.freshness))
                    .then(a.target.cmp(&b.target))
            })
            .map(|(i, c)| (i, *c))
            .expect("bucket is full, hence nonempty");
        if now.saturating_sub(worst.refreshed_at) > grace || offer.hops < worst.hops {
            slot[wi] = contact;
            true
        } else {
            false
        }
    }

    /// Drops entries that have not been refreshed within `max_age`.
    pub fn evict_stale(&mut self, now: VirtualTime, max_age: VirtualTime) -> TableDelta {
        let mut removed = 0;
        for b in &mut self.buckets {
            let before = b.len();
            b.retain(|c| now.saturating_sub(c.refreshed_at) <= max_age);
            removed += before - b.len();
        }
        TableDelta {
            removed,
            ..Default::default()
        }
    }

    /// Drops every route whose next hop is `neighbor` (carrier loss).
    pub fn purge_next_hop(&mut self, neighbor: NodeRef) -> TableDelta {
        let mut removed = 0;
        for b in &mut self.buckets {
            let before = b.len();
            b.retain(|c| c.next_hop != neighbor);
            removed += before - b.len();
        }
        TableDelta {
            removed,
            ..Default::default()
        }
    }

    /// Checks the prefix-length rule and bucket capacity for every entry.
    pub fn check_discipline(&self) -> Result<(), String> {
        for (i, b) in self.buckets.iter().enumerate() {
            if b.len() > self.k {
                return Err(format!("bucket {i} holds {} > k={}", b.len(), self.k));
            }
            for c in b {
                let p = self.owner.shared_prefix_len(&c.target);
                if p != i {
                    return Err(format!(
                        "contact {} in bucket {i} shares {p} bits",
                        c.target
                    ));
                }
                if c.hops == 0 {
                    return Err(format!("contact {} has zero hops", c.target));
                }
            }
        }
        Ok(())
    }
}

impl KiraConfig {
    pub fn stale_after(&self) -> VirtualTime {
        self.gossip_period_ms * self.stale_periods
    }
}
