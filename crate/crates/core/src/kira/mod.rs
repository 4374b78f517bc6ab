//! Self-organizing control plane: random node identities, contact gossip,
//! greedy XOR-descent forwarding over the backbone, and a small DHT for
//! well-known names.
//!
//! Every node keeps a prefix-bucketed table of contacts. A contact names a
//! remote node, the direct neighbor to forward through and a hop estimate.
//! Contacts spread by periodic gossip rounds in which every node advertises
//! itself (hop 0) and its table to each live neighbor. Forwarding at a node
//! picks the contact XOR-closest to the destination among those strictly
//! closer than the node itself and hands the message to that contact's next
//! hop.

mod dht;
mod id;
mod table;

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha8Rng;

pub use dht::{DhtRecord, DhtStore, DhtValue};
pub use id::{xor_distance, Distance, NodeId, ID_BITS, ID_BYTES};
pub use table::{decode_gossip, encode_gossip, Contact, GossipEntry, RoutingTable, TableDelta};

use crate::sim::{NodeRef, TopologyGraph, VirtualTime};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KiraConfig {
    /// Contacts per bucket.
    pub k: usize,
    pub replicas: usize,
    pub ttl_s: u32,
    pub gossip_period_ms: u64,
    /// Hop budget of a control message.
    pub max_hops: u32,
    /// Contacts unrefreshed for this many gossip periods are dropped.
    pub stale_periods: u64,
}

impl Default for KiraConfig {
    fn default() -> Self {
        Self {
            k: 64,
            replicas: 2,
            ttl_s: 30,
            gossip_period_ms: 500,
            max_hops: 64,
            stale_periods: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MessageKind {
    Hello,
    ContactGossip,
    DhtPut,
    DhtGet,
    DhtValue,
    App,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ControlMessage {
    pub src: NodeId,
    pub dst: NodeId,
    pub ttl: u32,
    pub kind: MessageKind,
    pub payload: Vec<u8>,
}

impl ControlMessage {
    pub fn app(src: NodeId, dst: NodeId, ttl: u32, payload: Vec<u8>) -> Self {
        Self {
            src,
            dst,
            ttl,
            kind: MessageKind::App,
            payload,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NextHop {
    Local,
    Forward(NodeRef),
    NoRoute,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DropReason {
    TtlExceeded,
    NoRoute,
    NodeDownMidPath,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::TtlExceeded => "ttl_exceeded",
            DropReason::NoRoute => "no_route",
            DropReason::NodeDownMidPath => "node_down_mid_path",
        }
    }
}

/// Forwarding decision recorded at one node of a path: the distance of the
/// chosen contact's target to the destination and that contact's hop count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Step {
    pub at: NodeRef,
    pub best: Distance,
    pub hops: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RouteOutcome {
    /// `path` lists the nodes after the source, ending at the destination.
    Delivered {
        path: Vec<NodeRef>,
        steps: Vec<Step>,
    },
    Dropped {
        reason: DropReason,
        path: Vec<NodeRef>,
    },
}

impl RouteOutcome {
    pub fn is_delivered(&self) -> bool {
        matches!(self, RouteOutcome::Delivered { .. })
    }

    pub fn path(&self) -> &[NodeRef] {
        match self {
            RouteOutcome::Delivered { path, .. } | RouteOutcome::Dropped { path, .. } => path,
        }
    }
}

/// Greedy progress: each forwarding decision strictly improves on the
/// previous one in (target distance, remaining hops to that target).
pub fn greedy_progress_holds(steps: &[Step]) -> bool {
    steps
        .windows(2)
        .all(|w| (w[1].best, w[1].hops) < (w[0].best, w[0].hops))
}

#[derive(Clone, Copy, Debug, thiserror::Error, PartialEq, Eq)]
pub enum DhtError {
    #[error("no replica reachable")]
    PutFailed,
    #[error("not found")]
    NotFound,
}

#[derive(Clone, Debug)]
struct Owned {
    record: DhtRecord,
    last_put: Option<VirtualTime>,
}

/// Control-plane state of one live node.
#[derive(Clone, Debug)]
pub struct KiraNode {
    pub id: NodeId,
    pub table: RoutingTable,
    pub store: DhtStore,
    owned: Vec<Owned>,
    pub malformed_gossip: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RoundReport {
    pub delta: TableDelta,
    pub malformed: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DhtActivity {
    Put {
        origin: NodeRef,
        key: String,
        result: Result<Vec<NodeId>, DhtError>,
    },
    Expired {
        node: NodeRef,
        count: usize,
    },
}

pub struct Backbone {
    config: KiraConfig,
    nodes: BTreeMap<NodeRef, KiraNode>,
    by_id: BTreeMap<NodeId, NodeRef>,
    used_ids: BTreeSet<NodeId>,
    rng: ChaCha8Rng,
    rounds: u64,
    last_round_changed: bool,
}

impl Backbone {
    /// Brings up every live node of `topo` with a fresh random identity.
    pub fn new(config: KiraConfig, topo: &TopologyGraph, rng: ChaCha8Rng) -> Self {
        let mut b = Self {
            config,
            nodes: BTreeMap::new(),
            by_id: BTreeMap::new(),
            used_ids: BTreeSet::new(),
            rng,
            rounds: 0,
            last_round_changed: true,
        };
        for n in topo.live_nodes().collect::<Vec<_>>() {
            let id = b.fresh_id();
            b.install(n, id);
        }
        b
    }

    /// Like [`Backbone::new`] but with pinned identities for the listed nodes.
    pub fn with_ids(
        config: KiraConfig,
        topo: &TopologyGraph,
        rng: ChaCha8Rng,
        ids: &BTreeMap<NodeRef, NodeId>,
    ) -> Self {
        let mut b = Self::new(config, topo, rng);
        for (n, id) in ids {
            if let Some(old) = b.nodes.remove(n) {
                b.by_id.remove(&old.id);
                b.used_ids.insert(*id);
                b.install(*n, *id);
            }
        }
        b
    }

    fn fresh_id(&mut self) -> NodeId {
        loop {
            let id = NodeId::random(&mut self.rng);
            if self.used_ids.insert(id) {
                return id;
            }
        }
    }

    fn install(&mut self, node: NodeRef, id: NodeId) {
        let table = RoutingTable::new(id, self.config.k, self.config.gossip_period_ms);
        self.nodes.insert(
            node,
            KiraNode {
                id,
                table,
                store: DhtStore::default(),
                owned: Vec::new(),
                malformed_gossip: 0,
            },
        );
        self.by_id.insert(id, node);
    }

    pub fn config(&self) -> &KiraConfig {
        &self.config
    }

    pub fn id_of(&self, node: NodeRef) -> Option<NodeId> {
        self.nodes.get(&node).map(|n| n.id)
    }

    pub fn node_of(&self, id: &NodeId) -> Option<NodeRef> {
        self.by_id.get(id).copied()
    }

    pub fn node(&self, node: NodeRef) -> Option<&KiraNode> {
        self.nodes.get(&node)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeRef, &KiraNode)> {
        self.nodes.iter().map(|(r, n)| (*r, n))
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    /// True once a gossip round completed without structural table changes.
    pub fn is_converged(&self) -> bool {
        self.rounds > 0 && !self.last_round_changed
    }

    /// Node (re)boot: a new identity and an empty table; live neighbors
    /// exchange hellos immediately.
    pub fn node_up(&mut self, topo: &TopologyGraph, node: NodeRef, now: VirtualTime) -> NodeId {
        if let Some(old) = self.nodes.remove(&node) {
            self.by_id.remove(&old.id);
        }
        let id = self.fresh_id();
        self.install(node, id);
        for nb in topo.live_neighbors(node).collect::<Vec<_>>() {
            self.hello_pair(node, nb, now);
        }
        self.last_round_changed = true;
        id
    }

    /// Node crash: its state is lost and adjacent nodes drop routes via it.
    pub fn node_down(&mut self, topo: &TopologyGraph, node: NodeRef) {
        if let Some(old) = self.nodes.remove(&node) {
            self.by_id.remove(&old.id);
        }
        for nb in topo.neighbors(node).collect::<Vec<_>>() {
            if let Some(n) = self.nodes.get_mut(&nb) {
                n.table.purge_next_hop(node);
            }
        }
        self.last_round_changed = true;
    }

    pub fn link_down(&mut self, a: NodeRef, b: NodeRef) {
        if let Some(n) = self.nodes.get_mut(&a) {
            n.table.purge_next_hop(b);
        }
        if let Some(n) = self.nodes.get_mut(&b) {
            n.table.purge_next_hop(a);
        }
        self.last_round_changed = true;
    }

    pub fn link_up(&mut self, topo: &TopologyGraph, a: NodeRef, b: NodeRef, now: VirtualTime) {
        if topo.is_link_usable(a, b) {
            self.hello_pair(a, b, now);
            self.last_round_changed = true;
        }
    }

    fn hello_pair(&mut self, a: NodeRef, b: NodeRef, now: VirtualTime) {
        let (Some(ida), Some(idb)) = (self.id_of(a), self.id_of(b)) else {
            return;
        };
        self.on_hello(a, idb, b, now);
        self.on_hello(b, ida, a, now);
    }

    pub fn on_hello(
        &mut self,
        node: NodeRef,
        neighbor: NodeId,
        via: NodeRef,
        now: VirtualTime,
    ) -> TableDelta {
        self.nodes
            .get_mut(&node)
            .map(|n| n.table.on_hello(neighbor, via, now))
            .unwrap_or_default()
    }

    /// CONTACT_GOSSIP messages `node` sends this round, one per live neighbor.
    pub fn gossip_messages(
        &self,
        topo: &TopologyGraph,
        node: NodeRef,
        now: VirtualTime,
    ) -> Vec<(NodeRef, ControlMessage)> {
        let Some(me) = self.nodes.get(&node) else {
            return Vec::new();
        };
        topo.live_neighbors(node)
            .filter_map(|nb| {
                let dst = self.nodes.get(&nb)?.id;
                let payload = encode_gossip(&me.table.advertisement_for(nb, now));
                Some((
                    nb,
                    ControlMessage {
                        src: me.id,
                        dst,
                        ttl: 1,
                        kind: MessageKind::ContactGossip,
                        payload,
                    },
                ))
            })
            .collect()
    }

    /// One synchronous gossip round: every live node advertises a snapshot
    /// of its table to each live neighbor, then all receivers merge and age
    /// out stale contacts.
    pub fn gossip_round(&mut self, topo: &TopologyGraph, now: VirtualTime) -> RoundReport {
        let mut inbox: BTreeMap<NodeRef, Vec<(NodeRef, Vec<u8>)>> = BTreeMap::new();
        for &n in self.nodes.keys() {
            for (nb, msg) in self.gossip_messages(topo, n, now) {
                inbox.entry(nb).or_default().push((n, msg.payload));
            }
        }
        let max_hops = self.config.max_hops;
        let stale_after = self.config.stale_after();
        let mut report = RoundReport::default();
        for (&n, state) in self.nodes.iter_mut() {
            let mut received = Vec::new();
            for (from, payload) in inbox.remove(&n).unwrap_or_default() {
                let (entries, bad) = decode_gossip(&payload, max_hops);
                state.malformed_gossip += bad;
                report.malformed += bad;
                received.push((from, entries));
            }
            report
                .delta
                .absorb(state.table.merge_round(&received, now, max_hops));
            report
                .delta
                .absorb(state.table.evict_stale(now, stale_after));
        }
        self.rounds += 1;
        self.last_round_changed = !report.delta.is_empty();
        report
    }

    pub fn next_hop(&self, node: NodeRef, dst: &NodeId) -> NextHop {
        let Some(me) = self.nodes.get(&node) else {
            return NextHop::NoRoute;
        };
        if me.id == *dst {
            return NextHop::Local;
        }
        match me.table.closest_toward(dst) {
            Some(c) => NextHop::Forward(c.next_hop),
            None => NextHop::NoRoute,
        }
    }

    /// Greedy forwarding of `msg` from its source over the current tables.
    pub fn route(&self, topo: &TopologyGraph, msg: &ControlMessage) -> RouteOutcome {
        let mut path = Vec::new();
        let mut steps = Vec::new();
        let Some(mut cur) = self.node_of(&msg.src) else {
            return RouteOutcome::Dropped {
                reason: DropReason::NoRoute,
                path,
            };
        };
        let mut ttl = msg.ttl;
        loop {
            let me = &self.nodes[&cur];
            if me.id == msg.dst {
                return RouteOutcome::Delivered { path, steps };
            }
            let Some(c) = me.table.closest_toward(&msg.dst) else {
                return RouteOutcome::Dropped {
                    reason: DropReason::NoRoute,
                    path,
                };
            };
            if ttl == 0 {
                return RouteOutcome::Dropped {
                    reason: DropReason::TtlExceeded,
                    path,
                };
            }
            ttl -= 1;
            steps.push(Step {
                at: cur,
                best: xor_distance(&c.target, &msg.dst),
                hops: c.hops,
            });
            let next = c.next_hop;
            if !topo.is_link_usable(cur, next) || !self.nodes.contains_key(&next) {
                return RouteOutcome::Dropped {
                    reason: DropReason::NodeDownMidPath,
                    path,
                };
            }
            path.push(next);
            cur = next;
        }
    }

    /// Iterative lookup toward `target`: at each node take the closest
    /// strictly-closer contact whose next hop is alive and unvisited.
    /// Returns the visited nodes, starting at `origin`.
    fn lookup(&self, topo: &TopologyGraph, origin: NodeRef, target: &NodeId) -> Vec<NodeRef> {
        let mut path = vec![origin];
        let mut visited = BTreeSet::from([origin]);
        let mut cur = origin;
        for _ in 0..self.config.max_hops {
            let me = &self.nodes[&cur];
            let next = me
                .table
                .closer_contacts(target)
                .into_iter()
                .map(|(_, c)| c.next_hop)
                .find(|nh| {
                    !visited.contains(nh)
                        && self.nodes.contains_key(nh)
                        && topo.is_link_usable(cur, *nh)
                });
            match next {
                Some(nh) => {
                    visited.insert(nh);
                    path.push(nh);
                    cur = nh;
                }
                None => break,
            }
        }
        path
    }

    /// The replica set for `key_id` as seen from `origin`: the node the
    /// lookup ends at, then its closest live contacts to the key.
    fn replica_set(&self, topo: &TopologyGraph, origin: NodeRef, key_id: &NodeId) -> Vec<NodeRef> {
        let path = self.lookup(topo, origin, key_id);
        let home = *path.last().expect("lookup path starts at origin");
        let mut set = vec![home];
        let mut others: Vec<_> = self.nodes[&home]
            .table
            .contacts()
            .filter(|c| topo.is_link_usable(home, c.next_hop))
            .filter_map(|c| {
                self.node_of(&c.target)
                    .map(|r| (xor_distance(&c.target, key_id), r))
            })
            .collect();
        others.sort();
        for (_, r) in others {
            if set.len() >= self.config.replicas {
                break;
            }
            if !set.contains(&r) {
                set.push(r);
            }
        }
        set
    }

    fn can_reach_dht(&self, origin: NodeRef) -> bool {
        self.nodes.get(&origin).is_some_and(|n| !n.table.is_empty())
    }

    /// Stores `record` at the replica set for its key.
    pub fn dht_put(
        &mut self,
        topo: &TopologyGraph,
        origin: NodeRef,
        record: &DhtRecord,
        now: VirtualTime,
    ) -> Result<Vec<NodeId>, DhtError> {
        if !self.can_reach_dht(origin) {
            return Err(DhtError::PutFailed);
        }
        let replicas = self.replica_set(topo, origin, &record.key_id());
        let mut stored = Vec::new();
        for r in replicas {
            let n = self.nodes.get_mut(&r).expect("replicas are live");
            n.store.put(record.clone(), now);
            stored.push(n.id);
        }
        Ok(stored)
    }

    /// Resolves `key`: highest-version unexpired record held by the first
    /// replica that answers.
    pub fn dht_get(
        &self,
        topo: &TopologyGraph,
        origin: NodeRef,
        key: &str,
        now: VirtualTime,
    ) -> Result<DhtRecord, DhtError> {
        if key.is_empty() || !self.nodes.contains_key(&origin) {
            return Err(DhtError::NotFound);
        }
        let key_id = NodeId::for_key(key.as_bytes());
        for r in self.replica_set(topo, origin, &key_id) {
            if let Some(rec) = self.nodes[&r].store.get(key, now) {
                return Ok(rec.clone());
            }
        }
        Err(DhtError::NotFound)
    }

    /// Puts `record` and keeps republishing it from `origin` every ttl/2.
    /// Ownership is kept even if the first put fails.
    pub fn publish(
        &mut self,
        topo: &TopologyGraph,
        origin: NodeRef,
        record: DhtRecord,
        now: VirtualTime,
    ) -> Result<Vec<NodeId>, DhtError> {
        let result = self.dht_put(topo, origin, &record, now);
        if let Some(n) = self.nodes.get_mut(&origin) {
            n.owned.retain(|o| o.record.key != record.key);
            n.owned.push(Owned {
                record,
                last_put: result.as_ref().ok().map(|_| now),
            });
        }
        result
    }

    /// Makes `origin` the owner of `record`, last stored at `stored_at`, so
    /// republish ticks keep it alive from then on.
    pub fn adopt(&mut self, origin: NodeRef, record: DhtRecord, stored_at: VirtualTime) {
        if let Some(n) = self.nodes.get_mut(&origin) {
            n.owned.retain(|o| o.record.key != record.key);
            n.owned.push(Owned {
                record,
                last_put: Some(stored_at),
            });
        }
    }

    /// DHT maintenance for every node: drop expired records, hand records
    /// one step closer when a closer node is known, and republish owned
    /// records that are due.
    pub fn republish_tick(&mut self, topo: &TopologyGraph, now: VirtualTime) -> Vec<DhtActivity> {
        let mut activity = Vec::new();
        let refs: Vec<NodeRef> = self.nodes.keys().copied().collect();
        for &r in &refs {
            let n = self.nodes.get_mut(&r).expect("listed above");
            let count = n.store.drop_expired(now);
            if count > 0 {
                activity.push(DhtActivity::Expired { node: r, count });
            }
        }
        // handoff keeps the original storage time so it never extends a lifetime
        for &r in &refs {
            let held: Vec<(DhtRecord, VirtualTime)> = self.nodes[&r].store.stored().collect();
            for (rec, stored_at) in held {
                let Some(c) = self.nodes[&r].table.closest_toward(&rec.key_id()).copied() else {
                    continue;
                };
                if !topo.is_link_usable(r, c.next_hop) {
                    continue;
                }
                if let Some(dst) = self.node_of(&c.target) {
                    self.nodes
                        .get_mut(&dst)
                        .expect("by_id is live")
                        .store
                        .put_at(rec, stored_at, now);
                }
            }
        }
        let half_ttl = |rec: &DhtRecord| u64::from(rec.ttl_s) * 500;
        for r in refs {
            let due: Vec<DhtRecord> = self.nodes[&r]
                .owned
                .iter()
                .filter(|o| {
                    o.last_put
                        .is_none_or(|t| now.saturating_sub(t) >= half_ttl(&o.record))
                })
                .map(|o| o.record.clone())
                .collect();
            for rec in due {
                let result = self.dht_put(topo, r, &rec, now);
                if result.is_ok() {
                    let n = self.nodes.get_mut(&r).expect("listed above");
                    if let Some(o) = n.owned.iter_mut().find(|o| o.record.key == rec.key) {
                        o.last_put = Some(now);
                    }
                }
                activity.push(DhtActivity::Put {
                    origin: r,
                    key: rec.key.clone(),
                    result,
                });
            }
        }
        activity
    }

    /// Checks bucket discipline and that next hops are live direct neighbors.
    pub fn check_tables(&self, topo: &TopologyGraph) -> Result<(), String> {
        for (r, n) in &self.nodes {
            n.table
                .check_discipline()
                .map_err(|e| format!("{r}: {e}"))?;
            for c in n.table.contacts() {
                if !topo.is_link_usable(*r, c.next_hop) {
                    return Err(format!(
                        "{r}: contact {} via dead neighbor {}",
                        c.target, c.next_hop
                    ));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
