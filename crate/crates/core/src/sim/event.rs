use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::topology::NodeRef;
use super::VirtualTime;
use crate::dsm::SubnetId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetEventKind {
    NodeUp,
    NodeDown,
    LinkUp,
    LinkDown,
    SubnetPowerOn,
    SubnetPowerOff,
}

impl NetEventKind {
    /// Tie-break rank among events scheduled for the same instant.
    pub fn rank(self) -> u16 {
        self as u16
    }

    pub fn name(self) -> &'static str {
        match self {
            NetEventKind::NodeUp => "NODE_UP",
            NetEventKind::NodeDown => "NODE_DOWN",
            NetEventKind::LinkUp => "LINK_UP",
            NetEventKind::LinkDown => "LINK_DOWN",
            NetEventKind::SubnetPowerOn => "SUBNET_POWER_ON",
            NetEventKind::SubnetPowerOff => "SUBNET_POWER_OFF",
        }
    }

    fn wants(self) -> TargetClass {
        match self {
            NetEventKind::NodeUp | NetEventKind::NodeDown => TargetClass::Node,
            NetEventKind::LinkUp | NetEventKind::LinkDown => TargetClass::Link,
            NetEventKind::SubnetPowerOn | NetEventKind::SubnetPowerOff => TargetClass::Subnet,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum TargetClass {
    Node,
    Link,
    Subnet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Target {
    Node(NodeRef),
    Link(NodeRef, NodeRef),
    Subnet(SubnetId),
}

impl Target {
    fn class(self) -> TargetClass {
        match self {
            Target::Node(_) => TargetClass::Node,
            Target::Link(..) => TargetClass::Link,
            Target::Subnet(_) => TargetClass::Subnet,
        }
    }

    /// Order-preserving packing used as the queue's target tie-break.
    fn order_key(self) -> u64 {
        match self {
            Target::Node(n) => n.0 as u64,
            Target::Link(a, b) => {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                ((lo.0 as u64) << 32) | hi.0 as u64
            }
            Target::Subnet(s) => s.0 as u64,
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Node(n) => write!(f, "{n}"),
            Target::Link(a, b) => write!(f, "{a}-{b}"),
            Target::Subnet(s) => write!(f, "{s}"),
        }
    }
}

/// Timestamped topology or power event driving a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetEvent {
    pub time: VirtualTime,
    pub kind: NetEventKind,
    pub target: Target,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("event kind {kind:?} cannot target {target}")]
pub struct TargetMismatch {
    pub kind: NetEventKind,
    pub target: Target,
}

impl NetEvent {
    pub fn new(
        time: VirtualTime,
        kind: NetEventKind,
        target: Target,
    ) -> Result<Self, TargetMismatch> {
        if kind.wants() != target.class() {
            return Err(TargetMismatch { kind, target });
        }
        Ok(Self { time, kind, target })
    }

    pub fn subnet_power(time: VirtualTime, subnet: SubnetId, on: bool) -> Self {
        let kind = if on {
            NetEventKind::SubnetPowerOn
        } else {
            NetEventKind::SubnetPowerOff
        };
        Self {
            time,
            kind,
            target: Target::Subnet(subnet),
        }
    }

    pub fn node_power(time: VirtualTime, node: NodeRef, on: bool) -> Self {
        let kind = if on {
            NetEventKind::NodeUp
        } else {
            NetEventKind::NodeDown
        };
        Self {
            time,
            kind,
            target: Target::Node(node),
        }
    }

    pub fn link_state(time: VirtualTime, a: NodeRef, b: NodeRef, up: bool) -> Self {
        let kind = if up {
            NetEventKind::LinkUp
        } else {
            NetEventKind::LinkDown
        };
        Self {
            time,
            kind,
            target: Target::Link(a, b),
        }
    }
}

/// Total order of queued work: time, then kind rank, then target, then
/// insertion sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct EventKey {
    pub time: VirtualTime,
    pub rank: u16,
    pub target: u64,
    pub seq: u64,
}

/// Internal work items are ranked after every scripted event kind.
pub const INTERNAL_RANK_BASE: u16 = 16;

impl EventKey {
    pub fn for_net_event(ev: &NetEvent, seq: u64) -> Self {
        Self {
            time: ev.time,
            rank: ev.kind.rank(),
            target: ev.target.order_key(),
            seq,
        }
    }
}

struct Entry<T> {
    key: EventKey,
    payload: T,
}

impl<T> PartialEq for Entry<T> {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}
impl<T> Eq for Entry<T> {}
impl<T> PartialOrd for Entry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T> Ord for Entry<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap
        other.key.cmp(&self.key)
    }
}

/// Min-queue keyed by [`EventKey`]; assigns insertion sequence numbers.
pub struct EventQueue<T> {
    heap: BinaryHeap<Entry<T>>,
    next_seq: u64,
}

impl<T> Default for EventQueue<T> {
    fn default() -> Self {
        Self {
            heap: BinaryHeap::new(),
            next_seq: 0,
        }
    }
}

impl<T> EventQueue<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: VirtualTime, rank: u16, target: u64, payload: T) -> EventKey {
        let key = EventKey {
            time,
            rank,
            target,
            seq: self.next_seq,
        };
        self.next_seq += 1;
        self.heap.push(Entry { key, payload });
        key
    }

    pub fn push_net(&mut self, ev: &NetEvent, payload: T) -> EventKey {
        let key = EventKey::for_net_event(ev, self.next_seq);
        self.next_seq += 1;
        self.heap.push(Entry { key, payload });
        key
    }

    pub fn peek_time(&self) -> Option<VirtualTime> {
        self.heap.peek().map(|e| e.key.time)
    }

    pub fn pop(&mut self) -> Option<(EventKey, T)> {
        self.heap.pop().map(|e| (e.key, e.payload))
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}
