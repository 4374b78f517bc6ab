//! Scenario files.
//!
//! A scenario is TOML with the sections `nodes`, `links`, `attachments`,
//! `sm_host`, `events`, `seed` and `duration_ms`:
//!
//! ```toml
//! seed = 7
//! duration_ms = 60000
//! sm_host = 0
//! nodes = 12                 # count (0..12) or an explicit list of ids
//! links = [[0, 1, 2], [1, 2, 3]]   # a, b, latency_ms
//!
//! [[attachments]]
//! subnet = 1
//! node = 3
//! qos = "urllc"
//! requested_mhz = 40
//! priority = 0
//!
//! [[events]]
//! t = 5000
//! kind = "subnet_power_off"
//! target = 2                 # node or subnet id; [a, b] for link events
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Deserialize;

use super::event::{NetEvent, NetEventKind, Target};
use super::topology::{NodeRef, TopologyError, TopologyGraph};
use super::VirtualTime;
use crate::dsm::{Qos, SubnetId, SubnetRequirement, MAX_REQUEST_MHZ};
use crate::subnet::ProfileKind;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

impl From<TopologyError> for ScenarioError {
    fn from(e: TopologyError) -> Self {
        ScenarioError::Invalid(e.to_string())
    }
}

/// A sub-network attached to the backbone through its master node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Attachment {
    pub subnet: SubnetId,
    pub name: String,
    pub node: NodeRef,
    pub requirement: SubnetRequirement,
    pub profile: ProfileKind,
    pub initially_on: bool,
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub topology: TopologyGraph,
    pub attachments: BTreeMap<SubnetId, Attachment>,
    pub sm_host: NodeRef,
    pub events: Vec<NetEvent>,
    pub seed: u64,
    pub duration_ms: VirtualTime,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawNodes {
    Count(u32),
    List(Vec<u32>),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawTarget {
    Id(u32),
    Pair([u32; 2]),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    t: u64,
    kind: NetEventKind,
    target: RawTarget,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAttachment {
    subnet: u16,
    node: u32,
    #[serde(default)]
    name: Option<String>,
    qos: Qos,
    requested_mhz: u32,
    priority: u8,
    #[serde(default)]
    profile: Option<ProfileKind>,
    #[serde(default = "default_true")]
    initially_on: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    seed: u64,
    duration_ms: u64,
    sm_host: u32,
    nodes: RawNodes,
    #[serde(default)]
    links: Vec<(u32, u32, u64)>,
    #[serde(default)]
    attachments: Vec<RawAttachment>,
    #[serde(default)]
    events: Vec<RawEvent>,
}

pub fn load_scenario(source: &str) -> Result<Scenario, ScenarioError> {
    let raw: RawScenario =
        toml::from_str(source).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    build(raw)
}

pub fn load_scenario_file(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_scenario(&text)
}

fn build(raw: RawScenario) -> Result<Scenario, ScenarioError> {
    let node_ids: Vec<u32> = match raw.nodes {
        RawNodes::Count(n) => (0..n).collect(),
        RawNodes::List(v) => v,
    };
    if node_ids.is_empty() {
        return Err(ScenarioError::Invalid("empty topology".into()));
    }
    let mut topology = TopologyGraph::new();
    let mut seen = BTreeSet::new();
    for id in node_ids {
        if !seen.insert(id) {
            return Err(ScenarioError::Invalid(format!("duplicate node n{id}")));
        }
        topology.add_node(NodeRef(id));
    }
    for (a, b, lat) in raw.links {
        topology.add_link(NodeRef(a), NodeRef(b), lat)?;
    }

    let sm_host = NodeRef(raw.sm_host);
    if !topology.contains(sm_host) {
        return Err(ScenarioError::Invalid(format!(
            "sm_host {sm_host} is not a topology node"
        )));
    }

    let mut attachments = BTreeMap::new();
    for a in raw.attachments {
        let subnet = SubnetId(a.subnet);
        let node = NodeRef(a.node);
        if !topology.contains(node) {
            return Err(ScenarioError::Invalid(format!(
                "attachment {subnet} references missing node {node}"
            )));
        }
        let requirement = SubnetRequirement::new(subnet, a.qos, a.requested_mhz, a.priority)
            .map_err(|e| {
                ScenarioError::Invalid(format!(
                    "attachment {subnet}: {e} (allowed 1..={MAX_REQUEST_MHZ})"
                ))
            })?;
        let attachment = Attachment {
            subnet,
            name: a.name.unwrap_or_else(|| subnet.to_string()),
            node,
            requirement,
            profile: a.profile.unwrap_or(ProfileKind::for_qos(a.qos)),
            initially_on: a.initially_on,
        };
        if let Some(other) = attachments.values().find(|o: &&Attachment| o.node == node) {
            return Err(ScenarioError::Invalid(format!(
                "{subnet} and {} share master node {node}; one controller per node",
                other.subnet
            )));
        }
        if attachments.insert(subnet, attachment).is_some() {
            return Err(ScenarioError::Invalid(format!(
                "duplicate attachment for {subnet}"
            )));
        }
    }

    let mut events = Vec::with_capacity(raw.events.len());
    for (i, e) in raw.events.into_iter().enumerate() {
        let target = match (e.kind, e.target) {
            (NetEventKind::NodeUp | NetEventKind::NodeDown, RawTarget::Id(n)) => {
                let n = NodeRef(n);
                if !topology.contains(n) {
                    return Err(ScenarioError::Invalid(format!(
                        "events[{i}]: unknown node {n}"
                    )));
                }
                Target::Node(n)
            }
            (NetEventKind::LinkUp | NetEventKind::LinkDown, RawTarget::Pair([a, b])) => {
                let (a, b) = (NodeRef(a), NodeRef(b));
                if topology.link(a, b).is_none() {
                    return Err(ScenarioError::Invalid(format!(
                        "events[{i}]: unknown link {a}-{b}"
                    )));
                }
                Target::Link(a, b)
            }
            (NetEventKind::SubnetPowerOn | NetEventKind::SubnetPowerOff, RawTarget::Id(s)) => {
                let s = u16::try_from(s).map_err(|_| {
                    ScenarioError::Invalid(format!("events[{i}]: subnet id {s} out of range"))
                })?;
                let s = SubnetId(s);
                if !attachments.contains_key(&s) {
                    return Err(ScenarioError::Invalid(format!(
                        "events[{i}]: unknown subnet {s}"
                    )));
                }
                Target::Subnet(s)
            }
            (kind, _) => {
                return Err(ScenarioError::Invalid(format!(
                    "events[{i}]: target shape does not fit {kind:?}"
                )));
            }
        };
        events.push(NetEvent {
            time: e.t,
            kind: e.kind,
            target,
        });
    }
    events.sort_by_key(|e| (e.time, e.kind.rank(), e.target));

    Ok(Scenario {
        topology,
        attachments,
        sm_host,
        events,
        seed: raw.seed,
        duration_ms: raw.duration_ms,
    })
}
